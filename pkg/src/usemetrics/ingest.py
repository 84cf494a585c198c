"""Parsers for raw usage sources and session reconstruction.

Three input formats are supported: Apache Common/Combined Log Format lines,
OpenURL ContextObject XML documents, and COUNTER JR1 CSV reports.
"""

from __future__ import annotations

import csv
import gzip
import hashlib
import io
import re
import uuid
import xml.etree.ElementTree as ET
from collections import Counter
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from . import accel
from .core import FULL_TEXT, RequestType, UsageEvent, epoch_to_iso, iso_to_epoch
from .errors import (
    ColumnMismatch,
    InvalidRouteMap,
    MalformedLine,
    MissingReferent,
    UnsortedInput,
    XmlError,
)

# --------------------------------------------------------------------------
# Common Log Format

_MONTHS = {m: i for i, m in enumerate(("Jan", "Feb", "Mar", "Apr", "May", "Jun",
                                       "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"), start=1)}


@dataclass(frozen=True, slots=True)
class RawClfRecord:
    client_ip: str
    auth_user: str | None
    timestamp: int
    request_line: str
    status: int
    bytes: int
    referrer: str | None = None
    user_agent: str | None = None
    ident: str | None = None

    @property
    def method(self) -> str:
        return self.request_line.split()[0]

    @property
    def path(self) -> str:
        return self.request_line.split()[1]


def _clf_time(text: str, pos: int) -> int:
    # 10/Oct/2000:13:55:36 -0700
    m = re.fullmatch(r"(\d{2})/([A-Za-z]{3})/(\d{4}):(\d{2}):(\d{2}):(\d{2}) ([+-])(\d{2})(\d{2})", text)
    if not m or m.group(2) not in _MONTHS:
        raise MalformedLine(pos, f"bad timestamp {text!r}")
    day, mon, year, hh, mm, ss, sign, oh, om = m.groups()
    offset = timedelta(hours=int(oh), minutes=int(om))
    if sign == "-":
        offset = -offset
    try:
        dt = datetime(int(year), _MONTHS[mon], int(day), int(hh), int(mm), int(ss), tzinfo=timezone(offset))
    except ValueError as exc:
        raise MalformedLine(pos, str(exc)) from None
    return int(dt.timestamp())


class _Scanner:
    def __init__(self, line: str):
        self.s = line
        self.i = 0

    def skip_space(self):
        while self.i < len(self.s) and self.s[self.i] == " ":
            self.i += 1

    def at_end(self) -> bool:
        self.skip_space()
        return self.i >= len(self.s)

    def word(self, what: str) -> str:
        self.skip_space()
        start = self.i
        while self.i < len(self.s) and self.s[self.i] != " ":
            self.i += 1
        if start == self.i:
            raise MalformedLine(start, f"missing {what}")
        return self.s[start:self.i]

    def delimited(self, open_: str, close: str, what: str) -> str:
        self.skip_space()
        start = self.i
        if self.i >= len(self.s) or self.s[self.i] != open_:
            raise MalformedLine(start, f"expected {open_!r} opening {what}")
        self.i += 1
        out = []
        while self.i < len(self.s):
            c = self.s[self.i]
            if c == "\\" and close == '"' and self.i + 1 < len(self.s):
                out.append(self.s[self.i + 1])
                self.i += 2
                continue
            if c == close:
                self.i += 1
                if self.i < len(self.s) and self.s[self.i] != " ":
                    raise MalformedLine(self.i, f"unexpected character after {what}")
                return "".join(out)
            out.append(c)
            self.i += 1
        raise MalformedLine(start, f"unterminated {what}")


def _opt(v: str) -> str | None:
    return None if v in ("-", "") else v


def parse_clf(line: str) -> RawClfRecord:
    """Parse one Common (or Combined) Log Format line.

    Raises :class:`MalformedLine` with the character position of the fault.
    """
    sc = _Scanner(line.rstrip("\r\n"))
    ip = sc.word("client address")
    ident = sc.word("ident")
    user = sc.word("auth user")
    ts_pos = sc.i
    ts = _clf_time(sc.delimited("[", "]", "timestamp"), ts_pos + 1)
    req_pos = sc.i
    request = sc.delimited('"', '"', "request")
    if len(request.split()) != 3:
        raise MalformedLine(req_pos + 1, "request line must have method, path and protocol")
    status_pos = sc.i
    status_s = sc.word("status")
    if not status_s.isdigit() or not 100 <= int(status_s) <= 599:
        raise MalformedLine(status_pos + 1, f"bad status {status_s!r}")
    size_pos = sc.i
    size_s = sc.word("byte count")
    if size_s == "-":
        size = 0
    elif size_s.isdigit():
        size = int(size_s)
    else:
        raise MalformedLine(size_pos + 1, f"bad byte count {size_s!r}")
    referrer = agent = None
    if not sc.at_end():
        referrer = _opt(sc.delimited('"', '"', "referrer"))
        agent = _opt(sc.delimited('"', '"', "user agent"))
        if not sc.at_end():
            raise MalformedLine(sc.i, "trailing data")
    return RawClfRecord(ip, _opt(user), ts, request, int(status_s), size, referrer, agent, _opt(ident))


class ClfParse(NamedTuple):
    records: list[RawClfRecord]
    malformed: list[tuple[int, MalformedLine]]  # (1-based line number, error)


def read_clf(lines: Iterable[str]) -> ClfParse:
    """Parse many lines; malformed ones are skipped and reported, never fatal."""
    records, bad = [], []
    for n, line in enumerate(lines, start=1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        try:
            records.append(parse_clf(line))
        except MalformedLine as exc:
            bad.append((n, exc))
    return ClfParse(records, bad)


def open_text(path: str | Path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rt", encoding="utf-8", errors="replace")
    return open(path, encoding="utf-8", errors="replace")


def read_clf_file(path: str | Path) -> ClfParse:
    with open_text(path) as fh:
        return read_clf(fh)


# --------------------------------------------------------------------------
# route map: URL path pattern -> (request type, resource id)


class RouteMap:
    """Ordered path patterns, each with exactly one ``{id}`` placeholder.

    >>> rm = RouteMap({"/abs/{id}": "AbstractView"})
    >>> rm.match("/abs/1999ApJ...517..565P")
    (RequestType(label='AbstractView'), '1999ApJ...517..565P')
    """

    def __init__(self, routes: Mapping[str, str | RequestType]):
        if not routes:
            raise InvalidRouteMap("route map must contain at least one pattern")
        self.routes: list[tuple[str, re.Pattern, RequestType]] = []
        for pattern, rtype in routes.items():
            self.routes.append((pattern, self._compile(pattern), rtype if isinstance(rtype, RequestType) else RequestType.parse(rtype)))

    @staticmethod
    def _compile(pattern: str) -> re.Pattern:
        if not pattern.startswith("/"):
            raise InvalidRouteMap(f"pattern {pattern!r} must start with '/'")
        if pattern.count("{id}") != 1:
            raise InvalidRouteMap(f"pattern {pattern!r} must contain exactly one {{id}} placeholder")
        rest = pattern.replace("{id}", "")
        if "{" in rest or "}" in rest:
            raise InvalidRouteMap(f"pattern {pattern!r} has unbalanced or unknown braces")
        before, after = pattern.split("{id}")
        return re.compile(re.escape(before) + r"(?P<id>[^/?#]+)" + re.escape(after) + r"/?")

    def match(self, path: str) -> tuple[RequestType, str] | None:
        path = path.split("?", 1)[0].split("#", 1)[0]
        for _, rx, rtype in self.routes:
            m = rx.fullmatch(path)
            if m:
                return rtype, m.group("id")
        return None

    def to_dict(self) -> dict[str, str]:
        return {p: t.label for p, _, t in self.routes}


def client_key(rec: RawClfRecord, key_fields: Sequence[str]) -> tuple:
    return tuple(getattr(rec, f) or "" for f in key_fields)


def opaque_key(key: tuple) -> str:
    """Hash a client key tuple into an opaque, non-identifying id."""
    return hashlib.sha256("\x1f".join(key).encode()).hexdigest()[:16]


class ClfConversion(NamedTuple):
    events: list[UsageEvent]
    keys: list[tuple]
    dropped: Counter


def clf_to_events(
    records: Sequence[RawClfRecord],
    route_map: RouteMap | Mapping[str, str],
    *,
    key_fields: Sequence[str] = ("client_ip", "user_agent"),
    deny_agents: Sequence[str] = (),
    methods: Sequence[str] = ("GET",),
    statuses: Sequence[int] = (200,),
) -> ClfConversion:
    """Map CLF records to sessionless usage events.

    Records are dropped (and counted by reason) when the method or status is
    not counted as usage, the user agent matches the deny-list, or no route
    matches. ``len(events) + sum(dropped.values()) == len(records)``.
    The ``user_id`` of each event is an opaque hash of its key fields.
    """
    if not isinstance(route_map, RouteMap):
        route_map = RouteMap(route_map)
    deny = [re.compile(p, re.IGNORECASE) for p in deny_agents]
    events, keys = [], []
    dropped: Counter = Counter()
    for i, rec in enumerate(records):
        if rec.method not in methods:
            dropped["method"] += 1
            continue
        if rec.status not in statuses:
            dropped["status"] += 1
            continue
        if rec.user_agent and any(rx.search(rec.user_agent) for rx in deny):
            dropped["bot"] += 1
            continue
        hit = route_map.match(rec.path)
        if hit is None:
            dropped["unmatched"] += 1
            continue
        rtype, rid = hit
        key = client_key(rec, key_fields)
        eid = uuid.uuid5(uuid.NAMESPACE_URL, f"{i}|{rec.client_ip}|{rec.timestamp}|{rec.request_line}|{rec.user_agent}")
        events.append(UsageEvent(str(eid), "", opaque_key(key), rtype, rid, rec.timestamp))
        keys.append(key)
    return ClfConversion(events, keys, dropped)


# --------------------------------------------------------------------------
# sessionization


@dataclass(frozen=True)
class SessionizationPolicy:
    inactivity_timeout: int = 30 * 60
    key_fields: tuple[str, ...] = ("client_ip", "user_agent")
    max_session_length: int = 24 * 3600

    def __post_init__(self):
        if self.inactivity_timeout <= 0:
            raise ValueError("inactivity_timeout must be positive")
        if not self.key_fields:
            raise ValueError("key_fields must be non-empty")
        if self.max_session_length <= 0:
            raise ValueError("max_session_length must be positive")


def session_id(seed: int, index: int) -> str:
    return f"{seed & 0xFFFFFFFF:08x}-{index:010d}"


def sessionize(
    events: Sequence[UsageEvent],
    keys: Sequence[Sequence] | None = None,
    policy: SessionizationPolicy = SessionizationPolicy(),
    seed: int = 0,
) -> list[UsageEvent]:
    """Assign session ids by key tuple and inactivity gaps.

    ``keys`` gives one hashable key tuple per event; by default the event's
    ``user_id`` is the key. Events must be time-ordered within each key
    group. Sessions are numbered in order of their first event, so ids depend
    only on input order and ``seed``.
    """
    n = len(events)
    if keys is None:
        keys = [(e.user_id or "",) for e in events]
    if len(keys) != n:
        raise ValueError("keys must have one entry per event")
    codes: dict = {}
    group = np.fromiter((codes.setdefault(tuple(k), len(codes)) for k in keys), dtype=np.int64, count=n)
    ts = np.fromiter((e.timestamp for e in events), dtype=np.int64, count=n)
    sess, bad = accel.sessionize(group, ts, np.int64(policy.inactivity_timeout),
                                 np.int64(policy.max_session_length), np.int64(max(len(codes), 1)))
    if bad >= 0:
        raise UnsortedInput(f"timestamp regresses within key group at event {bad} ({events[bad].event_id})")
    ids = {}
    out = []
    for e, s in zip(events, sess.tolist()):
        sid = ids.get(s)
        if sid is None:
            sid = ids[s] = session_id(seed, s)
        out.append(replace(e, session_id=sid))
    return out


# --------------------------------------------------------------------------
# OpenURL ContextObjects

CTX_NS = "info:ofi/fmt:xml:xsd:ctx"
_SLOTS = ("referent", "referring-entity", "requester", "service-type", "resolver", "referrer")


@dataclass(frozen=True, slots=True)
class ContextObjectEvent:
    referent: str
    requester: str
    service_type: str
    referring_entity: str | None
    resolver: str
    referrer: str
    timestamp: int
    event_uuid: str

    def to_usage_event(self, session_id: str = "") -> UsageEvent:
        return UsageEvent(self.event_uuid, session_id, self.requester or None,
                          RequestType.parse(self.service_type), self.referent, self.timestamp)


class ContextObjectParse(NamedTuple):
    events: list[ContextObjectEvent]
    errors: list[tuple[int, Exception]]  # (0-based object index, error)


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _slot_value(obj: ET.Element, slot: str) -> str | None:
    for child in obj:
        if _local(child.tag) == slot:
            for sub in child.iter():
                if sub is not child and _local(sub.tag) == "identifier" and sub.text:
                    return sub.text.strip()
            return (child.text or "").strip()
    return None


def parse_context_objects(document: str) -> ContextObjectParse:
    """Parse a ContextObject XML document.

    Each ``context-object`` element yields one event in document order.
    Objects without a referent (or with a malformed identifier) are reported
    in ``errors`` and skipped; the rest are still returned.
    """
    try:
        root = ET.fromstring(document)
    except ET.ParseError as exc:
        raise XmlError(exc.position[0], str(exc)) from None
    objs = [root] if _local(root.tag) == "context-object" else [el for el in root.iter() if _local(el.tag) == "context-object"]
    events, errors = [], []
    for i, obj in enumerate(objs):
        try:
            referent = _slot_value(obj, "referent")
            if not referent:
                raise MissingReferent(f"context object {i} has no referent")
            ident = obj.get("identifier", "")
            if ident.startswith("urn:uuid:"):
                ident = ident[len("urn:uuid:"):]
            ident = str(uuid.UUID(ident))
            stamp = obj.get("timestamp")
            if not stamp:
                raise ValueError(f"context object {i} has no timestamp")
            events.append(ContextObjectEvent(
                referent,
                _slot_value(obj, "requester") or "",
                _slot_value(obj, "service-type") or "",
                _slot_value(obj, "referring-entity") or None,
                _slot_value(obj, "resolver") or "",
                _slot_value(obj, "referrer") or "",
                iso_to_epoch(stamp),
                ident,
            ))
        except (MissingReferent, ValueError) as exc:
            errors.append((i, exc))
    return ContextObjectParse(events, errors)


def format_context_objects(events: Iterable[ContextObjectEvent]) -> str:
    ET.register_namespace("ctx", CTX_NS)
    root = ET.Element(f"{{{CTX_NS}}}context-objects")
    for ev in events:
        obj = ET.SubElement(root, f"{{{CTX_NS}}}context-object",
                            {"timestamp": epoch_to_iso(ev.timestamp), "identifier": f"urn:uuid:{ev.event_uuid}"})
        values = (ev.referent, ev.referring_entity, ev.requester, ev.service_type, ev.resolver, ev.referrer)
        for slot, value in zip(_SLOTS, values):
            el = ET.SubElement(obj, f"{{{CTX_NS}}}{slot}")
            if value:
                ET.SubElement(el, f"{{{CTX_NS}}}identifier").text = value
    ET.indent(root)
    return ET.tostring(root, encoding="unicode", xml_declaration=True) + "\n"


# --------------------------------------------------------------------------
# COUNTER JR1

JR1_FIXED = ["Journal", "Publisher", "Platform", "Print ISSN", "Online ISSN"]
JR1_TOTAL = "YTD Total"
MONTH_ABBR = list(_MONTHS)


@dataclass(frozen=True)
class JournalMonthlyUsage:
    journal: str
    publisher: str
    platform: str
    print_issn: str
    online_issn: str
    year: int
    months: tuple[int, ...]
    ytd: int

    @property
    def computed_ytd(self) -> int:
        return sum(self.months)


@dataclass(frozen=True)
class Jr1Warning:
    kind: str  # YtdInconsistent | EmptyCell
    journal: str
    detail: str
    declared: int | None = None
    computed: int | None = None


class Jr1Parse(NamedTuple):
    rows: list[JournalMonthlyUsage]
    warnings: list[Jr1Warning]


def jr1_header(year: int) -> list[str]:
    return JR1_FIXED + [f"{m}-{year}" for m in MONTH_ABBR] + [JR1_TOTAL]


def _int_cell(value: str, journal: str, col: str) -> int:
    try:
        v = int(value)
    except ValueError:
        raise ColumnMismatch(f"{journal}: column {col!r} is not an integer: {value!r}") from None
    if v < 0:
        raise ColumnMismatch(f"{journal}: column {col!r} is negative")
    return v


def parse_counter_jr1(text: str) -> Jr1Parse:
    """Parse a JR1 table: five descriptive columns, 12 months, YTD total.

    Empty month cells count as 0 with an ``EmptyCell`` warning; a YTD that
    disagrees with the month sum yields a ``YtdInconsistent`` warning and the
    row is kept with its declared value.
    """
    rows = list(csv.reader(io.StringIO(text)))
    start = next((i for i, r in enumerate(rows) if r and r[0].strip() == "Journal"), None)
    if start is None:
        raise ColumnMismatch("no header row starting with 'Journal'")
    header = [h.strip() for h in rows[start]]
    if len(header) != 18 or header[:5] != JR1_FIXED:
        raise ColumnMismatch(f"expected 18 columns {JR1_FIXED} + 12 months + total, got {header}")
    m = re.fullmatch(r"[A-Za-z]{3}-(\d{4})", header[5])
    if not m:
        raise ColumnMismatch(f"cannot read the report year from column {header[5]!r}")
    year = int(m.group(1))
    out, warnings = [], []
    for r in rows[start + 1:]:
        if not r or not any(c.strip() for c in r):
            continue
        if len(r) != 18:
            raise ColumnMismatch(f"row {r[:1]} has {len(r)} columns, expected 18")
        journal = r[0]
        months = []
        for col, cell in zip(header[5:17], r[5:17]):
            if cell.strip() == "":
                warnings.append(Jr1Warning("EmptyCell", journal, f"{col} empty, treated as 0"))
                months.append(0)
            else:
                months.append(_int_cell(cell, journal, col))
        computed = sum(months)
        if r[17].strip() == "":
            warnings.append(Jr1Warning("EmptyCell", journal, "YTD empty, using month sum"))
            ytd = computed
        else:
            ytd = _int_cell(r[17], journal, JR1_TOTAL)
        if ytd != computed:
            warnings.append(Jr1Warning("YtdInconsistent", journal, f"declared {ytd}, computed {computed}", ytd, computed))
        out.append(JournalMonthlyUsage(journal, r[1], r[2], r[3], r[4], year, tuple(months), ytd))
    return Jr1Parse(out, warnings)


def format_counter_jr1(rows: Sequence[JournalMonthlyUsage], year: int | None = None) -> str:
    if year is None:
        if not rows:
            raise ValueError("year required for an empty report")
        year = rows[0].year
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(jr1_header(year))
    for r in rows:
        w.writerow([r.journal, r.publisher, r.platform, r.print_issn, r.online_issn, *r.months, r.ytd])
    return buf.getvalue()


# --------------------------------------------------------------------------
# event filters


@dataclass(frozen=True)
class MinMonthlyRequests:
    """Keep events of keys with at least ``n`` events in that calendar month."""

    n: int


@dataclass(frozen=True)
class FullTextOnly:
    pass


@dataclass(frozen=True)
class RequestTypeIn:
    types: frozenset[RequestType] = field(default_factory=frozenset)


def _month_of(ts: int) -> tuple[int, int]:
    d = datetime.fromtimestamp(ts, tz=timezone.utc)
    return d.year, d.month


def _user_key(e: UsageEvent) -> str:
    return e.user_id or e.session_id


def filter_events(events: Sequence[UsageEvent], *specs) -> list[UsageEvent]:
    """Keep events passing every filter (conjunction); order is preserved.

    Every predicate is evaluated against the full input, so the result does
    not depend on the order in which filters are listed.
    """
    preds = []
    for spec in specs:
        if isinstance(spec, MinMonthlyRequests):
            months = [_month_of(e.timestamp) for e in events]
            counts = Counter((_user_key(e), m) for e, m in zip(events, months))
            keep = [counts[(_user_key(e), m)] >= spec.n for e, m in zip(events, months)]
            preds.append(keep)
        elif isinstance(spec, FullTextOnly):
            preds.append([e.request_type == FULL_TEXT for e in events])
        elif isinstance(spec, RequestTypeIn):
            preds.append([e.request_type in spec.types for e in events])
        else:
            raise TypeError(f"unknown filter {spec!r}")
    if not preds:
        return list(events)
    return [e for e, *ok in zip(events, *preds) if all(ok)]
