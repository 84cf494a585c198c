"""Shared domain types and the canonical event record format.

Canonical record: one event per line, six tab-separated fields::

    event_id  session_id  user_id  request_type  resource_id  timestamp

Empty optional fields are written as ``-``. Timestamps are UTC ISO-8601 with
second precision and a trailing ``Z``; internally they are integer seconds
since the epoch.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import io
import json
import uuid
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

EMPTY = "-"
SECONDS_PER_DAY = 86400
SECONDS_PER_YEAR = 365.25 * SECONDS_PER_DAY


# --------------------------------------------------------------------------
# time helpers


def iso_to_epoch(text: str) -> int:
    """Parse an ISO-8601 instant into UTC epoch seconds.

    Naive values are taken as UTC. Sub-second precision is truncated.
    """
    s = text.strip()
    if s.endswith("Z"):
        s = s[:-1] + "+00:00"
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp() // 1)


def epoch_to_iso(ts: int) -> str:
    return datetime.fromtimestamp(int(ts), tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def epochs_to_iso(ts: np.ndarray) -> list[str]:
    """Vectorised :func:`epoch_to_iso`."""
    if len(ts) == 0:
        return []
    out = np.datetime_as_string(np.asarray(ts, dtype="int64").astype("datetime64[s]"), unit="s")
    return [s + "Z" for s in out.tolist()]


def isos_to_epoch(texts: Sequence[str]) -> np.ndarray:
    """Vectorised parse of canonical ``...Z`` timestamps; falls back per item."""
    if len(texts) == 0:
        return np.zeros(0, dtype=np.int64)
    try:
        stripped = [t[:-1] if t.endswith("Z") else t for t in texts]
        if any(len(t) != 19 for t in stripped):
            raise ValueError
        return np.array(stripped, dtype="datetime64[s]").astype(np.int64)
    except ValueError:
        return np.array([iso_to_epoch(t) for t in texts], dtype=np.int64)


def date_to_epoch(d: date) -> int:
    return int(datetime(d.year, d.month, d.day, tzinfo=timezone.utc).timestamp())


def epoch_to_date(ts: int) -> date:
    return datetime.fromtimestamp(int(ts), tz=timezone.utc).date()


def year_start(year: int) -> int:
    return date_to_epoch(date(year, 1, 1))


# --------------------------------------------------------------------------
# request types


@dataclass(frozen=True, slots=True)
class RequestType:
    """A request verb. Unknown verbs keep their raw label under variant ``Other``."""

    label: str

    KNOWN = ("AbstractView", "FullTextDownload", "TocBrowse", "Search", "CitationFollow")

    @property
    def variant(self) -> str:
        return self.label if self.label in self.KNOWN else "Other"

    @property
    def is_other(self) -> bool:
        return self.variant == "Other"

    @classmethod
    def parse(cls, text: str) -> "RequestType":
        return cls(text.strip())

    def __str__(self) -> str:
        return self.label


ABSTRACT_VIEW = RequestType("AbstractView")
FULL_TEXT = RequestType("FullTextDownload")
TOC_BROWSE = RequestType("TocBrowse")
SEARCH = RequestType("Search")
CITATION_FOLLOW = RequestType("CitationFollow")


# --------------------------------------------------------------------------
# events


@dataclass(frozen=True, slots=True)
class UsageEvent:
    event_id: str
    session_id: str
    user_id: str | None
    request_type: RequestType
    resource_id: str
    timestamp: int

    def sort_key(self) -> tuple[int, str]:
        return (self.timestamp, self.event_id)


def sort_events(events: Iterable[UsageEvent]) -> list[UsageEvent]:
    return sorted(events, key=UsageEvent.sort_key)


def _enc(value: str | None) -> str:
    return value if value else EMPTY


def _dec(value: str) -> str | None:
    return None if value == EMPTY else value


def format_event(e: UsageEvent) -> str:
    return "\t".join(
        (
            e.event_id,
            _enc(e.session_id),
            _enc(e.user_id),
            e.request_type.label,
            e.resource_id,
            epoch_to_iso(e.timestamp),
        )
    )


def parse_event(line: str) -> UsageEvent:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 6:
        raise ValueError(f"expected 6 tab-separated fields, got {len(parts)}")
    eid, sid, uid, rtype, rid, ts = parts
    return UsageEvent(eid, _dec(sid) or "", _dec(uid), RequestType.parse(rtype), rid, iso_to_epoch(ts))


def format_events(events: Sequence[UsageEvent]) -> str:
    if not events:
        return ""
    stamps = epochs_to_iso(np.fromiter((e.timestamp for e in events), dtype=np.int64, count=len(events)))
    lines = [
        f"{e.event_id}\t{e.session_id or EMPTY}\t{e.user_id or EMPTY}\t{e.request_type.label}\t{e.resource_id}\t{ts}"
        for e, ts in zip(events, stamps)
    ]
    return "\n".join(lines) + "\n"


def parse_events(text: str) -> list[UsageEvent]:
    rows = [line.split("\t") for line in text.splitlines() if line]
    for i, r in enumerate(rows):
        if len(r) != 6:
            raise ValueError(f"record {i + 1}: expected 6 tab-separated fields, got {len(r)}")
    stamps = isos_to_epoch([r[5] for r in rows]).tolist()
    types: dict[str, RequestType] = {}
    out = []
    for r, ts in zip(rows, stamps):
        rt = types.get(r[3])
        if rt is None:
            rt = types[r[3]] = RequestType.parse(r[3])
        out.append(
            UsageEvent(r[0], "" if r[1] == EMPTY else r[1], None if r[2] == EMPTY else r[2], rt, r[4], ts)
        )
    return out


def write_events(path: str | Path, events: Sequence[UsageEvent]) -> None:
    Path(path).write_text(format_events(events), encoding="utf-8", newline="\n")


def read_events(path: str | Path) -> list[UsageEvent]:
    return parse_events(Path(path).read_text(encoding="utf-8"))


def validate_event(e: UsageEvent, seen_ids: set[str] | None = None) -> list[str]:
    """Return the list of violated invariants; empty means valid.

    When ``seen_ids`` is given, it is used to detect duplicates and updated
    with this event's id.
    """
    problems: list[str] = []
    if not e.event_id:
        problems.append("missing event_id")
    else:
        try:
            uuid.UUID(e.event_id)
        except ValueError:
            problems.append("event_id is not a UUID")
        if seen_ids is not None:
            if e.event_id in seen_ids:
                problems.append(f"duplicate event_id {e.event_id}")
            seen_ids.add(e.event_id)
    if not e.resource_id or e.resource_id == EMPTY:
        problems.append("missing resource_id")
    if not e.request_type.label or e.request_type.label == EMPTY:
        problems.append("missing request_type")
    if not isinstance(e.timestamp, (int, np.integer)):
        problems.append("timestamp is not integer seconds")
    else:
        try:
            epoch_to_iso(e.timestamp)
        except (OverflowError, OSError, ValueError):
            problems.append("timestamp out of range")
    for name in ("event_id", "session_id", "user_id", "resource_id"):
        v = getattr(e, name)
        if v and ("\t" in v or "\n" in v):
            problems.append(f"{name} contains a tab or newline")
    if "\t" in e.request_type.label or "\n" in e.request_type.label:
        problems.append("request_type contains a tab or newline")
    if e.user_id == EMPTY or e.session_id == EMPTY:
        problems.append("key field uses the reserved placeholder '-'")
    return problems


def validate_events(events: Iterable[UsageEvent]) -> list[tuple[int, str]]:
    """Validate a batch; duplicate ids are reported on the second occurrence."""
    seen: set[str] = set()
    return [(i, p) for i, e in enumerate(events) for p in validate_event(e, seen)]


# --------------------------------------------------------------------------
# resources


@dataclass(frozen=True, slots=True)
class Resource:
    resource_id: str
    journal_id: str
    publication_date: date
    author_count: int = 1
    country: str | None = None
    title: str | None = None

    def __post_init__(self):
        if self.author_count < 1:
            raise ValueError(f"author_count must be >= 1 for {self.resource_id}")


RESOURCE_COLUMNS = ["resource_id", "journal_id", "publication_date", "author_count", "country", "title"]


def format_resources(resources: Iterable[Resource]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESOURCE_COLUMNS)
    for r in resources:
        w.writerow(
            [r.resource_id, r.journal_id, r.publication_date.isoformat(), r.author_count, r.country or "", r.title or ""]
        )
    return buf.getvalue()


def parse_resources(text: str) -> dict[str, Resource]:
    reader = csv.DictReader(io.StringIO(text))
    out = {}
    for row in reader:
        out[row["resource_id"]] = Resource(
            row["resource_id"],
            row["journal_id"],
            date.fromisoformat(row["publication_date"]),
            int(row.get("author_count") or 1),
            row.get("country") or None,
            row.get("title") or None,
        )
    return out


def read_resources(path: str | Path) -> dict[str, Resource]:
    return parse_resources(Path(path).read_text(encoding="utf-8"))


def write_resources(path: str | Path, resources: Iterable[Resource]) -> None:
    Path(path).write_text(format_resources(resources), encoding="utf-8", newline="\n")


def resource_warnings(events: Iterable[UsageEvent], resources: Mapping[str, Resource]) -> list[str]:
    """Warn about events that precede their resource's publication date (e-prints)."""
    out = []
    for e in events:
        r = resources.get(e.resource_id)
        if r is not None and e.timestamp < date_to_epoch(r.publication_date):
            out.append(f"event {e.event_id} precedes publication of {r.resource_id}")
    return out


# --------------------------------------------------------------------------
# aggregation parameters and statistics


class Normalization(str, enum.Enum):
    NONE = "None"
    PER_ARTICLE = "PerArticle"
    PER_AUTHOR = "PerAuthor"


@dataclass(frozen=True)
class ResourceFilter:
    journals: frozenset[str] | None = None
    published_from: date | None = None  # inclusive
    published_to: date | None = None  # inclusive
    ids: frozenset[str] | None = None

    def accepts(self, r: Resource) -> bool:
        if self.journals is not None and r.journal_id not in self.journals:
            return False
        if self.ids is not None and r.resource_id not in self.ids:
            return False
        if self.published_from is not None and r.publication_date < self.published_from:
            return False
        if self.published_to is not None and r.publication_date > self.published_to:
            return False
        return True

    def to_dict(self) -> dict:
        return {
            "journals": sorted(self.journals) if self.journals is not None else None,
            "published_from": self.published_from.isoformat() if self.published_from else None,
            "published_to": self.published_to.isoformat() if self.published_to else None,
            "ids": sorted(self.ids) if self.ids is not None else None,
        }

    @classmethod
    def from_dict(cls, d: Mapping | None) -> "ResourceFilter":
        d = d or {}
        return cls(
            frozenset(d["journals"]) if d.get("journals") is not None else None,
            date.fromisoformat(d["published_from"]) if d.get("published_from") else None,
            date.fromisoformat(d["published_to"]) if d.get("published_to") else None,
            frozenset(d["ids"]) if d.get("ids") is not None else None,
        )


@dataclass(frozen=True)
class UserFilter:
    min_monthly_requests: int | None = None
    full_text_only: bool = False

    def to_dict(self) -> dict:
        return {"min_monthly_requests": self.min_monthly_requests, "full_text_only": self.full_text_only}

    @classmethod
    def from_dict(cls, d: Mapping | None) -> "UserFilter":
        d = d or {}
        return cls(d.get("min_monthly_requests"), bool(d.get("full_text_only", False)))


@dataclass(frozen=True)
class AggregationParams:
    """Parameters controlling one aggregation.

    ``date_range`` is a half-open ``[start, end)`` pair of epoch seconds, or
    ``None`` for all time. ``weights`` maps request labels to per-event
    weights; missing labels weigh 1.0.
    """

    date_range: tuple[int, int] | None = None
    request_types: frozenset[RequestType] | None = None
    resource_filter: ResourceFilter = field(default_factory=ResourceFilter)
    user_filter: UserFilter = field(default_factory=UserFilter)
    normalization: Normalization = Normalization.NONE
    weights: Mapping[str, float] | None = None

    def __post_init__(self):
        if self.date_range is not None and self.date_range[0] > self.date_range[1]:
            raise ValueError("date_range start must not exceed end")

    def weight(self, rt: RequestType) -> float:
        if not self.weights:
            return 1.0
        return float(self.weights.get(rt.label, 1.0))

    def to_dict(self) -> dict:
        return {
            "date_range": (
                [epoch_to_iso(self.date_range[0]), epoch_to_iso(self.date_range[1])] if self.date_range else None
            ),
            "request_types": sorted(t.label for t in self.request_types) if self.request_types is not None else None,
            "resource_filter": self.resource_filter.to_dict(),
            "user_filter": self.user_filter.to_dict(),
            "normalization": self.normalization.value,
            "weights": dict(sorted(self.weights.items())) if self.weights else None,
        }

    @classmethod
    def from_dict(cls, d: Mapping | None) -> "AggregationParams":
        d = d or {}
        dr = d.get("date_range")
        rts = d.get("request_types")
        return cls(
            (iso_to_epoch(dr[0]), iso_to_epoch(dr[1])) if dr else None,
            frozenset(RequestType.parse(t) for t in rts) if rts is not None else None,
            ResourceFilter.from_dict(d.get("resource_filter")),
            UserFilter.from_dict(d.get("user_filter")),
            Normalization(d.get("normalization", "None")),
            {k: float(v) for k, v in d["weights"].items()} if d.get("weights") else None,
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "AggregationParams":
        return cls.from_dict(json.loads(text))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


@dataclass(frozen=True, slots=True)
class Referent:
    kind: str  # resource | journal | author | country
    key: str

    KINDS = ("resource", "journal", "author", "country")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown referent kind {self.kind!r}")

    def __str__(self) -> str:
        return f"{self.kind}:{self.key}"

    @classmethod
    def parse(cls, text: str) -> "Referent":
        kind, _, key = text.partition(":")
        return cls(kind, key)


@dataclass(frozen=True)
class UsageStatistic:
    """An aggregate value. ``value`` is ``None`` when undefined (see ``note``)."""

    referent: Referent
    value: float | None
    params: AggregationParams
    produced_at: int
    note: str | None = None

    def __post_init__(self):
        if self.value is not None and not self.value >= 0:
            raise ValueError("statistic value must be non-negative")

    def to_line(self) -> str:
        v = "NA" if self.value is None else repr(float(self.value))
        return f"{self.referent}\t{v}\t{self.params.digest()}"
