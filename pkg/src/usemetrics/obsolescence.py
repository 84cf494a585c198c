"""Multi-exponential usage obsolescence models.

Per-article usage rate as a function of article age ``t`` (years) is a sum of
exponential modes plus a constant::

    R(t) = H + I exp(-k_I t) + C exp(-k_C t) + N exp(-k_N t)

The modes are historical (H, constant), interesting-article (I), current (C)
and new-article browsing (N). An optional learner mode adds ``s0`` times the
article's cumulative citation count. Citations are related to use through a
latency ramp: ``c (R_C + R_I) (1 - exp(-k_d t))``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import least_squares, nnls

from .core import SECONDS_PER_YEAR, Resource, UsageEvent, date_to_epoch
from .errors import (
    EmptyDateRange,
    InsufficientData,
    MissingComponent,
    MissingPublicationDate,
    MissingS0,
    NegativeAge,
)

LABELS = ("H", "I", "C", "N", "S")
# exponential labels ordered from slowest to fastest decay
_EXP_LABELS = ("I", "C", "N")
# starting decay scales for the exponentials, fastest first
DECAY_LADDER = (16.0, 0.4, 0.065)


@dataclass(frozen=True, slots=True)
class Component:
    label: str
    amplitude: float
    decay: float


@dataclass(frozen=True)
class ObsolescenceModel:
    components: tuple[Component, ...]
    s0: float | None = None

    def __post_init__(self):
        labels = [c.label for c in self.components]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate component labels {labels}")
        for c in self.components:
            if c.label not in LABELS:
                raise ValueError(f"unknown component label {c.label!r}")
            if not (math.isfinite(c.amplitude) and math.isfinite(c.decay)):
                raise ValueError(f"component {c.label} is not finite")
            if c.amplitude < 0 or c.decay < 0:
                raise ValueError(f"component {c.label} must have non-negative amplitude and decay")
            if c.label == "H" and c.decay != 0:
                raise ValueError("the H component is constant (decay 0)")
        if self.s0 is not None and not (math.isfinite(self.s0) and self.s0 >= 0):
            raise ValueError("s0 must be finite and non-negative")

    def component(self, label: str) -> Component | None:
        return next((c for c in self.components if c.label == label), None)

    @property
    def amplitudes(self) -> dict[str, float]:
        return {c.label: c.amplitude for c in self.components}

    @property
    def decays(self) -> dict[str, float]:
        return {c.label: c.decay for c in self.components}

    def to_dict(self) -> dict:
        return {
            "components": [{"label": c.label, "amplitude": c.amplitude, "decay": c.decay} for c in self.components],
            "s0": self.s0,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ObsolescenceModel":
        return cls(
            tuple(Component(c["label"], float(c["amplitude"]), float(c["decay"])) for c in d["components"]),
            None if d.get("s0") is None else float(d["s0"]),
        )


@dataclass(frozen=True)
class CitationModelParams:
    c: float
    k_d: float
    s0: float | None = None

    def __post_init__(self):
        if self.c < 0:
            raise ValueError("c must be non-negative")
        if not self.k_d > 0:
            raise ValueError("k_d must be positive")

    def to_dict(self) -> dict:
        # the latency ramp rises from 0 to 1; record the sign convention in output
        return {"c": self.c, "k_d": self.k_d, "s0": self.s0, "ramp": "1 - exp(-k_d * t)"}


def default_model() -> ObsolescenceModel:
    """The four-mode model fitted to 2001 astrophysics usage."""
    return ObsolescenceModel(
        (
            Component("H", 1.5, 0.0),
            Component("I", 45.0, 0.065),
            Component("C", 110.0, 0.4),
            Component("N", 1600.0, 16.0),
        )
    )


def _ages(t) -> np.ndarray:
    a = np.asarray(t, dtype=np.float64)
    if np.any(a < 0):
        raise NegativeAge("article age must be non-negative")
    return a


def _mode_sum(components: Sequence[Component], a: np.ndarray):
    out = np.zeros_like(a)
    for c in components:
        if c.label == "S":
            continue
        out = out + c.amplitude * np.exp(-c.decay * a)
    return out


def eval_model(m: ObsolescenceModel, t):
    """Usage rate (uses/article/year) at age ``t``; the S mode is excluded."""
    a = _ages(t)
    out = _mode_sum(m.components, a)
    return float(out) if out.ndim == 0 else out


def eval_extended(m: ObsolescenceModel, cumulative_citations, t, s0: float | None = None):
    """:func:`eval_model` plus the learner term ``s0 * cumulative_citations``.

    ``cumulative_citations`` is the article's citation count accumulated from
    publication to age ``t`` (scalar, or an array matching ``t``).
    """
    s0 = m.s0 if s0 is None else s0
    if s0 is None:
        raise MissingS0("the S component needs s0")
    cites = np.asarray(cumulative_citations, dtype=np.float64)
    if np.any(cites < 0):
        raise ValueError("cumulative citations must be non-negative")
    base = np.asarray(eval_model(m, t))
    out = base + s0 * cites
    return float(out) if out.ndim == 0 else out


def cumulative_at(ages: Sequence[float], cumulative: Sequence[float], t):
    """Step-interpolate a cumulative citation history at age(s) ``t``."""
    ages = np.asarray(ages, dtype=np.float64)
    cum = np.asarray(cumulative, dtype=np.float64)
    if np.any(np.diff(ages) <= 0):
        raise ValueError("history ages must be strictly increasing")
    if np.any(np.diff(cum) < 0):
        raise ValueError("citation history must be non-decreasing")
    idx = np.searchsorted(ages, np.asarray(t, dtype=np.float64), side="right") - 1
    out = np.where(idx >= 0, cum[np.clip(idx, 0, None)], 0.0)
    return float(out) if out.ndim == 0 else out


def citation_rate_model(m: ObsolescenceModel, p: CitationModelParams, t):
    """Citation rate ``c (R_C + R_I)(t) (1 - exp(-k_d t))``."""
    ci = [m.component(x) for x in ("C", "I")]
    if any(c is None for c in ci):
        raise MissingComponent("citation model needs both C and I components")
    a = _ages(t)
    out = p.c * _mode_sum(ci, a) * (1.0 - np.exp(-p.k_d * a))
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# ageing curves


@dataclass(frozen=True)
class AgeingCurve:
    ages: np.ndarray
    rates: np.ndarray
    article_counts: np.ndarray

    def __post_init__(self):
        ages = np.asarray(self.ages, dtype=np.float64)
        rates = np.asarray(self.rates, dtype=np.float64)
        counts = np.asarray(self.article_counts, dtype=np.int64)
        object.__setattr__(self, "ages", ages)
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "article_counts", counts)
        if not (ages.shape == rates.shape == counts.shape and ages.ndim == 1):
            raise ValueError("ages, rates and article_counts must be equal-length vectors")
        if np.any(np.diff(ages) <= 0):
            raise ValueError("ages must be strictly increasing")
        if np.any(rates < 0):
            raise ValueError("rates must be non-negative")

    def __len__(self) -> int:
        return len(self.ages)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["age", "rate", "article_count"])
        for a, r, n in zip(self.ages, self.rates, self.article_counts):
            w.writerow([repr(float(a)), repr(float(r)), int(n)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "AgeingCurve":
        rows = list(csv.DictReader(io.StringIO(text)))
        return cls(
            np.array([float(r["age"]) for r in rows]),
            np.array([float(r["rate"]) for r in rows]),
            np.array([int(r["article_count"]) for r in rows]),
        )

    @classmethod
    def from_model(cls, m: ObsolescenceModel, ages, article_count: int = 1) -> "AgeingCurve":
        ages = np.asarray(ages, dtype=np.float64)
        return cls(ages, eval_model(m, ages), np.full(len(ages), article_count))


def bin_usage_by_age(
    events: Sequence[UsageEvent],
    resources: Mapping[str, Resource],
    bin_width: float,
    window: tuple[int, int],
) -> AgeingCurve:
    """Mean per-article use by article age.

    Article age is measured at the end of ``window`` (half-open epoch
    seconds). Every resource published before the window end counts toward
    its bin even with no events; bins without articles are omitted.
    """
    start, end = window
    if end <= start:
        raise EmptyDateRange("usage window is empty")
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    years = (end - start) / SECONDS_PER_YEAR
    ids = list(resources)
    pub = np.array([date_to_epoch(resources[r].publication_date) for r in ids], dtype=np.int64)
    age = (end - pub) / SECONDS_PER_YEAR
    live = age > 0
    bins = np.full(len(ids), -1, dtype=np.int64)
    bins[live] = np.floor(age[live] / bin_width).astype(np.int64)
    index = {r: i for i, r in enumerate(ids)}
    hits = []
    for e in events:
        if start <= e.timestamp < end:
            i = index.get(e.resource_id)
            if i is None:
                raise MissingPublicationDate(f"no publication date for resource {e.resource_id}")
            if bins[i] >= 0:
                hits.append(bins[i])
    nb = int(bins.max()) + 1 if live.any() else 0
    articles = np.bincount(bins[live], minlength=nb)
    uses = np.bincount(np.asarray(hits, dtype=np.int64), minlength=nb)
    keep = articles > 0
    mids = (np.arange(nb) + 0.5) * bin_width
    return AgeingCurve(mids[keep], uses[keep] / articles[keep] / years, articles[keep])


# --------------------------------------------------------------------------
# fitting


@dataclass
class FitDiagnostics:
    residual_norm: float
    iterations: int
    converged: bool
    start_index: int
    n_starts: int
    bins_used: int
    start_residuals: list[float] = field(default_factory=list)


class LogRateObjective:
    """Weighted log-space residuals for ``n`` exponentials (+ optional constant).

    Parameter vector: ``[A_1..A_n, k_1..k_n, (H)]``. Residual ``i`` is
    ``sqrt(w_i) * (log f(t_i) - log y_i)``.
    """

    TINY = 1e-300

    def __init__(self, ages, rates, weights, n_exp: int, constant: bool):
        self.t = np.asarray(ages, dtype=np.float64)
        self.logy = np.log(np.asarray(rates, dtype=np.float64))
        self.sw = np.sqrt(np.asarray(weights, dtype=np.float64))
        self.n = n_exp
        self.constant = constant

    @property
    def n_params(self) -> int:
        return 2 * self.n + int(self.constant)

    def _split(self, theta):
        amp = theta[: self.n]
        dec = theta[self.n: 2 * self.n]
        h = theta[2 * self.n] if self.constant else 0.0
        return amp, dec, h

    def model(self, theta, t=None):
        t = self.t if t is None else np.asarray(t, dtype=np.float64)
        amp, dec, h = self._split(theta)
        return h + (amp[None, :] * np.exp(-np.outer(t, dec))).sum(axis=1)

    def residuals(self, theta):
        f = np.maximum(self.model(theta), self.TINY)
        return self.sw * (np.log(f) - self.logy)

    def jacobian(self, theta):
        amp, dec, _ = self._split(theta)
        e = np.exp(-np.outer(self.t, dec))
        f = np.maximum(h_plus(amp, e, theta, self), self.TINY)
        scale = (self.sw / f)[:, None]
        cols = [e, -self.t[:, None] * amp[None, :] * e]
        if self.constant:
            cols.append(np.ones((len(self.t), 1)))
        return scale * np.hstack(cols)

    def cost(self, theta) -> float:
        r = self.residuals(theta)
        return float(r @ r)


def h_plus(amp, e, theta, obj: LogRateObjective):
    h = theta[2 * obj.n] if obj.constant else 0.0
    return h + e @ amp


def _init_amplitudes(obj: LogRateObjective, decays: np.ndarray) -> np.ndarray:
    # linear NNLS in relative-error space for fixed decays
    y = np.exp(obj.logy)
    cols = [np.exp(-np.outer(obj.t, decays))]
    if obj.constant:
        cols.append(np.ones((len(obj.t), 1)))
    basis = np.hstack(cols)
    row = obj.sw / y
    amp, _ = nnls(basis * row[:, None], obj.sw, maxiter=50 * basis.shape[1])
    floor = 1e-8 * max(float(y.max()), 1e-12)
    return np.maximum(amp, floor)


def _model_from_theta(theta: np.ndarray, n_exp: int, constant: bool) -> ObsolescenceModel:
    amp = theta[:n_exp]
    dec = theta[n_exp: 2 * n_exp]
    order = np.argsort(dec, kind="stable")  # slowest first
    comps = []
    if constant:
        comps.append(Component("H", float(theta[2 * n_exp]), 0.0))
    labels = _EXP_LABELS[:n_exp]
    for label, j in zip(labels, order):
        comps.append(Component(label, float(amp[j]), float(dec[j])))
    return ObsolescenceModel(tuple(comps))


def _theta_from_model(m: ObsolescenceModel, n_exp: int, constant: bool) -> np.ndarray:
    exps = sorted((c for c in m.components if c.label not in ("H", "S")), key=lambda c: -c.decay)
    if len(exps) != n_exp:
        raise ValueError(f"init model has {len(exps)} exponentials, expected {n_exp}")
    h = m.component("H")
    theta = [c.amplitude for c in exps] + [c.decay for c in exps]
    if constant:
        theta.append(h.amplitude if h else 0.0)
    return np.array(theta, dtype=np.float64)


def fit_obsolescence(
    curve: AgeingCurve,
    n_exponentials: int = 3,
    include_constant: bool = True,
    init: ObsolescenceModel | None = None,
    n_starts: int = 8,
    seed: int = 0,
    max_nfev: int = 2000,
) -> tuple[ObsolescenceModel, FitDiagnostics]:
    """Fit exponential modes to an ageing curve by weighted log-space least squares.

    Weights are article counts; zero-rate bins are excluded because their
    logarithm is undefined. Decays and amplitudes are bounded below by zero.
    The model is not unique, so several starts are run: start 0 uses the
    standard decay ladder (or ``init``), the rest scale each decay by a random
    factor in [0.25, 4]. The start with the lowest residual wins; ties go to
    the lexicographically smallest parameter vector.
    """
    if n_exponentials not in (1, 2, 3):
        raise ValueError("n_exponentials must be 1, 2 or 3")
    use = curve.rates > 0
    obj = LogRateObjective(curve.ages[use], curve.rates[use], curve.article_counts[use], n_exponentials, include_constant)
    if use.sum() <= 2 * obj.n_params:
        raise InsufficientData(f"{int(use.sum())} usable bins for {obj.n_params} parameters")

    ladder = np.array(DECAY_LADDER[3 - n_exponentials:])
    rng = np.random.default_rng(seed)
    starts = []
    if init is not None:
        starts.append(_theta_from_model(init, n_exponentials, include_constant))
    else:
        starts.append(np.concatenate([np.zeros(n_exponentials), ladder]))
    while len(starts) < max(1, n_starts):
        factors = np.exp(rng.uniform(np.log(0.25), np.log(4.0), n_exponentials))
        starts.append(np.concatenate([np.zeros(n_exponentials), ladder * factors]))

    results = []
    total_iter = 0
    for i, th in enumerate(starts):
        if init is None or i > 0:
            amps = _init_amplitudes(obj, th[n_exponentials: 2 * n_exponentials])
            th = np.concatenate([amps[:n_exponentials], th[n_exponentials: 2 * n_exponentials], amps[n_exponentials:]])
        th = np.maximum(th, 0.0)
        res = least_squares(
            obj.residuals, th, jac=obj.jacobian, bounds=(0.0, np.inf), method="trf",
            x_scale="jac", ftol=1e-15, xtol=1e-15, gtol=1e-15, max_nfev=max_nfev,
        )
        total_iter += int(res.nfev)
        results.append((obj.cost(res.x), tuple(res.x.tolist()), i, res.status > 0))

    best = min(results, key=lambda r: (r[0], r[1]))
    cost, theta, idx, ok = best
    model = _model_from_theta(np.array(theta), n_exponentials, include_constant)
    diag = FitDiagnostics(math.sqrt(cost), total_iter, bool(ok), idx, len(starts), int(use.sum()),
                          [math.sqrt(r[0]) for r in results])
    return model, diag


def curve_residual_norm(m: ObsolescenceModel, curve: AgeingCurve) -> float:
    """Weighted log-space residual norm of ``m`` against ``curve`` (zero bins excluded)."""
    use = curve.rates > 0
    f = np.maximum(eval_model(m, curve.ages[use]), LogRateObjective.TINY)
    r = np.sqrt(curve.article_counts[use]) * (np.log(f) - np.log(curve.rates[use]))
    return float(np.sqrt(r @ r))


def write_fit_csv(path: str | Path, m: ObsolescenceModel, curve: AgeingCurve) -> None:
    """Plot-ready table: observed and modelled rate per age, plus each mode."""
    labels = [c.label for c in m.components if c.label != "S"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["age", "observed", "model", "article_count"] + [f"R_{x}" for x in labels])
    model = np.atleast_1d(eval_model(m, curve.ages))
    for i, a in enumerate(curve.ages):
        parts = [m.component(x).amplitude * math.exp(-m.component(x).decay * a) for x in labels]
        w.writerow([repr(float(a)), repr(float(curve.rates[i])), repr(float(model[i])), int(curve.article_counts[i])]
                   + [repr(p) for p in parts])
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="\n")
