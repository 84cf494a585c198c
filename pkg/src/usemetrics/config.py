"""Pipeline configuration stored as JSON.

Every section has defaults, so ``{}`` is a valid config. ``to_dict`` emits
every field, and ``from_dict(to_dict(c)) == c`` for any loaded config.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

from .core import AggregationParams, epoch_to_iso, iso_to_epoch
from .errors import ConfigError, InvalidSpec
from .ingest import SessionizationPolicy
from .metrics import ALL_METRICS, BINARY, WEIGHTED
from .synth import PopulationSpec, default_population_spec

INPUT_KEYS = (
    "clf", "context_objects", "events", "resources", "citations", "journals",
    "countries", "user_countries", "pairs", "metrics", "curve", "jr1",
)

DEFAULT_ROUTES = {
    "/abs/{id}": "AbstractView",
    "/full/{id}": "FullTextDownload",
    "/pdf/{id}": "FullTextDownload",
    "/toc/{id}": "TocBrowse",
    "/cite/{id}": "CitationFollow",
}


@dataclass(frozen=True)
class FitSettings:
    bin_width: float = 1.0
    window: tuple[int, int] | None = None  # None: the event span
    n_exponentials: int = 3
    include_constant: bool = True
    n_starts: int = 8


@dataclass(frozen=True)
class GraphSettings:
    level: str = "journal"
    directed: bool = True
    dedup_window: int = 10
    allow_self: bool = False
    dense_threshold: int = 2000


@dataclass(frozen=True)
class MetricSettings:
    lam: float = 0.85
    tol: float = 1e-12
    max_iter: int = 10_000
    selection: tuple[str, ...] = ALL_METRICS
    mode: str = WEIGHTED
    correlation: str = "spearman"


@dataclass(frozen=True)
class MapSettings:
    k: int = 2
    n_init: int = 10


@dataclass(frozen=True)
class PipelineConfig:
    inputs: Mapping[str, str] = field(default_factory=dict)
    formats: Mapping[str, str] = field(default_factory=dict)
    route_map: Mapping[str, str] = field(default_factory=lambda: dict(DEFAULT_ROUTES))
    deny_agents: tuple[str, ...] = ("bot", "crawler", "spider")
    sessionization: SessionizationPolicy = field(default_factory=SessionizationPolicy)
    aggregation: AggregationParams = field(default_factory=AggregationParams)
    referents: tuple[str, ...] = ()
    census_year: int | None = None
    fit: FitSettings = field(default_factory=FitSettings)
    graph: GraphSettings = field(default_factory=GraphSettings)
    metrics: MetricSettings = field(default_factory=MetricSettings)
    map: MapSettings = field(default_factory=MapSettings)
    simulate: PopulationSpec | None = None
    target_events: int = 1_000_000
    report_top_n: int = 10
    output_dir: str = "out"
    seed: int = 0

    def population(self) -> PopulationSpec:
        if self.simulate is not None:
            return replace(self.simulate, seed=self.seed)
        return default_population_spec(self.target_events, seed=self.seed)

    def input_path(self, key: str) -> Path | None:
        v = self.inputs.get(key)
        return Path(v) if v else None

    def check_inputs(self, keys) -> None:
        """Raise ConfigError for a referenced input that does not exist."""
        for k in keys:
            p = self.input_path(k)
            if p is not None and not p.exists():
                raise ConfigError(f"input {k!r} not found: {p}")

    # ----------------------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        s = self.sessionization
        return {
            "seed": self.seed,
            "output_dir": self.output_dir,
            "inputs": dict(sorted(self.inputs.items())),
            "formats": dict(sorted(self.formats.items())),
            "route_map": dict(self.route_map),
            "deny_agents": list(self.deny_agents),
            "sessionization": {
                "inactivity_timeout": s.inactivity_timeout,
                "key_fields": list(s.key_fields),
                "max_session_length": s.max_session_length,
            },
            "aggregation": self.aggregation.to_dict(),
            "referents": list(self.referents),
            "census_year": self.census_year,
            "fit": {
                "bin_width": self.fit.bin_width,
                "window": [epoch_to_iso(t) for t in self.fit.window] if self.fit.window else None,
                "n_exponentials": self.fit.n_exponentials,
                "include_constant": self.fit.include_constant,
                "n_starts": self.fit.n_starts,
            },
            "graph": {f.name: getattr(self.graph, f.name) for f in fields(GraphSettings)},
            "metrics": {
                "lambda": self.metrics.lam,
                "tol": self.metrics.tol,
                "max_iter": self.metrics.max_iter,
                "selection": list(self.metrics.selection),
                "mode": self.metrics.mode,
                "correlation": self.metrics.correlation,
            },
            "map": {"k": self.map.k, "n_init": self.map.n_init},
            "simulate": self.simulate.to_dict() if self.simulate is not None else None,
            "target_events": self.target_events,
            "report_top_n": self.report_top_n,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PipelineConfig":
        known = {"seed", "output_dir", "inputs", "formats", "route_map", "deny_agents", "sessionization",
                 "aggregation", "referents", "census_year", "fit", "graph", "metrics", "map", "simulate",
                 "target_events", "report_top_n"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            bad_inputs = set(d.get("inputs", {})) - set(INPUT_KEYS)
            if bad_inputs:
                raise ConfigError(f"unknown input keys: {sorted(bad_inputs)}")
            s = d.get("sessionization") or {}
            f = d.get("fit") or {}
            g = d.get("graph") or {}
            m = d.get("metrics") or {}
            mp = d.get("map") or {}
            cfg = cls(
                inputs={k: str(v) for k, v in (d.get("inputs") or {}).items()},
                formats={k: str(v) for k, v in (d.get("formats") or {}).items()},
                route_map=dict(d["route_map"]) if d.get("route_map") is not None else dict(DEFAULT_ROUTES),
                deny_agents=tuple(d.get("deny_agents", ("bot", "crawler", "spider"))),
                sessionization=SessionizationPolicy(
                    int(s.get("inactivity_timeout", 1800)),
                    tuple(s.get("key_fields", ("client_ip", "user_agent"))),
                    int(s.get("max_session_length", 86400)),
                ),
                aggregation=AggregationParams.from_dict(d.get("aggregation")),
                referents=tuple(d.get("referents", ())),
                census_year=int(d["census_year"]) if d.get("census_year") is not None else None,
                fit=FitSettings(
                    float(f.get("bin_width", 1.0)),
                    (iso_to_epoch(f["window"][0]), iso_to_epoch(f["window"][1])) if f.get("window") else None,
                    int(f.get("n_exponentials", 3)),
                    bool(f.get("include_constant", True)),
                    int(f.get("n_starts", 8)),
                ),
                graph=GraphSettings(
                    str(g.get("level", "journal")),
                    bool(g.get("directed", True)),
                    int(g.get("dedup_window", 10)),
                    bool(g.get("allow_self", False)),
                    int(g.get("dense_threshold", 2000)),
                ),
                metrics=MetricSettings(
                    float(m.get("lambda", 0.85)),
                    float(m.get("tol", 1e-12)),
                    int(m.get("max_iter", 10_000)),
                    tuple(m.get("selection", ALL_METRICS)),
                    str(m.get("mode", WEIGHTED)),
                    str(m.get("correlation", "spearman")),
                ),
                map=MapSettings(int(mp.get("k", 2)), int(mp.get("n_init", 10))),
                simulate=PopulationSpec.from_dict(d["simulate"]) if d.get("simulate") else None,
                target_events=int(d.get("target_events", 1_000_000)),
                report_top_n=int(d.get("report_top_n", 10)),
                output_dir=str(d.get("output_dir", "out")),
                seed=int(d.get("seed", 0)),
            )
        except ConfigError:
            raise
        except (InvalidSpec, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from None
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.graph.level not in ("article", "journal"):
            raise ConfigError(f"graph.level must be article or journal, not {self.graph.level!r}")
        if self.metrics.mode not in (BINARY, WEIGHTED):
            raise ConfigError(f"metrics.mode must be {BINARY} or {WEIGHTED}")
        if not 0 < self.metrics.lam < 1:
            raise ConfigError("metrics.lambda must lie in (0, 1)")
        unknown = set(self.metrics.selection) - set(ALL_METRICS)
        if unknown:
            raise ConfigError(f"unknown metrics: {sorted(unknown)}")
        if self.metrics.correlation not in ("spearman", "pearson"):
            raise ConfigError("metrics.correlation must be spearman or pearson")
        if self.map.k < 1:
            raise ConfigError("map.k must be at least 1")
        if self.fit.bin_width <= 0:
            raise ConfigError("fit.bin_width must be positive")

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return PipelineConfig.from_json(p.read_text(encoding="utf-8"))
