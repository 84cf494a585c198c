"""Usage bibliometrics: from scholarly usage logs to sessions, statistics,
obsolescence fits, clickstream networks and network-based impact metrics."""

__version__ = "0.1.0"

from .core import (
    AggregationParams,
    Normalization,
    Referent,
    RequestType,
    Resource,
    ResourceFilter,
    UsageEvent,
    UsageStatistic,
    UserFilter,
)
from .errors import UsageMetricsError

__all__ = [
    "AggregationParams",
    "Normalization",
    "Referent",
    "RequestType",
    "Resource",
    "ResourceFilter",
    "UsageEvent",
    "UsageMetricsError",
    "UsageStatistic",
    "UserFilter",
    "__version__",
]
