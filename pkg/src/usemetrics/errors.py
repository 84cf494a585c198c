"""Exception hierarchy.

Every error carries a stable ``code`` so the CLI can write a machine-readable
error report without inspecting message text.
"""

from __future__ import annotations


class UsageMetricsError(Exception):
    """Base class for all data errors raised by the package."""

    code = "UsageMetricsError"

    def to_dict(self) -> dict:
        return {"error": self.code, "message": str(self)}


class MalformedLine(UsageMetricsError):
    code = "MalformedLine"

    def __init__(self, position: int, reason: str):
        super().__init__(f"column {position}: {reason}")
        self.position = position
        self.reason = reason


class InvalidRouteMap(UsageMetricsError):
    code = "InvalidRouteMap"


class UnsortedInput(UsageMetricsError):
    code = "UnsortedInput"


class XmlError(UsageMetricsError):
    code = "XmlError"

    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class MissingReferent(UsageMetricsError):
    code = "MissingReferent"


class ColumnMismatch(UsageMetricsError):
    code = "ColumnMismatch"


class UnknownReferent(UsageMetricsError):
    code = "UnknownReferent"


class EmptyDateRange(UsageMetricsError):
    code = "EmptyDateRange"


class MissingJournalMetadata(UsageMetricsError):
    code = "MissingJournalMetadata"


class UnknownAuthor(UsageMetricsError):
    code = "UnknownAuthor"


class NonPositiveInput(UsageMetricsError):
    code = "NonPositiveInput"


class DegenerateInput(UsageMetricsError):
    code = "DegenerateInput"


class NegativeAge(UsageMetricsError):
    code = "NegativeAge"


class MissingS0(UsageMetricsError):
    code = "MissingS0"


class MissingComponent(UsageMetricsError):
    code = "MissingComponent"


class MissingPublicationDate(UsageMetricsError):
    code = "MissingPublicationDate"


class InsufficientData(UsageMetricsError):
    code = "InsufficientData"


class NonConvergence(UsageMetricsError):
    code = "NonConvergence"

    def __init__(self, message: str, iterations: int = 0, last_delta: float = float("nan")):
        super().__init__(message)
        self.iterations = iterations
        self.last_delta = last_delta

    def to_dict(self) -> dict:
        d = super().to_dict()
        d.update(iterations=self.iterations, last_delta=self.last_delta)
        return d


class MissingSession(UsageMetricsError):
    code = "MissingSession"


class MissingJournalMapping(UsageMetricsError):
    code = "MissingJournalMapping"


class EmptyTable(UsageMetricsError):
    code = "EmptyTable"


class EmptyMatrix(UsageMetricsError):
    code = "EmptyMatrix"


class ZeroMatrix(UsageMetricsError):
    code = "ZeroMatrix"


class MissingEdge(UsageMetricsError):
    code = "MissingEdge"


class UnnormalizedMatrix(UsageMetricsError):
    code = "UnnormalizedMatrix"


class LengthMismatch(UsageMetricsError):
    code = "LengthMismatch"


class KTooLarge(UsageMetricsError):
    code = "KTooLarge"


class InvalidSpec(UsageMetricsError):
    code = "InvalidSpec"


class ConfigError(UsageMetricsError):
    code = "ConfigError"
