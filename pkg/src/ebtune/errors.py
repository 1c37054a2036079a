"""Exception hierarchy shared by every ebtune module.

The CLI maps these onto exit codes, so keep the tree shallow.
"""


class EbtuneError(Exception):
    """Base class for all package errors."""


class DomainError(EbtuneError, ValueError):
    """An argument lies outside the domain of a physical formula."""


class RegimeError(DomainError):
    """The transmon approximation is not valid for the requested point."""


class ValidationError(EbtuneError, ValueError):
    """Input data violates a data-model invariant."""


class ParseError(ValidationError):
    """A measurement file could not be parsed.

    ``line`` is the 1-based line number in the source, when known.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class StatisticsError(EbtuneError, ValueError):
    """Too few junctions to compute the requested statistic."""


class LayoutError(ValidationError):
    """A die does not match its QPU layout."""


class FitError(EbtuneError, ValueError):
    """Dose-response data cannot support a fit."""


class PlanningError(EbtuneError):
    """A tune plan cannot be constructed for the given inputs."""


class SelectionError(PlanningError):
    """Too few junctions to select from."""


class ApplicationError(PlanningError):
    """A plan does not match the wafer it is applied to."""
