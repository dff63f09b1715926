"""Exception types raised across the package."""


class SpherelabError(Exception):
    """Base class for all package errors."""


class RankDeficient(SpherelabError):
    """Matrix does not have full column rank at the working tolerance."""


class NonConvergence(SpherelabError):
    """An iterative numeric routine exceeded its iteration cap."""


class InvalidOrder(SpherelabError):
    """Unsupported constellation order for the requested kind."""


class ZeroColumn(SpherelabError):
    """A detector that normalizes by column energy met an all-zero column."""


class SearchSpaceTooLarge(SpherelabError):
    """Exhaustive enumeration would exceed the configured candidate cap."""


class RestartOverflow(SpherelabError):
    """Sphere-search radius grew past its sanity bound; indicates a bug."""


class InsufficientTrials(SpherelabError):
    """Too few error events to place a threshold crossing reliably."""


class InsufficientBinOccupancy(SpherelabError):
    """A conditioning cell received fewer samples than the configured floor."""


class InvalidSer(SpherelabError):
    """Symbol error rate outside the domain of a closed-form threshold."""


class ConfigError(SpherelabError):
    """Experiment configuration failed validation."""


class TableMismatch(SpherelabError):
    """Threshold table metadata does not match the model it is applied to."""
