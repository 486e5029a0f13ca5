"""Exception hierarchy shared by every module."""


class LdpRangeError(Exception):
    """Base class for all library errors."""


class DomainError(LdpRangeError, ValueError):
    """An argument lies outside the domain an operation accepts."""


class EmptyInputError(LdpRangeError, ValueError):
    """Aggregation was asked to run over zero reports."""


class CapacityError(LdpRangeError):
    """The request is valid but too large to execute (enumeration, dense algebra, O(ND) decode)."""


class MissingLevelError(LdpRangeError):
    """A tree level received no reports, so its estimates are undefined."""

    def __init__(self, level: int):
        self.level = level
        super().__init__(f"level {level} received no reports; its node estimates are undefined")


class DegenerateEstimateError(LdpRangeError):
    """The estimate cannot support the query (e.g. non-positive total mass for quantiles)."""
