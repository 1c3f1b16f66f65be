"""Exception hierarchy.

Every domain error derives from :class:`FlowdropError`; the CLI prints the
class name on stderr and exits with status 1.
"""


class FlowdropError(ValueError):
    """Base class for domain errors."""


class ConfigError(FlowdropError):
    """Malformed configuration (missing or unknown fields, bad types)."""


class CyclicNetwork(FlowdropError):
    pass


class DuplicateLinkInRoute(FlowdropError):
    pass


class NonPositiveParameter(FlowdropError):
    pass


class EmptyRoute(FlowdropError):
    pass


class UnknownLink(FlowdropError):
    pass


class NotUpstreamTree(FlowdropError):
    pass


class NotLinearNetwork(FlowdropError):
    pass


class DuplicatePath(FlowdropError):
    pass


class UnsaturableLink(FlowdropError):
    """A link that can never be saturated.

    Such a link does not change the allocation and may be deleted from the
    configuration; it is reported rather than removed silently.
    """

    def __init__(self, message, links=()):
        super().__init__(message)
        self.links = tuple(links)


class DimensionMismatch(FlowdropError):
    pass


class AlphaOutOfRange(FlowdropError):
    pass


class NotErgodic(FlowdropError):
    pass


class TruncationTooSmall(FlowdropError):
    pass


class EmptyGrid(FlowdropError):
    pass


class DegenerateStart(FlowdropError):
    pass


class NoEligibleChild(FlowdropError):
    pass


class NoRoot(FlowdropError):
    pass


class NoConvergence(FlowdropError):
    pass


class TooShort(FlowdropError):
    pass


class OptimalConditionViolated(FlowdropError):
    pass
