"""Exception hierarchy shared by the library and the command line."""


class ElsgError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigurationError(ElsgError, ValueError):
    """Invalid user-supplied configuration or parameters."""

    exit_code = 1


class DomainError(ElsgError, ValueError):
    """A function was evaluated outside the set it is defined on."""

    exit_code = 1


class AssumptionError(ElsgError):
    """A structural assumption needed by the synthesis does not hold.

    Attributes:
        assumption: short name of the violated assumption.
        witness: optional mapping describing the worst offending sample.
    """

    exit_code = 2

    def __init__(self, assumption, message, witness=None):
        super().__init__(f"{assumption} violated: {message}")
        self.assumption = assumption
        self.witness = witness or {}


class SynthesisError(ElsgError):
    """Internal inconsistency during parameter synthesis.

    Raised when a bound that should hold by construction does not, which
    points at a bad class-K pairing or an under-resolved grid.
    """

    exit_code = 2
