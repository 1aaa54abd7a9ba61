"""Exception hierarchy shared by all dcvrt modules."""


class DcvrtError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(DcvrtError, ValueError):
    """Invalid scenario, weights, bounds or other user-supplied configuration."""


class TopologyError(ConfigError):
    """The network description is not a tree rooted at the PCC."""


class VoltageCollapse(DcvrtError):
    """The Thevenin power-balance equation has no real solution."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class NumericError(DcvrtError, ArithmeticError):
    """A numerical routine failed to reach its accuracy target."""


class NotApplicable(DcvrtError):
    """A certificate was requested for a network it does not cover."""
