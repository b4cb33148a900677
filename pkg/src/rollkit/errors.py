class RollkitError(Exception):
    pass


class DomainError(RollkitError, ValueError):
    """Point outside the chart domain, or malformed input."""


class DriftError(RollkitError):
    """Numerical state drifted too far off its constraint set."""


class ChartExitError(RollkitError):
    """Integration left the chart. Carries the partial trajectory."""

    def __init__(self, message, partial=None, t=None):
        super().__init__(message)
        self.partial = partial
        self.t = t


class FlagError(RollkitError):
    pass
