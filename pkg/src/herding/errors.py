"""Exception types raised by the herding toolkit."""


class HerdingError(Exception):
    """Base class for all package errors."""


class ParameterError(HerdingError, ValueError):
    """A parameter lies outside its admissible domain."""


class UndefinedObservableError(HerdingError):
    """The herder success fraction q is undefined (no herders)."""


class DegenerateRegimeError(HerdingError):
    """Root count is ambiguous because the drift is tangent to zero.

    ``brackets`` carries the raw list of ``(lo, hi)`` intervals that were
    found before the near-tangency test gave up.
    """

    def __init__(self, message, brackets=()):
        super().__init__(message)
        self.brackets = list(brackets)


class NoTransitionError(HerdingError):
    """No monostable to bistable transition exists on eta in [0, 1]."""


class NoEquilibriumError(HerdingError):
    """<q>(eta) - p has no sign change on (eta_c, 1)."""
