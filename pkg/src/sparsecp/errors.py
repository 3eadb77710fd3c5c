"""Exception types shared across the package."""


class SparsecpError(Exception):
    """Base class for errors raised by this package."""


class DntFormatError(SparsecpError):
    """A DNT1 payload is malformed (bad magic, truncated, or inconsistent)."""


class IllConditionedSubproblemError(SparsecpError):
    """A per-mode linear subproblem could not be solved reliably.

    Raised when the regularized Khatri-Rao gram loses positive definiteness,
    typically because regularization is zero and a factor became
    rank-deficient.  The message names the offending mode when known.
    """


class StaleContextError(SparsecpError):
    """A cached subproblem context was used outside the sweep it was built for."""
