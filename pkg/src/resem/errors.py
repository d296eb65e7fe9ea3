"""Exception types shared across the package.

Every error raised on purpose derives from :class:`ResemError`, so callers
(the CLI in particular) can separate validation problems from bugs.
"""

from __future__ import annotations


class ResemError(Exception):
    """Base class for deliberate failures."""


class DomainError(ResemError, ValueError):
    """An argument lies outside the domain an operation accepts."""


class DegeneratePopulationError(ResemError):
    """The population is too small or its outcomes carry no variation."""


class SingularDesignError(ResemError):
    """A covariate covariance is singular or too ill-conditioned to invert."""

    def __init__(self, block: str, detail: str = ""):
        self.block = block
        message = f"covariance of block {block!r} is singular or ill-conditioned"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)


class SingularFitError(SingularDesignError):
    """Per-arm least squares is not identified."""

    def __init__(self, block: str, arm: int, detail: str = ""):
        self.arm = arm
        super().__init__(block, f"arm {arm}" + (f", {detail}" if detail else ""))


class AcceptanceStarvationError(ResemError):
    """A rejection loop hit its attempt budget without accepting a draw."""

    def __init__(self, stage: str, attempts: int, accepted: int = 0):
        self.stage = stage
        self.attempts = attempts
        self.acceptance_rate = accepted / attempts if attempts else 0.0
        super().__init__(
            f"{stage} stage accepted {accepted} of {attempts} candidate draws "
            f"(empirical acceptance rate {self.acceptance_rate:.3g})"
        )


class DegenerateEstimateError(ResemError):
    """An estimated variance is not positive, so no interval can be formed."""


class InfeasibleDesignError(DomainError):
    """Requested sample or arm sizes cannot be met by the available units."""


class PrecisionWarning(UserWarning):
    """A Monte Carlo budget is too small for the documented accuracy."""


class FallbackWarning(UserWarning):
    """A conservative fallback replaced the requested computation."""
