"""Exception types shared across the library."""


class CheyLVError(Exception):
    """Base class for all library errors."""


class DomainError(CheyLVError, ValueError):
    """Inputs outside the mathematical domain of an operation."""


class BelowIntrinsicError(DomainError):
    """Option price at or below its no-arbitrage intrinsic bound."""


class InsufficientDataError(DomainError):
    """Not enough quotes to build an interpolant."""


class InvalidGridError(DomainError):
    """Grid values violate surface invariants (e.g. non-positive variance)."""


class DegenerateDenominatorError(CheyLVError):
    """Butterfly density ratio below the usable floor."""


class SimulationBlowupError(CheyLVError):
    """A Monte Carlo path became non-finite; message names the step."""


class RangeTooSmallError(CheyLVError):
    """Integration range too small to normalize the implied density."""


class InversionError(CheyLVError):
    """Failed to invert a monotone map (e.g. the swap-rate function)."""


class DegenerateAnnuityError(CheyLVError):
    """Annuity evaluated to a non-positive value."""


class CalibrationError(CheyLVError):
    """Calibration did not converge; carries the residual trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []
