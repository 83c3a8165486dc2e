"""Exception types shared across the package."""


class SomivError(Exception):
    """Base class for all package errors."""


class DimensionError(SomivError, ValueError):
    """Array or spec dimensions do not agree.

    ``axis`` names the offending dimension (e.g. ``"x"``, ``"u"``, ``"theta"``).
    """

    def __init__(self, axis, expected, got):
        self.axis = axis
        self.expected = expected
        self.got = got
        super().__init__(f"dimension mismatch on axis {axis!r}: expected {expected}, got {got}")


class SignPatternError(SomivError, ValueError):
    """A sign pattern is invalid or does not cover a modulus index."""


class RankDeficientError(SomivError, ArithmeticError):
    """The stacked IV system does not have full column rank."""

    def __init__(self, rank, n_cols, singular_values=None):
        self.rank = rank
        self.n_cols = n_cols
        self.singular_values = singular_values
        super().__init__(
            f"stacked instrument system has numeric rank {rank} < {n_cols} unknowns; "
            "the instrument/regressor cross-covariance must have full rank "
            "(check excitation, sign diversity and the model structure)"
        )


class SimulationDivergedError(SomivError, FloatingPointError):
    """A simulation produced a non-finite state."""

    def __init__(self, step, what="simulation"):
        self.step = step
        super().__init__(f"{what} diverged (non-finite state) at step {step}")


class ExcitationError(SomivError, ValueError):
    """Data does not carry the excitation offset needed to fix modulus signs."""


class ConfigError(SomivError, ValueError):
    """A configuration file or value is invalid."""
