"""Exception types shared across the package."""


class NumericalOverflowError(RuntimeError):
    """Trajectory or integrator produced a non-finite / runaway value."""


class TruncationUnsafeError(ValueError):
    """Requested displacement/coherent amplitude too large for the basis."""


class TruncationOverflowError(RuntimeError):
    """State leaked too much weight into the top of the truncated basis."""


class StepSizeFailure(RuntimeError):
    """Density-operator positivity broke down; caller should halve dt."""


class GridCoverageError(ValueError):
    """Phase-space grid does not contain the state.

    Carries ``suggested`` as a (x_half, p_half) extent hint.
    """

    def __init__(self, msg, suggested=None):
        super().__init__(msg)
        self.suggested = suggested


class HistoryBudgetError(ValueError):
    """History set larger than the configured propagation budget."""


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class DecoherenceTimeWarning(UserWarning):
    """Decoherence time undefined (Gamma or kT is zero); histories may interfere."""
