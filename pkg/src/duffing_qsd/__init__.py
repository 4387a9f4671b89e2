"""Dissipative chaos in the forced damped Duffing oscillator, classical and quantum.

Classical strange-attractor dynamics with optional thermal noise, Lindblad
master-equation propagation in a truncated oscillator basis, quantum state
diffusion trajectories with a moving (displaced) basis, Wigner distributions,
and decoherent-histories analysis over coherent-state phase-space cells.
"""

__version__ = "0.1.0"

from .classical import (
    DuffingParams,
    PhasePoint,
    SectionCloud,
    Trajectory,
    duffing_flow,
    langevin_flow,
    langevin_section,
    lyapunov_max,
    lyapunov_pair,
    measure_map_histogram,
    poincare_section,
)
from .errors import (
    ConfigError,
    DecoherenceTimeWarning,
    GridCoverageError,
    HistoryBudgetError,
    NumericalOverflowError,
    StepSizeFailure,
    TruncationOverflowError,
    TruncationUnsafeError,
)
from .histories import (
    CellGrid,
    DecoherenceMatrix,
    HistorySpec,
    HistoryTable,
    ProbabilityCheck,
    cell_grid,
    classical_cell_frequencies,
    classical_probability_check,
    decoherence_functional,
    decoherence_time,
    history_probabilities,
)
from .config import DEFAULTS, SimConfig, load_config
from .numerics import RngStream
from .oscillator_ops import (
    BasisSpec,
    QuantumState,
    coherent_state,
    displacement,
    duffing_hamiltonian,
    fock_state,
    ladder,
    momentum_op,
    position_op,
)
from .phase_space import (
    WignerGrid,
    histogram_overlap,
    invariant_wigner,
    nonnegative_part,
    oscillator_wavefunctions,
    smooth_histogram,
    wigner_transform,
)
from .qsd import (
    DensityOperator,
    UnravelingSpec,
    ensemble_density,
    lindblad_operators,
    master_step,
    propagate_stack,
    qsd_section,
    qsd_step,
    recenter,
    strobe_map,
    trace_distance,
)

__all__ = [
    "BasisSpec",
    "CellGrid",
    "ConfigError",
    "DEFAULTS",
    "DecoherenceMatrix",
    "DecoherenceTimeWarning",
    "DensityOperator",
    "DuffingParams",
    "GridCoverageError",
    "HistoryBudgetError",
    "HistorySpec",
    "HistoryTable",
    "NumericalOverflowError",
    "PhasePoint",
    "ProbabilityCheck",
    "QuantumState",
    "RngStream",
    "SectionCloud",
    "SimConfig",
    "StepSizeFailure",
    "Trajectory",
    "TruncationOverflowError",
    "TruncationUnsafeError",
    "UnravelingSpec",
    "WignerGrid",
    "cell_grid",
    "classical_cell_frequencies",
    "classical_probability_check",
    "coherent_state",
    "decoherence_functional",
    "decoherence_time",
    "displacement",
    "duffing_flow",
    "duffing_hamiltonian",
    "ensemble_density",
    "fock_state",
    "histogram_overlap",
    "history_probabilities",
    "invariant_wigner",
    "ladder",
    "langevin_flow",
    "langevin_section",
    "lindblad_operators",
    "load_config",
    "lyapunov_max",
    "lyapunov_pair",
    "master_step",
    "measure_map_histogram",
    "momentum_op",
    "nonnegative_part",
    "oscillator_wavefunctions",
    "poincare_section",
    "position_op",
    "propagate_stack",
    "qsd_section",
    "qsd_step",
    "recenter",
    "smooth_histogram",
    "strobe_map",
    "trace_distance",
    "wigner_transform",
]
