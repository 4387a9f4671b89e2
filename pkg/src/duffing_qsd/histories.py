"""Decoherent histories over phase-space cells at stroboscopic times.

A history assigns the system to one phase-space cell per strobe instant
t_k = 2*pi*k/omega0.  Cells are realized as a POVM: rank-one effects
E_i = c * |q_i, p_i><q_i, p_i| built on coherent states at the cell
centers, plus a remainder effect E_rest = 1 - sum_i E_i that makes the
set complete by construction (there is no exact projector onto a region
of phase space, so completeness has to be engineered rather than
inherited).

The decoherence functional over two histories alpha = (i_1 .. i_n) and
alpha' = (j_1 .. j_n) sandwiches the state between effect square roots
at each strobe and evolves it with the open-system propagator in
between, latest operator leftmost:

    D[alpha, alpha'] = Tr[ sqrt(E_{i_n}) T( ... T(sqrt(E_{i_1}) rho
                       sqrt(E_{j_1})) ... ) sqrt(E_{j_n}) ]

where T is the one-period strobe propagator.  Both T and the sandwich
sum are trace-preserving on the diagonal, so sum_alpha D[alpha, alpha]
equals Tr rho exactly; decay of the off-diagonal entries is the
decoherence being tested, not an assumption.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .classical import DuffingParams, PhasePoint, duffing_flow, langevin_flow
from .errors import DecoherenceTimeWarning, HistoryBudgetError
from .numerics import RngStream, hermiticity_defect
from .oscillator_ops import BasisSpec, coherent_state, phase_to_alpha
from .qsd import (
    DEFAULT_STEPS_PER_PERIOD,
    DensityOperator,
    UnravelingSpec,
    _check_hbar,
    _check_params,
    propagate_stack,
)

# default D-matrix entry budget: (cells+1)^(2*n_times) pair propagations
DEFAULT_BUDGET = 10_000

# spectral safety margin for the POVM weight cap
WEIGHT_MARGIN = 0.999

# probabilities below this floor are excluded from the epsilon ratio
PROBABILITY_FLOOR = 1e-12


@dataclass(frozen=True)
class CellGrid:
    """Rectangular lattice of coherent-state cells plus a remainder effect.

    Cells are enumerated row-major over (x_centers, p_centers); the
    remainder carries index n_cells.  The weight is common to all cells and
    small enough that E_rest = 1 - sum_i E_i stays positive semidefinite.
    """

    basis: BasisSpec
    x_centers: np.ndarray
    p_centers: np.ndarray
    dq: float
    dp: float
    weight: float
    alphas: np.ndarray      # (n_cells,) coherent labels, row-major
    amplitudes: np.ndarray  # (n_cells, dim) coherent amplitudes

    @property
    def n_cells(self) -> int:
        return self.alphas.size

    @property
    def n_effects(self) -> int:
        return self.n_cells + 1

    @property
    def rest_index(self) -> int:
        return self.n_cells

    def effects(self) -> list[np.ndarray]:
        """E_1 .. E_k, E_rest; sums to the identity to the last bit."""
        out = [self.weight * np.outer(v, v.conj()) for v in self.amplitudes]
        rest = np.eye(self.basis.dim, dtype=complex)
        for e in out:
            rest -= e
        out.append(rest)
        return out

    def sqrt_effects(self) -> list[np.ndarray]:
        """Square roots of the effects (branch operators).

        Rank-one effects take sqrt(c) on the same projector; the remainder
        goes through an eigendecomposition with tiny negative eigenvalues
        (within the construction tolerance) clipped to zero.
        """
        out = [math.sqrt(self.weight) * np.outer(v, v.conj())
               for v in self.amplitudes]
        rest = self.effects()[-1]
        vals, vecs = np.linalg.eigh(rest)
        out.append((vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.conj().T)
        return out

    def response(self, q: np.ndarray, p: np.ndarray) -> np.ndarray:
        """POVM response of classical phase points, shape (len(q), n_effects).

        Entry (s, i) is Tr(E_i |beta_s><beta_s|) = c*exp(-|beta_s - alpha_i|^2)
        for a point with coherent label beta_s; the remainder column is the
        complement, clipped at zero against construction-tolerance rounding.
        """
        q = np.atleast_1d(np.asarray(q, dtype=float))
        p = np.atleast_1d(np.asarray(p, dtype=float))
        beta = (q / (2.0 * self.basis.x_scale)
                + 1j * p / (2.0 * self.basis.p_scale))
        r = self.weight * np.exp(
            -np.abs(beta[:, None] - self.alphas[None, :]) ** 2)
        rest = np.clip(1.0 - r.sum(axis=1), 0.0, None)
        return np.concatenate([r, rest[:, None]], axis=1)

    def cell_index(self, q: float, p: float) -> int:
        """Index of the rectangular cell containing (q, p), rest if outside."""
        ix = np.flatnonzero(np.abs(np.asarray(self.x_centers) - q) <= self.dq / 2)
        ip = np.flatnonzero(np.abs(np.asarray(self.p_centers) - p) <= self.dp / 2)
        if ix.size == 0 or ip.size == 0:
            return self.rest_index
        return int(ix[0] * self.p_centers.size + ip[0])


def cell_grid(basis: BasisSpec, x_centers, p_centers,
              spacing: tuple[float, float] | None = None,
              weight: float | None = None) -> CellGrid:
    """Build a phase-space cell grid over the given center lattice.

    spacing defaults to the lattice pitch when an axis has several centers
    and to 3 oscillator lengths otherwise.  The default weight is the
    coherent-state resolution-of-identity value dq*dp/(2*pi*hbar), capped
    just under the spectral bound that keeps the remainder effect positive
    semidefinite (the uncapped value exceeds the bound whenever cells are
    wider than about sqrt(2*pi*hbar), i.e. for any grid coarse enough to
    distinguish its cells).  An explicit weight is used as given and the
    grid is rejected if the remainder fails positive semidefiniteness.
    """
    x_centers = np.sort(np.asarray(x_centers, dtype=float).ravel())
    p_centers = np.sort(np.asarray(p_centers, dtype=float).ravel())
    if x_centers.size == 0 or p_centers.size == 0:
        raise ValueError("cell grid needs at least one center per axis")
    ell = math.sqrt(basis.hbar / (basis.mass * basis.omega_ref))
    if spacing is None:
        dq = float(np.min(np.diff(x_centers))) if x_centers.size > 1 else 3.0 * ell
        dp = (float(np.min(np.diff(p_centers))) if p_centers.size > 1
              else 3.0 * basis.hbar / ell)
    else:
        dq, dp = float(spacing[0]), float(spacing[1])
    if not (dq > 0 and dp > 0):
        raise ValueError(f"cell spacing must be positive, got ({dq}, {dp})")

    amps = []
    alphas = []
    for q in x_centers:
        for p in p_centers:
            amps.append(coherent_state(basis, q, p).amplitudes)
            alphas.append(phase_to_alpha(basis, q, p))
    amplitudes = np.array(amps)
    # largest eigenvalue of sum_i |a_i><a_i| via the cheaper Gram matrix
    gram = amplitudes.conj() @ amplitudes.T
    smax = float(np.linalg.eigvalsh(gram)[-1])
    if weight is None:
        weight = min(dq * dp / (2.0 * math.pi * basis.hbar),
                     WEIGHT_MARGIN / smax)
    else:
        if weight <= 0:
            raise ValueError(f"weight must be positive, got {weight}")
        if weight * smax > 1.0 + 1e-8:
            raise ValueError(
                f"weight {weight:.4g} leaves the remainder effect indefinite "
                f"(needs <= {1.0 / smax:.4g} for these centers)"
            )
    grid = CellGrid(basis=basis, x_centers=x_centers, p_centers=p_centers,
                    dq=dq, dp=dp, weight=float(weight),
                    alphas=np.array(alphas), amplitudes=amplitudes)
    lo = float(np.linalg.eigvalsh(grid.effects()[-1])[0])
    if lo < -1e-8:
        raise ValueError(
            f"remainder effect eigenvalue {lo:.3e} below -1e-8; reduce the "
            f"weight or thin the grid"
        )
    return grid


@dataclass(frozen=True)
class HistorySpec:
    """One history: strobe times and the cell index occupied at each."""

    times: np.ndarray
    cells: tuple[int, ...]

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size != len(self.cells):
            raise ValueError("times and cells must have matching lengths")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("history times must be strictly increasing")


@dataclass(frozen=True)
class DecoherenceMatrix:
    """Decoherence functional over the full enumerated history set.

    histories[k] is the cell-index tuple of row/column k (row-major over
    strobe slots, remainder last per slot).  Hermiticity and diagonal
    reality are construction invariants and are checked here.
    """

    matrix: np.ndarray
    histories: tuple[tuple[int, ...], ...]
    grid: CellGrid
    times: np.ndarray

    def __post_init__(self):
        n = len(self.histories)
        if self.matrix.shape != (n, n):
            raise ValueError(
                f"matrix shape {self.matrix.shape} does not match "
                f"{n} histories"
            )
        if hermiticity_defect(self.matrix) > 1e-10:
            raise ValueError("decoherence matrix is not Hermitian to 1e-10")
        if float(np.min(self.matrix.diagonal().real)) < -1e-10:
            raise ValueError("negative history probability below -1e-10")

    def diagonal_sum(self) -> float:
        return float(np.sum(self.matrix.diagonal().real))


@dataclass(frozen=True)
class HistoryTable:
    """Diagonal probabilities plus the worst normalized off-diagonal."""

    histories: tuple[tuple[int, ...], ...]
    probabilities: np.ndarray
    epsilon: float


def decoherence_time(params: DuffingParams, d: float) -> float:
    """Timescale hbar^2/(2*M*Gamma*kT*d^2) for cells of size d to decohere.

    Returns inf (with a warning) when Gamma or kT vanishes: without a
    reservoir the off-diagonal entries have no reason to decay.
    """
    if d <= 0:
        raise ValueError(f"cell size must be positive, got {d}")
    if params.gamma == 0.0 or params.kT == 0.0:
        warnings.warn(
            "decoherence time undefined (Gamma or kT is zero); histories "
            "may retain interference", DecoherenceTimeWarning)
        return math.inf
    return params.hbar ** 2 / (2.0 * params.mass * params.gamma
                               * params.kT * d ** 2)


def _enumerate(n_effects: int, n_times: int) -> tuple[tuple[int, ...], ...]:
    idx = np.indices((n_effects,) * n_times).reshape(n_times, -1).T
    return tuple(tuple(int(i) for i in row) for row in idx)


def decoherence_functional(rho0: DensityOperator, grid: CellGrid,
                           n_times: int, params: DuffingParams,
                           spec: UnravelingSpec, dt: float | None = None,
                           budget: int = DEFAULT_BUDGET) -> DecoherenceMatrix:
    """Decoherence functional over all (cells+1)^n_times histories.

    Branch pairs are carried level by level as one stack: effects applied
    at t = 0, one strobe period of linear open-system propagation, effects
    again, and so on; the final effect layer is folded into the trace so
    the largest propagated stack has (cells+1)^(2*(n_times-1)) matrices.
    """
    if n_times < 1:
        raise ValueError(f"n_times must be >= 1, got {n_times}")
    basis = grid.basis
    if rho0.basis != basis:
        raise ValueError("state and grid use different bases")
    _check_params(basis, params)
    _check_hbar(spec, basis)
    ne = grid.n_effects
    n_hist = ne ** n_times
    if n_hist * n_hist > budget:
        raise HistoryBudgetError(
            f"{n_hist}^2 = {n_hist * n_hist} decoherence-matrix entries "
            f"exceed the budget of {budget}; coarsen the grid or reduce "
            f"n_times"
        )
    t_dec = decoherence_time(params, min(grid.dq, grid.dp))
    if math.isfinite(t_dec) and params.period < t_dec:
        warnings.warn(
            f"strobe spacing {params.period:.3g} is below the decoherence "
            f"time {t_dec:.3g}; off-diagonal suppression is not expected",
            DecoherenceTimeWarning)

    sq = grid.sqrt_effects()
    dim = basis.dim
    # X[(i1,j1,...,ik,jk)] as a flat stack, pair digits fastest-last
    stack = np.empty((ne * ne, dim, dim), dtype=complex)
    m = rho0.matrix
    for i in range(ne):
        for j in range(ne):
            stack[i * ne + j] = sq[i] @ m @ sq[j]

    for _ in range(n_times - 2):
        stack = propagate_stack(stack, basis, params, spec, dt)
        grown = np.empty((stack.shape[0] * ne * ne, dim, dim), dtype=complex)
        for i in range(ne):
            for j in range(ne):
                grown[(i * ne + j)::ne * ne] = np.matmul(
                    sq[i], np.matmul(stack, sq[j]))
        stack = grown
    if n_times > 1:
        stack = propagate_stack(stack, basis, params, spec, dt)
        # the final layer folds straight into the trace, Tr(sq_i X sq_j)
        # = Tr(X sq_j sq_i), so the full ne^(2 n) stack never materializes
        pair = np.empty((ne, ne, dim, dim), dtype=complex)
        for i in range(ne):
            for j in range(ne):
                pair[i, j] = sq[j] @ sq[i]
        d_interleaved = np.einsum("mab,ijba->mij", stack, pair).reshape(-1)
    else:
        d_interleaved = np.trace(stack, axis1=1, axis2=2)

    # digits currently run (i1, j1, ..., in, jn); regroup to (i..., j...)
    full = d_interleaved.reshape((ne,) * (2 * n_times))
    perm = list(range(0, 2 * n_times, 2)) + list(range(1, 2 * n_times, 2))
    d = full.transpose(perm).reshape(n_hist, n_hist)
    d = 0.5 * (d + d.conj().T)

    out = DecoherenceMatrix(matrix=d, histories=_enumerate(ne, n_times),
                            grid=grid,
                            times=params.period * np.arange(n_times))
    total = out.diagonal_sum()
    if abs(total - 1.0) > 1e-8:
        raise ValueError(
            f"history probabilities sum to {total!r}, off unity by more "
            f"than 1e-8; reduce dt"
        )
    return out


def history_probabilities(dm: DecoherenceMatrix) -> HistoryTable:
    """Diagonal probabilities and the decoherence quality epsilon.

    epsilon = max |D[a,a']| / sqrt(p_a * p_a') over distinct pairs whose
    probabilities both clear a small floor (ratios between numerically
    empty histories carry no information).
    """
    p = dm.matrix.diagonal().real.copy()
    n = p.size
    eps = 0.0
    live = p > PROBABILITY_FLOOR
    for a in range(n):
        if not live[a]:
            continue
        for b in range(a + 1, n):
            if not live[b]:
                continue
            r = abs(dm.matrix[a, b]) / math.sqrt(p[a] * p[b])
            if r > eps:
                eps = r
    return HistoryTable(histories=dm.histories, probabilities=p, epsilon=eps)


def classical_cell_frequencies(grid: CellGrid, params: DuffingParams,
                               start: PhasePoint, n_times: int,
                               n_samples: int, rng: RngStream | None = None,
                               dt: float | None = None) -> np.ndarray:
    """History frequencies of a classical Langevin ensemble, POVM-weighted.

    Initial conditions are sampled from the Gaussian Wigner function of the
    coherent state at `start`; every trajectory then contributes the product
    of its POVM responses at the strobes, so the coarse-graining matches the
    quantum cells exactly.  Returns a vector over the same row-major history
    enumeration as the decoherence functional.
    """
    if n_times < 1:
        raise ValueError(f"n_times must be >= 1, got {n_times}")
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    if rng is None:
        raise ValueError("classical_cell_frequencies requires an RngStream")
    basis = grid.basis
    if dt is None:
        dt = params.period / DEFAULT_STEPS_PER_PERIOD
    spp = max(1, int(round(params.period / dt)))
    dt = params.period / spp
    g = rng.generator
    q = start.x + basis.x_scale * g.standard_normal(n_samples)
    p = start.p + basis.p_scale * g.standard_normal(n_samples)

    weights = grid.response(q, p)
    for k in range(1, n_times):
        for s in range(n_samples):
            if params.noise_strength > 0.0:
                traj = langevin_flow(params, PhasePoint(q[s], p[s]),
                                     params.period, dt,
                                     rng=rng.child((k - 1) * n_samples + s),
                                     record_stride=spp)
            else:
                traj = duffing_flow(params, PhasePoint(q[s], p[s]),
                                    params.period, dt, record_stride=spp)
            q[s], p[s] = traj.x[-1], traj.p[-1]
        r = grid.response(q, p)
        weights = (weights[:, :, None] * r[:, None, :]).reshape(n_samples, -1)
    return weights.mean(axis=0)


@dataclass(frozen=True)
class ProbabilityCheck:
    """Quantum history probabilities against classical cell frequencies."""

    histories: tuple[tuple[int, ...], ...]
    quantum: np.ndarray
    classical: np.ndarray
    tv_distance: float


def classical_probability_check(table: HistoryTable,
                                frequencies: np.ndarray) -> ProbabilityCheck:
    """Compare a quantum history table against classical frequencies.

    Both distributions are clipped at zero and renormalized, then scored by
    total variation distance; the per-history columns are kept for
    reporting.
    """
    f = np.asarray(frequencies, dtype=float)
    if f.shape != table.probabilities.shape:
        raise ValueError(
            f"frequency vector has shape {f.shape}, expected "
            f"{table.probabilities.shape}"
        )
    if f.sum() <= 0:
        raise ValueError("classical frequencies are empty")
    pq = np.clip(table.probabilities, 0.0, None)
    pq = pq / pq.sum()
    pc = np.clip(f, 0.0, None)
    pc = pc / pc.sum()
    tv = 0.5 * float(np.abs(pq - pc).sum())
    return ProbabilityCheck(histories=table.histories, quantum=pq,
                            classical=pc, tv_distance=tv)
