"""Open-system evolution: Lindblad master propagation and its QSD unraveling.

Two layers share one set of conventions:

* density operators evolve under
  drho/dt = -(i/hbar)[H, rho] + sum_k (L_k rho L_k^dag - {L_k^dag L_k, rho}/2),
* pure states evolve under the quantum-state-diffusion equation
  |dpsi> = -(i/hbar)H|psi> dt
           + sum_k (<L_k^dag>L_k - L_k^dag L_k/2 - <L_k^dag><L_k>/2)|psi> dt
           + sum_k (L_k - <L_k>)|psi> dxi_k
  with independent complex Wiener increments E[|dxi|^2] = dt, E[dxi^2] = 0,
  renormalized after every step.

The deterministic drift (Hamiltonian plus nonlinear damping terms) is
integrated with RK4 inside each stochastic step while the noise enters as a
plain Euler (Ito) increment, keeping strong order 0.5 / weak order 1 of the
Euler scheme.  A first-order drift treatment is not an option here: the
truncated-basis top modes rotate at frequencies where forward Euler's
|1 - i*w*dt| > 1 growth beats the 2*Gamma*n damping at the default step, and
even in the stable region its O(dt) phase error fails the coherent-rotation
fidelity this module promises.  RK4's stability region covers the spectrum
with the default dt = (2*pi/omega0)/1000 at N <= 64.

Trajectory ensembles draw from per-trajectory counter-based streams
(rng.child(k)), so any single trajectory can be regenerated in isolation.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from ._kernels import displace_apply, qsd_frame_block
from .classical import DuffingParams, PhasePoint, SectionCloud
from .errors import StepSizeFailure, TruncationOverflowError, TruncationUnsafeError
from .numerics import RngStream, hermitian_part
from .oscillator_ops import (
    BasisSpec,
    QuantumState,
    alpha_to_phase,
    operator_table,
    phase_to_alpha,
)

MODES = ("zero-temperature-damping", "finite-temperature")

# relative weight allowed in the two topmost basis levels
TAIL_TOL = 1e-4

# master_step rejects states whose smallest eigenvalue falls below this
POSITIVITY_FLOOR = -1e-6

DEFAULT_STEPS_PER_PERIOD = 1000


@dataclass(frozen=True)
class UnravelingSpec:
    """Which environment coupling the Lindblad terms realize.

    zero-temperature-damping: single operator L = sqrt(2*Gamma)*a.
    finite-temperature: L1 = sqrt(2*Gamma*(nbar+1))*a and
    L2 = sqrt(2*Gamma*nbar)*adag with nbar = kT/(hbar*omega_ref), the
    high-temperature occupancy of the basis reference mode.

    Operators are always derived on demand, never stored.
    """

    mode: str = "zero-temperature-damping"
    gamma: float = 0.125
    kT: float = 0.0
    hbar: float = 1.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")
        if self.kT < 0:
            raise ValueError(f"kT must be nonnegative, got {self.kT}")
        if not self.hbar > 0:
            raise ValueError(f"hbar must be positive, got {self.hbar}")

    def nbar(self, omega_ref: float) -> float:
        if self.mode == "finite-temperature":
            return self.kT / (self.hbar * omega_ref)
        return 0.0

    def ladder_coefficients(self, omega_ref: float) -> tuple[float, float]:
        """(g1, g2) with L1 = g1*a, L2 = g2*adag."""
        nb = self.nbar(omega_ref)
        return (math.sqrt(2.0 * self.gamma * (nb + 1.0)),
                math.sqrt(2.0 * self.gamma * nb))


def lindblad_operators(spec: UnravelingSpec, basis: BasisSpec) -> list[np.ndarray]:
    """Lindblad operators as matrices; zero-coefficient entries are dropped.

    Dropping L2 when nbar = 0 changes how many noise draws an unraveled
    trajectory consumes, so zero-temperature runs are not draw-compatible
    with finite-temperature runs at kT = 0 in finite-temperature mode.
    """
    _check_hbar(spec, basis)
    g1, g2 = spec.ladder_coefficients(basis.omega_ref)
    ops = operator_table(basis)
    out = []
    if g1 > 0.0:
        out.append(g1 * ops.a)
    if g2 > 0.0:
        out.append(g2 * ops.adag)
    return out


def _check_hbar(spec: UnravelingSpec, basis: BasisSpec):
    if spec.hbar != basis.hbar:
        raise ValueError(
            f"inconsistent hbar: unraveling {spec.hbar}, basis {basis.hbar}"
        )


def _check_params(basis: BasisSpec, params: DuffingParams):
    if params.mass != basis.mass or params.hbar != basis.hbar:
        raise ValueError(
            "basis and oscillator parameters disagree: "
            f"mass {basis.mass} vs {params.mass}, hbar {basis.hbar} vs {params.hbar}"
        )


@dataclass(frozen=True)
class DensityOperator:
    matrix: np.ndarray
    basis: BasisSpec

    def __post_init__(self):
        dim = self.basis.dim
        if self.matrix.shape != (dim, dim):
            raise ValueError(
                f"matrix shape {self.matrix.shape} does not match basis dimension {dim}"
            )

    @classmethod
    def from_state(cls, state: QuantumState) -> "DensityOperator":
        """Lab-frame projector |psi><psi| (undoes any basis-center displacement)."""
        amps = state.amplitudes / np.linalg.norm(state.amplitudes)
        if state.center.x != 0.0 or state.center.p != 0.0:
            ac = phase_to_alpha(state.basis, state.center.x, state.center.p)
            if abs(ac) ** 2 >= state.basis.dim / 4.0:
                raise TruncationUnsafeError(
                    "basis center too far from the origin to undo the displacement; "
                    "enlarge the basis"
                )
            amps = displace_apply(np.ascontiguousarray(amps, dtype=np.complex128),
                                  complex(ac))
        return cls(np.outer(amps, amps.conj()), state.basis)

    def trace(self) -> complex:
        return complex(np.trace(self.matrix))

    def purity(self) -> float:
        return float(np.trace(self.matrix @ self.matrix).real)

    def expectation(self, op: np.ndarray) -> complex:
        return complex(np.trace(self.matrix @ op))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(hermitian_part(self.matrix))[0])

    def assert_physical(self, herm_tol: float = 1e-10, trace_tol: float = 1e-8,
                        positivity_tol: float = 1e-8):
        defect = np.max(np.abs(self.matrix - self.matrix.conj().T))
        if defect > herm_tol:
            raise AssertionError(f"Hermiticity defect {defect:.3e} > {herm_tol:.1e}")
        tr = self.trace()
        if abs(tr - 1.0) > trace_tol:
            raise AssertionError(f"trace {tr} deviates from 1 beyond {trace_tol:.1e}")
        lo = self.min_eigenvalue()
        if lo < -positivity_tol:
            raise AssertionError(f"negative eigenvalue {lo:.3e} beyond {positivity_tol:.1e}")


def trace_distance(a: DensityOperator, b: DensityOperator) -> float:
    """(1/2)||a - b||_1 for Hermitian arguments."""
    diff = hermitian_part(a.matrix - b.matrix)
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(diff))))


def duffing_hamiltonian_factory(basis: BasisSpec, params: DuffingParams):
    """Callable t -> H(t) reusing cached operator pieces.

    H(t) = p^2/2M + x^4/4 - x^2/2 - q*M*cos(omega0*t)*x.
    """
    _check_params(basis, params)
    ops = operator_table(basis)
    h0 = ops.p2 / (2.0 * params.mass) + ops.x4 / 4.0 - ops.x2 / 2.0
    x = ops.x
    qm = params.q * params.mass
    om = params.omega0

    def h_of_t(t: float) -> np.ndarray:
        if qm == 0.0:
            return h0
        return h0 - (qm * math.cos(om * t)) * x

    return h_of_t


def _lindblad_rhs(m: np.ndarray, h: np.ndarray, ls, lds, hbar: float) -> np.ndarray:
    out = (-1j / hbar) * (h @ m - m @ h)
    for l, ld in zip(ls, lds):
        out += l @ m @ l.conj().T - 0.5 * (ld @ m + m @ ld)
    return out


def master_step(rho: DensityOperator, h_of_t, spec: UnravelingSpec, t: float,
                dt: float) -> DensityOperator:
    """One RK4 step of the master equation, then Hermitize and fix the trace.

    Positivity is asserted, not repaired: an eigenvalue below -1e-6 raises
    StepSizeFailure so the caller can halve dt instead of silently hiding an
    integrator problem.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    ls = lindblad_operators(spec, rho.basis)
    lds = [l.conj().T @ l for l in ls]
    hbar = rho.basis.hbar
    m = rho.matrix
    h1 = h_of_t(t)
    h2 = h_of_t(t + 0.5 * dt)
    h3 = h_of_t(t + dt)
    k1 = _lindblad_rhs(m, h1, ls, lds, hbar)
    k2 = _lindblad_rhs(m + 0.5 * dt * k1, h2, ls, lds, hbar)
    k3 = _lindblad_rhs(m + 0.5 * dt * k2, h2, ls, lds, hbar)
    k4 = _lindblad_rhs(m + dt * k3, h3, ls, lds, hbar)
    out = m + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    out = 0.5 * (out + out.conj().T)
    out /= np.trace(out).real
    lo = float(np.linalg.eigvalsh(out)[0])
    if lo < POSITIVITY_FLOOR:
        raise StepSizeFailure(
            f"density operator eigenvalue {lo:.3e} below {POSITIVITY_FLOOR:.0e} "
            f"at t = {t + dt:.6g}; halve dt"
        )
    return DensityOperator(out, rho.basis)


def strobe_map(rho: DensityOperator, params: DuffingParams, spec: UnravelingSpec,
               dt: float | None = None) -> DensityOperator:
    """Propagate a density operator through exactly one drive period.

    The drive is periodic, so iterating this map is the stroboscopic quantum
    map of the system; dt is adjusted to divide the period exactly.
    """
    _check_params(rho.basis, params)
    if dt is None:
        dt = params.period / DEFAULT_STEPS_PER_PERIOD
    spp = max(1, int(round(params.period / dt)))
    dt = params.period / spp
    h_of_t = duffing_hamiltonian_factory(rho.basis, params)
    out = rho
    for i in range(spp):
        out = master_step(out, h_of_t, spec, i * dt, dt)
    return out


def propagate_stack(stack: np.ndarray, basis: BasisSpec, params: DuffingParams,
                    spec: UnravelingSpec, dt: float | None = None,
                    t0: float = 0.0) -> np.ndarray:
    """Linearly propagate a stack of matrices through one drive period.

    Same generator as master_step but with no Hermitization, trace fixing, or
    positivity checks: branch-operator products in the decoherence functional
    are neither Hermitian nor normalized, and their norms carry the physics.
    The generator is trace-preserving, so traces survive to rounding error.
    """
    _check_params(basis, params)
    if dt is None:
        dt = params.period / DEFAULT_STEPS_PER_PERIOD
    spp = max(1, int(round(params.period / dt)))
    dt = params.period / spp
    ls = lindblad_operators(spec, basis)
    lds = [l.conj().T @ l for l in ls]
    h_of_t = duffing_hamiltonian_factory(basis, params)
    hbar = basis.hbar

    def rhs(ms, h):
        out = (-1j / hbar) * (np.matmul(h, ms) - np.matmul(ms, h))
        for l, ld in zip(ls, lds):
            out += np.matmul(np.matmul(l, ms), l.conj().T)
            out -= 0.5 * (np.matmul(ld, ms) + np.matmul(ms, ld))
        return out

    ms = np.ascontiguousarray(stack, dtype=np.complex128)
    for i in range(spp):
        t = t0 + i * dt
        h1 = h_of_t(t)
        h2 = h_of_t(t + 0.5 * dt)
        h3 = h_of_t(t + dt)
        k1 = rhs(ms, h1)
        k2 = rhs(ms + 0.5 * dt * k1, h2)
        k3 = rhs(ms + 0.5 * dt * k2, h2)
        k4 = rhs(ms + dt * k3, h3)
        ms = ms + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return ms


def _tail_weights(psi_rows: np.ndarray) -> np.ndarray:
    return (np.abs(psi_rows[..., -1]) ** 2 + np.abs(psi_rows[..., -2]) ** 2)


def qsd_step(psi: QuantumState, h_of_t, spec: UnravelingSpec, t: float, dt: float,
             rng: RngStream, tail_tol: float = TAIL_TOL) -> QuantumState:
    """One stochastic step: RK4 drift + Euler noise + exact renormalization.

    The basis center is carried through unchanged; h_of_t must already be the
    Hamiltonian of the frame the state lives in.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    basis = psi.basis
    ls = lindblad_operators(spec, basis)
    lds = [l.conj().T @ l for l in ls]
    hbar = basis.hbar
    v = psi.amplitudes.astype(np.complex128, copy=True)

    def drift(w, h):
        out = (-1j / hbar) * (h @ w)
        n2 = float(np.vdot(w, w).real)
        for l, ld in zip(ls, lds):
            lw = l @ w
            el = np.vdot(w, lw) / n2
            out += np.conj(el) * lw - 0.5 * (ld @ w) - 0.5 * (np.conj(el) * el) * w
        return out

    h1 = h_of_t(t)
    h2 = h_of_t(t + 0.5 * dt)
    h3 = h_of_t(t + dt)
    k1 = drift(v, h1)
    k2 = drift(v + 0.5 * dt * k1, h2)
    k3 = drift(v + 0.5 * dt * k2, h2)
    k4 = drift(v + dt * k3, h3)
    out = v + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    # Ito noise: coefficients frozen at the step start
    n2 = float(np.vdot(v, v).real)
    scale = math.sqrt(dt / 2.0)
    for l in ls:
        lv = l @ v
        el = np.vdot(v, lv) / n2
        g = rng.generator.standard_normal(2)
        dxi = complex(g[0], g[1]) * scale
        out += (lv - el * v) * dxi
    out /= np.linalg.norm(out)
    tail = float(_tail_weights(out))
    if tail > tail_tol:
        raise TruncationOverflowError(
            f"top-level weight {tail:.3e} exceeds {tail_tol:.1e} at t = {t + dt:.6g}; "
            f"enlarge the basis or recenter"
        )
    return QuantumState(out, basis, psi.center)


def recenter(psi: QuantumState) -> QuantumState:
    """Shift the basis frame so the state's <a> becomes zero.

    Applies the displacement for (-<x>, -<p>) to the amplitudes and adds the
    removed offset to the center record; lab-frame expectation values are
    unchanged up to displacement roundoff.
    """
    e = psi.mean_ladder()
    basis = psi.basis
    if abs(e) ** 2 >= basis.dim / 4.0:
        raise TruncationOverflowError(
            f"recentering displacement |alpha|^2 = {abs(e) ** 2:.3g} unsafe for "
            f"dimension {basis.dim}"
        )
    amps = displace_apply(np.ascontiguousarray(psi.amplitudes, dtype=np.complex128),
                          complex(-e))
    dq, dp = alpha_to_phase(basis, e)
    center = PhasePoint(psi.center.x + dq, psi.center.p + dp, psi.center.t)
    return QuantumState(amps, basis, center)


def ensemble_density(psi0: QuantumState, h_of_t, spec: UnravelingSpec,
                     duration: float, dt: float, rng: RngStream, n_traj: int,
                     tail_tol: float = TAIL_TOL) -> DensityOperator:
    """Ensemble average of |psi><psi| over QSD trajectories at time `duration`.

    All trajectories start from psi0 and integrate synchronously as one
    batch; trajectory k draws from rng.child(k).  The mean converges to the
    master-equation state as 1/sqrt(n_traj).
    """
    if n_traj < 1:
        raise ValueError(f"n_traj must be >= 1, got {n_traj}")
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    basis = psi0.basis
    _check_hbar(spec, basis)
    ls = lindblad_operators(spec, basis)
    lts = [np.ascontiguousarray(l.T) for l in ls]
    ldts = [np.ascontiguousarray((l.conj().T @ l).T) for l in ls]
    hbar = basis.hbar
    nsteps = int(round(duration / dt))
    b = n_traj
    amps = psi0.amplitudes / np.linalg.norm(psi0.amplitudes)
    p = np.tile(amps.astype(np.complex128), (b, 1))
    gens = [rng.child(k).generator for k in range(b)]
    nl = len(ls)

    def drift(rows, h):
        out = (-1j / hbar) * (rows @ h.T)
        if nl:
            n2 = np.einsum("bn,bn->b", rows.conj(), rows).real
            for lt, ldt in zip(lts, ldts):
                lr = rows @ lt
                el = np.einsum("bn,bn->b", rows.conj(), lr) / n2
                out += (el.conj()[:, None] * lr - 0.5 * (rows @ ldt)
                        - 0.5 * (np.abs(el) ** 2)[:, None] * rows)
        return out

    scale = math.sqrt(dt / 2.0)
    chunk = max(1, (1 << 20) // max(1, b * max(nl, 1)))
    step = 0
    while step < nsteps:
        c = min(chunk, nsteps - step)
        if nl:
            z = np.empty((b, c, nl), dtype=np.complex128)
            for k in range(b):
                g = gens[k].standard_normal((c, nl, 2))
                z[k] = (g[..., 0] + 1j * g[..., 1]) * scale
        for j in range(c):
            t = (step + j) * dt
            h1 = h_of_t(t)
            h2 = h_of_t(t + 0.5 * dt)
            h3 = h_of_t(t + dt)
            k1 = drift(p, h1)
            k2 = drift(p + 0.5 * dt * k1, h2)
            k3 = drift(p + 0.5 * dt * k2, h2)
            k4 = drift(p + dt * k3, h3)
            out = p + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if nl:
                n2 = np.einsum("bn,bn->b", p.conj(), p).real
                for i, lt in enumerate(lts):
                    lr = p @ lt
                    el = np.einsum("bn,bn->b", p.conj(), lr) / n2
                    out += (lr - el[:, None] * p) * z[:, j, i][:, None]
            out /= np.linalg.norm(out, axis=1)[:, None]
            p = out
            worst = float(np.max(_tail_weights(p)))
            if worst > tail_tol:
                raise TruncationOverflowError(
                    f"top-level weight {worst:.3e} exceeds {tail_tol:.1e} at "
                    f"t = {t + dt:.6g}; enlarge the basis"
                )
        step += c
    rho = np.einsum("bi,bj->ij", p, p.conj()) / b
    rho = 0.5 * (rho + rho.conj().T)
    return DensityOperator(rho, basis)


def _lower(rows: np.ndarray, w: np.ndarray, out: np.ndarray) -> np.ndarray:
    """out = a @ row for every row: out_n = w_n * row_{n+1}."""
    out[:, :-1] = rows[:, 1:] * w
    out[:, -1] = 0.0
    return out


def _raise(rows: np.ndarray, w: np.ndarray, out: np.ndarray) -> np.ndarray:
    """out = adag @ row for every row: out_n = w_{n-1} * row_{n-1}."""
    out[:, 1:] = rows[:, :-1] * w
    out[:, 0] = 0.0
    return out


class _FrameEngine:
    """Reference moving-basis QSD integrator (plain numpy).

    qsd_section runs the compiled row kernel instead; this class implements
    the identical step in vectorized numpy and exists so tests can check the
    two routes against each other.  Batched moving-basis QSD integrator for
    the driven Duffing system.

    Each trajectory row carries its own frame center alpha_c; the frame
    Hamiltonian is the lab one expanded about the center,

        H = p^2/2M + p_c*p/M + c1*x + c2*x^2 + c3*x^3 + x^4/4
            + i*hbar*Gamma*(conj(alpha_c)*a - alpha_c*adag),

    with c1 = x_c^3 - x_c - q*M*cos(omega0*t), c2 = (3*x_c^2 - 1)/2,
    c3 = x_c.  The last term compensates the c-number shift of the Lindblad
    operators (a -> a + alpha_c), so the frame dynamics with the *unshifted*
    ladder operators reproduces the lab dynamics exactly (global phase
    aside); its sign is fixed by requiring a recentered coherent state under
    pure damping to drift as alpha_c*exp(-Gamma*t).  All operator
    applications are banded, O(B*N) each.
    """

    def __init__(self, basis: BasisSpec, params: DuffingParams, spec: UnravelingSpec,
                 n_traj: int, recenter_threshold: float, tail_tol: float):
        _check_params(basis, params)
        _check_hbar(spec, basis)
        self.basis = basis
        self.params = params
        self.spec = spec
        self.b = n_traj
        self.tail_tol = tail_tol
        self.recenter_gate = recenter_threshold * math.sqrt(basis.dim)
        self.w = np.sqrt(np.arange(1.0, basis.dim))
        self.nvec = np.arange(float(basis.dim))
        self.g1, self.g2 = spec.ladder_coefficients(basis.omega_ref)
        self.xs = basis.x_scale
        self.ps = basis.p_scale
        self.hbar = basis.hbar
        self.psi = np.zeros((n_traj, basis.dim), dtype=np.complex128)
        self.alpha_c = np.zeros(n_traj, dtype=np.complex128)
        self._scratch = [np.empty_like(self.psi) for _ in range(2)]

    def load(self, state: QuantumState):
        amps = state.amplitudes / np.linalg.norm(state.amplitudes)
        self.psi[:] = amps
        self.alpha_c[:] = phase_to_alpha(self.basis, state.center.x, state.center.p)

    # frame-center coordinates, recomputed only on recentering
    def _centers(self):
        xc = 2.0 * self.xs * self.alpha_c.real
        pc = 2.0 * self.ps * self.alpha_c.imag
        return xc, pc

    def _drift(self, rows, t, xc, pc):
        m = self.params.mass
        s0, s1 = self._scratch
        ap = _lower(rows, self.w, np.empty_like(rows))
        ad = _raise(rows, self.w, np.empty_like(rows))
        xp = self.xs * (ap + ad)
        x2p = self.xs * (_lower(xp, self.w, s0) + _raise(xp, self.w, s1))
        x3p = self.xs * (_lower(x2p, self.w, s0) + _raise(x2p, self.w, s1))
        x4p = self.xs * (_lower(x3p, self.w, s0) + _raise(x3p, self.w, s1))
        pp = (1j * self.ps) * (ad - ap)
        p2p = (1j * self.ps) * (_raise(pp, self.w, s0) - _lower(pp, self.w, s1))
        n2 = np.einsum("bn,bn->b", rows.conj(), rows).real
        ea = np.einsum("bn,bn->b", rows.conj(), ap) / n2
        c1 = (xc ** 3 - xc) - self.params.q * m * math.cos(self.params.omega0 * t)
        c2 = 0.5 * (3.0 * xc ** 2 - 1.0)
        hp = (p2p / (2.0 * m) + (pc / m)[:, None] * pp + c1[:, None] * xp
              + c2[:, None] * x2p + xc[:, None] * x3p + 0.25 * x4p
              + (1j * self.hbar * self.spec.gamma)
              * (self.alpha_c.conj()[:, None] * ap - self.alpha_c[:, None] * ad))
        out = (-1j / self.hbar) * hp
        ea2 = (np.abs(ea) ** 2)[:, None]
        if self.g1 > 0.0:
            out += (self.g1 ** 2) * (ea.conj()[:, None] * ap
                                     - 0.5 * self.nvec * rows - 0.5 * ea2 * rows)
        if self.g2 > 0.0:
            out += (self.g2 ** 2) * (ea[:, None] * ad
                                     - 0.5 * (self.nvec + 1.0) * rows - 0.5 * ea2 * rows)
        return out, ap, ad, ea

    def step(self, t: float, dt: float, z1, z2):
        """Advance all trajectories by dt; returns frame <a> after the step."""
        p = self.psi
        xc, pc = self._centers()
        k1, ap0, ad0, ea0 = self._drift(p, t, xc, pc)
        k2 = self._drift(p + 0.5 * dt * k1, t + 0.5 * dt, xc, pc)[0]
        k3 = self._drift(p + 0.5 * dt * k2, t + 0.5 * dt, xc, pc)[0]
        k4 = self._drift(p + dt * k3, t + dt, xc, pc)[0]
        out = p + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if self.g1 > 0.0:
            out += self.g1 * (ap0 - ea0[:, None] * p) * z1[:, None]
        if self.g2 > 0.0:
            out += self.g2 * (ad0 - ea0.conj()[:, None] * p) * z2[:, None]
        out /= np.linalg.norm(out, axis=1)[:, None]
        self.psi = out
        worst = float(np.max(_tail_weights(out)))
        if worst > self.tail_tol:
            raise TruncationOverflowError(
                f"top-level weight {worst:.3e} exceeds {self.tail_tol:.1e} at "
                f"t = {t + dt:.6g}; enlarge the basis, reduce dt (RK4 needs "
                f"||H||*dt/hbar < 2.8), or lower the recenter threshold"
            )
        ea = np.einsum("bn,bn->b", out.conj(), _lower(out, self.w, self._scratch[0]))
        mask = np.abs(ea) > self.recenter_gate
        if np.any(mask):
            lim = self.basis.dim / 4.0
            for b in np.flatnonzero(mask):
                shift = complex(ea[b])
                if abs(shift) ** 2 >= lim:
                    raise TruncationOverflowError(
                        f"recentering displacement |alpha|^2 = {abs(shift) ** 2:.3g} "
                        f"unsafe for dimension {self.basis.dim}"
                    )
                row = np.ascontiguousarray(self.psi[b])
                self.psi[b] = displace_apply(row, -shift)
                self.alpha_c[b] += shift
                ea[b] = 0.0
        return ea

    def lab_points(self, ea):
        x = 2.0 * self.xs * self.alpha_c.real + 2.0 * self.xs * ea.real
        p = 2.0 * self.ps * self.alpha_c.imag + 2.0 * self.ps * ea.imag
        return x, p


def qsd_section(psi0: QuantumState, params: DuffingParams, spec: UnravelingSpec,
                n_points: int, skip: int = 200, dt: float | None = None,
                rng: RngStream | None = None, n_traj: int = 1,
                recenter_threshold: float = 0.1,
                tail_tol: float = TAIL_TOL) -> SectionCloud:
    """Stroboscopic cloud of (<x>, <p>) along QSD trajectories.

    With n_traj > 1 the requested points are split over independent
    trajectories started from the same state (noise decorrelates them during
    the skip transient) and concatenated trajectory by trajectory, so the t
    column restarts at each trajectory boundary.  Points are lab-frame
    expectation values; the moving basis recenters whenever the frame |<a>|
    exceeds recenter_threshold*sqrt(dim).
    """
    if rng is None:
        raise ValueError("qsd_section requires an RngStream")
    if n_points < 1:
        raise ValueError(f"n_points must be >= 1, got {n_points}")
    if skip < 0:
        raise ValueError(f"skip must be nonnegative, got {skip}")
    b = min(n_traj, n_points)
    if b < 1:
        raise ValueError(f"n_traj must be >= 1, got {n_traj}")
    basis = psi0.basis
    if dt is None:
        dt = params.period / DEFAULT_STEPS_PER_PERIOD
    spp = max(1, int(round(params.period / dt)))
    dt = params.period / spp

    counts = np.full(b, n_points // b, dtype=np.int64)
    counts[: n_points % b] += 1
    offsets = np.concatenate(([0], np.cumsum(counts)))
    max_periods = skip + int(counts.max())

    start = psi0
    if abs(start.mean_ladder()) > 1e-12:
        start = recenter(start)
    _check_params(basis, params)
    _check_hbar(spec, basis)
    dim = basis.dim
    amps = start.amplitudes / np.linalg.norm(start.amplitudes)
    psi_rows = np.tile(amps.astype(np.complex128), (b, 1))
    alpha_c = np.full(b, phase_to_alpha(basis, start.center.x, start.center.p),
                      dtype=np.complex128)
    w = np.sqrt(np.arange(1.0, dim))
    g1, g2 = spec.ladder_coefficients(basis.omega_ref)
    gate = recenter_threshold * math.sqrt(dim)
    lim = dim / 4.0
    gens = [rng.child(k).generator for k in range(b)]
    nl = int(g1 > 0.0) + int(g2 > 0.0)
    scale = math.sqrt(dt / 2.0)
    zeros_blk = np.zeros((b, spp), dtype=np.complex128)
    ea_out = np.zeros(b, dtype=np.complex128)
    statuses = np.zeros(b, dtype=np.int64)

    xs_out = np.empty(n_points)
    ps_out = np.empty(n_points)
    ts_out = np.empty(n_points)
    for period in range(max_periods):
        z1 = z2 = zeros_blk
        if nl:
            z = np.empty((b, spp, nl), dtype=np.complex128)
            for k in range(b):
                g = gens[k].standard_normal((spp, nl, 2))
                z[k] = (g[..., 0] + 1j * g[..., 1]) * scale
            z1 = np.ascontiguousarray(z[:, :, 0])
            if nl == 2:
                z2 = np.ascontiguousarray(z[:, :, 1])
        qsd_frame_block(psi_rows, alpha_c, w, z1, z2, period * spp * dt, dt,
                        params.mass, params.gamma, params.q, params.omega0,
                        basis.hbar, basis.x_scale, basis.p_scale, g1, g2,
                        gate, tail_tol, lim, ea_out, statuses)
        if np.any(statuses != 0):
            t_now = (period + 1) * params.period
            if np.any(statuses == 2):
                raise TruncationOverflowError(
                    f"recentering displacement unsafe for dimension {dim} "
                    f"within period ending t = {t_now:.6g}"
                )
            raise TruncationOverflowError(
                f"top-level weight exceeded {tail_tol:.1e} within period ending "
                f"t = {t_now:.6g}; enlarge the basis, reduce dt (RK4 needs "
                f"||H||*dt/hbar < 2.8), or lower the recenter threshold"
            )
        local = period + 1 - skip
        if local >= 1:
            lab_x = 2.0 * basis.x_scale * (alpha_c.real + ea_out.real)
            lab_p = 2.0 * basis.p_scale * (alpha_c.imag + ea_out.imag)
            sel = np.flatnonzero(counts >= local)
            idx = offsets[sel] + local - 1
            xs_out[idx] = lab_x[sel]
            ps_out[idx] = lab_p[sel]
            ts_out[idx] = (period + 1) * params.period
    return SectionCloud(x=xs_out, p=ps_out, t=ts_out, params=params, skip=skip)
