"""Operators and states in a truncated harmonic-oscillator (Fock) basis.

Ladder convention:

    x = sqrt(hbar/(2*M*omega_ref)) * (a + adag)
    p = i*sqrt(hbar*M*omega_ref/2) * (adag - a)

so a coherent state centered at phase-space point (q, p) has label

    alpha = sqrt(M*omega_ref/(2*hbar))*q + i*p/sqrt(2*hbar*M*omega_ref).

Truncation artifacts are left visible: [a, adag] equals the identity except
for the (N-1, N-1) entry, which is -(N-1).
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import expm

from ._kernels import displace_apply
from .classical import DuffingParams, PhasePoint
from .errors import TruncationUnsafeError
from .numerics import expectation


@dataclass(frozen=True)
class BasisSpec:
    """Truncated oscillator basis: dimension, action scale, mass, reference frequency."""

    dim: int
    hbar: float = 1.0
    mass: float = 1.0
    omega_ref: float = 1.0

    def __post_init__(self):
        if not (isinstance(self.dim, int) and self.dim >= 2):
            raise ValueError(f"basis dimension must be an integer >= 2, got {self.dim}")
        if not self.hbar > 0:
            raise ValueError(f"hbar must be positive, got {self.hbar}")
        if not self.mass > 0:
            raise ValueError(f"mass must be positive, got {self.mass}")
        if not self.omega_ref > 0:
            raise ValueError(f"omega_ref must be positive, got {self.omega_ref}")

    @property
    def x_scale(self) -> float:
        """Matrix-element scale of x: sqrt(hbar/(2*M*omega_ref))."""
        return math.sqrt(self.hbar / (2.0 * self.mass * self.omega_ref))

    @property
    def p_scale(self) -> float:
        """Matrix-element scale of p: sqrt(hbar*M*omega_ref/2)."""
        return math.sqrt(self.hbar * self.mass * self.omega_ref / 2.0)


@dataclass(frozen=True)
class OperatorTable:
    """Shared immutable operator cache for one basis.

    x2/x3/x4 and p2 are built so they are exactly Hermitian in floating
    point (symmetrized products of real symmetric/antisymmetric factors).
    """

    a: np.ndarray
    adag: np.ndarray
    n: np.ndarray
    x: np.ndarray
    p: np.ndarray
    x2: np.ndarray
    x3: np.ndarray
    x4: np.ndarray
    p2: np.ndarray
    identity: np.ndarray


def ladder(basis: BasisSpec) -> np.ndarray:
    """Annihilation operator: a[n, n+1] = sqrt(n+1)."""
    return np.diag(np.sqrt(np.arange(1.0, basis.dim)), k=1).astype(complex)


@lru_cache(maxsize=32)
def operator_table(basis: BasisSpec) -> OperatorTable:
    dim = basis.dim
    a_real = np.diag(np.sqrt(np.arange(1.0, dim)), k=1)
    sym = a_real + a_real.T            # real symmetric
    antisym = a_real.T - a_real        # real antisymmetric, adag - a
    x = basis.x_scale * sym
    x2 = x @ x
    x3_raw = x @ x2
    x3 = 0.5 * (x3_raw + x3_raw.T)     # restore exact symmetry lost to fp order
    x4 = x2 @ x2
    p2 = -(basis.p_scale ** 2) * (antisym @ antisym)
    return OperatorTable(
        a=a_real.astype(complex),
        adag=a_real.T.astype(complex),
        n=np.diag(np.arange(float(dim))).astype(complex),
        x=x.astype(complex),
        p=(1j * basis.p_scale) * antisym,
        x2=x2.astype(complex),
        x3=x3.astype(complex),
        x4=x4.astype(complex),
        p2=p2.astype(complex),
        identity=np.eye(dim, dtype=complex),
    )


def position_op(basis: BasisSpec) -> np.ndarray:
    return operator_table(basis).x.copy()


def momentum_op(basis: BasisSpec) -> np.ndarray:
    return operator_table(basis).p.copy()


def number_op(basis: BasisSpec) -> np.ndarray:
    return operator_table(basis).n.copy()


def duffing_hamiltonian(basis: BasisSpec, params: DuffingParams, t: float) -> np.ndarray:
    """H(t) = p^2/2M + x^4/4 - x^2/2 - q*M*cos(omega0*t)*x as a basis matrix.

    The drive term makes the Heisenberg equations match the classical force
    law q*M*cos(omega0*t); with q = 0 the result is time-independent.
    """
    ops = operator_table(basis)
    h = ops.p2 / (2.0 * params.mass) + ops.x4 / 4.0 - ops.x2 / 2.0
    drive = params.q * params.mass * math.cos(params.omega0 * t)
    if drive != 0.0:
        h = h - drive * ops.x
    return h


def phase_to_alpha(basis: BasisSpec, q: float, p: float) -> complex:
    """Coherent-state label of the phase-space point (q, p)."""
    return complex(q / (2.0 * basis.x_scale), p / (2.0 * basis.p_scale))


def alpha_to_phase(basis: BasisSpec, alpha: complex) -> tuple[float, float]:
    """Inverse of phase_to_alpha."""
    return (2.0 * basis.x_scale * alpha.real, 2.0 * basis.p_scale * alpha.imag)


def _check_truncation_safe(basis: BasisSpec, alpha: complex):
    # displaced states need headroom: mean occupation |alpha|^2 well under dim
    if abs(alpha) ** 2 >= basis.dim / 4.0:
        raise TruncationUnsafeError(
            f"|alpha|^2 = {abs(alpha) ** 2:.3g} exceeds dim/4 = {basis.dim / 4.0:.3g}; "
            f"increase the basis dimension or recenter"
        )


@dataclass(frozen=True)
class QuantumState:
    """State vector in a (possibly displaced) truncated oscillator basis.

    center records the phase-space displacement of the basis frame; all
    amplitudes are relative to that frame.  Lab-frame expectation values are
    the frame values shifted by the center.
    """

    amplitudes: np.ndarray
    basis: BasisSpec
    center: PhasePoint = PhasePoint(0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.amplitudes.shape != (self.basis.dim,):
            raise ValueError(
                f"amplitude vector has shape {self.amplitudes.shape}, "
                f"basis dimension is {self.basis.dim}"
            )

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> "QuantumState":
        return QuantumState(self.amplitudes / self.norm(), self.basis, self.center)

    def expectation(self, op: np.ndarray) -> complex:
        """Frame expectation <psi|op|psi>/<psi|psi>."""
        return expectation(op, self.amplitudes)

    def tail_weight(self) -> float:
        """Relative weight of the two topmost basis levels (truncation gauge)."""
        amps = self.amplitudes
        top = abs(amps[-1]) ** 2 + abs(amps[-2]) ** 2
        return float(top / (np.linalg.norm(amps) ** 2))

    def mean_ladder(self) -> complex:
        """Frame expectation <a> computed without building the matrix."""
        amps = self.amplitudes
        w = np.sqrt(np.arange(1.0, self.basis.dim))
        num = np.sum(np.conj(amps[:-1]) * w * amps[1:])
        return complex(num / (np.linalg.norm(amps) ** 2))

    def mean_x(self) -> float:
        """Lab-frame <x>: frame value plus the center offset."""
        return self.center.x + 2.0 * self.basis.x_scale * self.mean_ladder().real

    def mean_p(self) -> float:
        """Lab-frame <p>."""
        return self.center.p + 2.0 * self.basis.p_scale * self.mean_ladder().imag


def fock_state(basis: BasisSpec, n: int) -> QuantumState:
    if not 0 <= n < basis.dim:
        raise ValueError(f"Fock index {n} outside basis of dimension {basis.dim}")
    amps = np.zeros(basis.dim, dtype=complex)
    amps[n] = 1.0
    return QuantumState(amps, basis)


def coherent_state(basis: BasisSpec, q: float, p: float) -> QuantumState:
    """Normalized coherent state |q, p> in the fixed (undisplaced) frame.

    Amplitudes follow the stable recurrence c_{n+1} = c_n * alpha/sqrt(n+1)
    and are renormalized after truncation, so <x> = q and <p> = p hold to
    truncation tolerance only.
    """
    alpha = phase_to_alpha(basis, q, p)
    _check_truncation_safe(basis, alpha)
    amps = np.empty(basis.dim, dtype=complex)
    amps[0] = 1.0
    for n in range(basis.dim - 1):
        amps[n + 1] = amps[n] * alpha / math.sqrt(n + 1)
    amps /= np.linalg.norm(amps)
    return QuantumState(amps, basis)


def displacement(basis: BasisSpec, q: float, p: float) -> np.ndarray:
    """Displacement matrix exp(alpha*adag - conj(alpha)*a) for (q, p).

    Unitary to truncation tolerance; maps the ground state onto
    coherent_state(q, p).
    """
    alpha = phase_to_alpha(basis, q, p)
    _check_truncation_safe(basis, alpha)
    a_real = np.diag(np.sqrt(np.arange(1.0, basis.dim)), k=1)
    gen = alpha * a_real.T - np.conj(alpha) * a_real
    return expm(gen)


def displace_amplitudes(amplitudes: np.ndarray, alpha: complex) -> np.ndarray:
    """Apply exp(alpha*adag - conj(alpha)*a) directly to an amplitude vector.

    Matrix-free route (scaled Taylor series of the tridiagonal generator);
    agrees with multiplying by displacement(...) and is what the moving-basis
    evolution uses for frame shifts.
    """
    vec = np.ascontiguousarray(amplitudes, dtype=np.complex128)
    return displace_apply(vec, complex(alpha))
