"""Foundation layer: reproducible random streams, RK4, dense complex algebra.

Conventions used throughout the package:

* all operator matrices are dense ``complex128`` numpy arrays,
* every stochastic routine draws exclusively from an explicitly passed
  :class:`RngStream`, so ensembles are reproducible trajectory by trajectory,
* Hermitian-flagged results must satisfy ``max |A - A^dag| < 1e-12``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalOverflowError

HERMITICITY_TOL = 1e-12


@dataclass
class RngStream:
    """Counter-based random stream (Philox) keyed by ``(seed, stream_id)``.

    The same key always reproduces the identical sequence bit for bit, and
    distinct ``stream_id`` values give statistically independent streams, so
    trajectory ``k`` of an ensemble can be regenerated in isolation as
    ``RngStream(seed, k)``.
    """

    seed: int
    stream_id: int = 0
    _gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def spawn(self, stream_id: int) -> "RngStream":
        """Independent stream with the same seed and a new stream id."""
        return RngStream(self.seed, stream_id)

    def child(self, k: int) -> "RngStream":
        """k-th worker stream of this one (k < 65535).

        Ensemble members get ids in a block disjoint from the parent's and
        from other parents' blocks, so any trajectory can be regenerated
        alone from (seed, parent id, k).
        """
        if not 0 <= k < 65535:
            raise ValueError(f"child index out of range: {k}")
        return RngStream(self.seed, self.stream_id * 65536 + 1 + k)


def gauss(rng: RngStream) -> float:
    """One standard normal sample (mean 0, variance 1)."""
    return float(rng.generator.standard_normal())


def gauss_array(rng: RngStream, n: int) -> np.ndarray:
    """``n`` standard normal samples, consumed in order from the stream."""
    return rng.generator.standard_normal(n)


def complex_wiener_increment(rng: RngStream, dt: float) -> complex:
    """Complex Wiener increment dxi with E[dxi]=0, E[dxi^2]=0, E[|dxi|^2]=dt."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    g = rng.generator.standard_normal(2)
    return complex(g[0], g[1]) * np.sqrt(dt / 2.0)


def complex_wiener_increments(rng: RngStream, dt: float, shape) -> np.ndarray:
    """Array of independent complex Wiener increments with E[|dxi|^2] = dt."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if np.isscalar(shape):
        shape = (int(shape),)
    g = rng.generator.standard_normal(tuple(shape) + (2,))
    return (g[..., 0] + 1j * g[..., 1]) * np.sqrt(dt / 2.0)


def rk4_step(f, y, t: float, dt: float):
    """Classical 4th-order Runge-Kutta update for dy/dt = f(y, t).

    ``y`` may be any numpy array (real or complex, vector or matrix); the
    local error is O(dt^5) for smooth ``f``.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    k1 = f(y, t)
    k2 = f(y + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = f(y + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = f(y + dt * k3, t + dt)
    out = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise NumericalOverflowError(f"non-finite RK4 state at t={t}")
    return out


def dagger(a: np.ndarray) -> np.ndarray:
    """Conjugate transpose."""
    return a.conj().T


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} @ {b.shape}")
    return a @ b


def matvec(a: np.ndarray, v: np.ndarray) -> np.ndarray:
    if a.shape[1] != v.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} @ {v.shape}")
    return a @ v


def trace(a: np.ndarray) -> complex:
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"trace of non-square matrix {a.shape}")
    return complex(np.trace(a))


def expectation(a: np.ndarray, psi: np.ndarray) -> complex:
    """<psi|A|psi> / <psi|psi>."""
    if a.shape[1] != psi.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} on {psi.shape}")
    return complex(np.vdot(psi, a @ psi) / np.vdot(psi, psi))


def hermiticity_defect(a: np.ndarray) -> float:
    """max_jk |A_jk - conj(A_kj)|."""
    return float(np.max(np.abs(a - a.conj().T)))


def assert_hermitian(a: np.ndarray, tol: float = HERMITICITY_TOL, what: str = "matrix"):
    d = hermiticity_defect(a)
    if d >= tol:
        raise ValueError(f"{what} not Hermitian: defect {d:.3e} >= {tol:.1e}")


def hermitian_part(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.conj().T)
