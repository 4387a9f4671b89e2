"""Wigner distributions on phase-space grids, plus histogram comparison tools.

The Wigner transform used everywhere is

    W(x, p) = (1/(2*pi*hbar)) * Int dxi exp(-i*p*xi/hbar)
              * <x + xi/2| rho |x - xi/2>,

normalized so that Int W dx dp = Tr rho = 1 and the vacuum of the reference
mode is the Gaussian (1/(pi*hbar)) * exp(-(M*w*x^2 + p^2/(M*w))/hbar).  W is
real for Hermitian rho and bounded by 1/(pi*hbar) in magnitude, but not
pointwise positive; classical-limit comparisons clip the negative part and
record how much mass that discarded.
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.ndimage

from .classical import DuffingParams
from .errors import GridCoverageError
from .oscillator_ops import operator_table
from .qsd import DensityOperator, UnravelingSpec, strobe_map

# grids must reach this many standard deviations past the state's mean
COVERAGE_SIGMA = 4.0


@dataclass(frozen=True)
class WignerGrid:
    """W sampled on the outer product of uniform x and p grids.

    values[i, j] = W(x[i], p[j]).
    """

    x: np.ndarray
    p: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.x.size, self.p.size):
            raise ValueError(
                f"values shape {self.values.shape} does not match grids "
                f"({self.x.size}, {self.p.size})"
            )

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def dp(self) -> float:
        return float(self.p[1] - self.p[0])

    def integral(self) -> float:
        return float(self.values.sum() * self.dx * self.dp)

    def position_marginal(self) -> np.ndarray:
        """Int W dp, one value per x node; equals <x|rho|x> on the grid."""
        return self.values.sum(axis=1) * self.dp

    def momentum_marginal(self) -> np.ndarray:
        return self.values.sum(axis=0) * self.dx


def oscillator_wavefunctions(basis, u: np.ndarray) -> np.ndarray:
    """phi_n(u) for n < dim, shape (dim, len(u)).

    Position eigenfunctions of the reference mode, built with the stable
    recurrence h_{n+1} = s*sqrt(2/(n+1))*h_n - sqrt(n/(n+1))*h_{n-1} on
    Gaussian-weighted Hermite functions, so no explicit factorials appear.
    """
    ell = math.sqrt(basis.hbar / (basis.mass * basis.omega_ref))
    s = np.asarray(u, dtype=float) / ell
    out = np.empty((basis.dim, s.size))
    h_prev = np.pi ** -0.25 * np.exp(-0.5 * s * s)
    out[0] = h_prev
    if basis.dim > 1:
        h = s * math.sqrt(2.0) * h_prev
        out[1] = h
        for n in range(1, basis.dim - 1):
            h, h_prev = (s * math.sqrt(2.0 / (n + 1)) * h
                         - math.sqrt(n / (n + 1.0)) * h_prev), h
            out[n + 1] = h
    return out / math.sqrt(ell)


def _moments(rho: DensityOperator):
    ops = operator_table(rho.basis)
    mx = rho.expectation(ops.x).real
    mp = rho.expectation(ops.p).real
    vx = max(rho.expectation(ops.x2).real - mx * mx, 0.0)
    vp = max(rho.expectation(ops.p2).real - mp * mp, 0.0)
    return mx, mp, math.sqrt(vx), math.sqrt(vp)


def _check_coverage(rho: DensityOperator, x: np.ndarray, p: np.ndarray):
    mx, mp, sx, sp = _moments(rho)
    z = COVERAGE_SIGMA
    lo_x, hi_x = mx - z * sx, mx + z * sx
    lo_p, hi_p = mp - z * sp, mp + z * sp
    if x[0] > lo_x or x[-1] < hi_x or p[0] > lo_p or p[-1] < hi_p:
        suggested = ((mx - 5 * sx, mx + 5 * sx), (mp - 5 * sp, mp + 5 * sp))
        raise GridCoverageError(
            f"grid x [{x[0]:.3g}, {x[-1]:.3g}], p [{p[0]:.3g}, {p[-1]:.3g}] "
            f"does not reach {z} standard deviations around the state "
            f"(x: {mx:.3g} +- {sx:.3g}, p: {mp:.3g} +- {sp:.3g})",
            suggested=suggested,
        )


def wigner_transform(rho: DensityOperator, x: np.ndarray, p: np.ndarray,
                     check_coverage: bool = True) -> WignerGrid:
    """Wigner distribution of a density operator on the given grids.

    The chord integral over xi runs on a midpoint grid sized from the state:
    the xi span covers the x extent plus 10 oscillator lengths (where the
    wavefunctions have died off), and the xi spacing resolves the fastest
    requested momentum phase.  Raises GridCoverageError when the grid would
    clip the state (disable with check_coverage=False, e.g. for zoomed
    plots).
    """
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    if x.size < 2 or p.size < 2:
        raise ValueError("grids need at least 2 nodes per axis")
    basis = rho.basis
    hbar = basis.hbar
    if check_coverage:
        _check_coverage(rho, x, p)
    ell = math.sqrt(hbar / (basis.mass * basis.omega_ref))
    p_max = float(np.max(np.abs(p)))
    dxi = ell / 3.0
    if p_max > 0:
        dxi = min(dxi, 0.4 * hbar / p_max)
    xi_max = (x[-1] - x[0]) + 10.0 * ell
    half = max(2, int(math.ceil(xi_max / dxi)))
    # midpoint nodes, symmetric about xi = 0
    xi = (np.arange(-half, half) + 0.5) * dxi
    phase = np.exp((-1j / hbar) * np.outer(xi, p))
    m = rho.matrix
    values = np.empty((x.size, p.size))
    for i, xi_node in enumerate(x):
        plus = oscillator_wavefunctions(basis, xi_node + 0.5 * xi)
        minus = oscillator_wavefunctions(basis, xi_node - 0.5 * xi)
        chi = np.einsum("mj,mj->j", plus, (m @ minus).real) \
            + 1j * np.einsum("mj,mj->j", plus, (m @ minus).imag)
        values[i] = (chi @ phase).real
    values *= dxi / (2.0 * math.pi * hbar)
    return WignerGrid(x=x, p=p, values=values)


def invariant_wigner(rho: DensityOperator, params: DuffingParams,
                     spec: UnravelingSpec, x: np.ndarray, p: np.ndarray,
                     n_iterates: int, skip: int = 20,
                     dt: float | None = None) -> WignerGrid:
    """Wigner function of the stroboscopic time average of the quantum map.

    Iterates the one-period map, discards `skip` transient strobes, averages
    the density operator over the next `n_iterates` strobes and transforms
    the average once (the transform is linear in rho).
    """
    if n_iterates < 1:
        raise ValueError(f"n_iterates must be >= 1, got {n_iterates}")
    if skip < 0:
        raise ValueError(f"skip must be nonnegative, got {skip}")
    out = rho
    for _ in range(skip):
        out = strobe_map(out, params, spec, dt)
    acc = np.zeros_like(out.matrix)
    for _ in range(n_iterates):
        out = strobe_map(out, params, spec, dt)
        acc += out.matrix
    avg = DensityOperator(acc / n_iterates, rho.basis)
    return wigner_transform(avg, x, p, check_coverage=False)


def nonnegative_part(values: np.ndarray) -> tuple[np.ndarray, float]:
    """Clip negatives and renormalize to unit mass.

    Returns (normalized nonnegative array, fraction of absolute mass that
    the clipping removed).  The second number is a cheap classicality
    gauge: zero for a true probability density.
    """
    clipped = np.clip(values, 0.0, None)
    total = float(np.abs(values).sum())
    removed = float((clipped - values).sum())
    mass = float(clipped.sum())
    if mass <= 0.0:
        raise ValueError("array has no positive part")
    return clipped / mass, removed / total if total > 0 else 0.0


def smooth_histogram(weights: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian smoothing in cell units; total mass is preserved.

    Boundary handling is reflective, so mass near the edge folds back in
    instead of leaking out of the array.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be nonnegative, got {sigma}")
    if sigma == 0:
        return np.array(weights, dtype=float, copy=True)
    return scipy.ndimage.gaussian_filter(np.asarray(weights, dtype=float),
                                         sigma=sigma, mode="reflect")


def histogram_overlap(a: np.ndarray, b: np.ndarray) -> float:
    """Bhattacharyya coefficient sum(sqrt(p*q)) of two nonnegative arrays.

    Arrays must live on identical grids.  Each input is clipped at zero and
    renormalized internally, so Wigner arrays with small negative patches
    can be compared directly against classical histograms; 1 means equal
    distributions, 0 means disjoint support.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    pa, _ = nonnegative_part(a)
    qb, _ = nonnegative_part(b)
    return float(np.sqrt(pa * qb).sum())
