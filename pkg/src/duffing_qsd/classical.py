"""Classical forced damped Duffing oscillator.

Deterministic flows and stroboscopic (Poincaré) sections, Langevin dynamics
with white thermal noise, largest-Lyapunov-exponent estimators, and invariant
measure histograms.  The equation of motion, with p = M dx/dt, is

    dx/dt = p/M
    dp/dt = -dU/dx - 2*Gamma*p + q*M*cos(omega0*t) + F(t)

for the two-well potential U(x) = x^4/4 - x^2/2 (so -dU/dx = x - x^3) and a
zero-mean white force with <F(t)F(s)> = 4*M*Gamma*kT*delta(t-s).
"""

import math
from dataclasses import dataclass

import numpy as np

from ._kernels import (
    benettin_logs,
    langevin_record,
    pair_divergence_logs,
    rk4_record,
)
from .errors import NumericalOverflowError
from .numerics import RngStream

# steps per drive period used when a caller passes no dt; keeps the
# stroboscopic times exact multiples of the step
DEFAULT_STEPS_PER_PERIOD = 1000

# blocks of this many steps bound the pregenerated noise buffer
_NOISE_BLOCK = 1 << 20


@dataclass(frozen=True)
class DuffingParams:
    """Physical parameters of the driven, damped oscillator.

    Attributes
    ----------
    mass : float
        Particle mass M.
    gamma : float
        Damping rate Gamma (the velocity term is -2*Gamma*dx/dt).
    q : float
        Drive amplitude; the force on the particle is q*M*cos(omega0*t).
    omega0 : float
        Drive angular frequency.
    kT : float
        Reservoir temperature in energy units.
    hbar : float
        Action scale.  Classical dynamics depends on it only through the
        noise strength hbar*K = 4*M*Gamma*kT, where it cancels; it is kept
        here so the quantum layer can share one parameter set.
    """

    mass: float = 1.0
    gamma: float = 0.125
    q: float = 0.3
    omega0: float = 1.0
    kT: float = 0.0
    hbar: float = 1.0

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError(f"mass must be positive, got {self.mass}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")
        if not self.omega0 > 0:
            raise ValueError(f"omega0 must be positive, got {self.omega0}")
        if self.kT < 0:
            raise ValueError(f"kT must be nonnegative, got {self.kT}")
        if not self.hbar > 0:
            raise ValueError(f"hbar must be positive, got {self.hbar}")

    @property
    def period(self) -> float:
        """One drive period 2*pi/omega0."""
        return 2.0 * math.pi / self.omega0

    @property
    def noise_strength(self) -> float:
        """White-noise strength hbar*K = 4*M*Gamma*kT (delta-correlated force)."""
        return 4.0 * self.mass * self.gamma * self.kT


@dataclass(frozen=True)
class PhasePoint:
    x: float
    p: float
    t: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.p) and math.isfinite(self.t)):
            raise ValueError(f"phase point must be finite, got ({self.x}, {self.p}, {self.t})")


class _PointSequence:
    """Array-backed ordered sequence of phase points."""

    x: np.ndarray
    p: np.ndarray
    t: np.ndarray

    def __len__(self):
        return self.x.shape[0]

    def __getitem__(self, i) -> PhasePoint:
        return PhasePoint(float(self.x[i]), float(self.p[i]), float(self.t[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]


@dataclass(frozen=True)
class Trajectory(_PointSequence):
    """Time-ordered samples of one flow realization."""

    x: np.ndarray
    p: np.ndarray
    t: np.ndarray

    def energy(self, params: DuffingParams) -> np.ndarray:
        """Mechanical energy p^2/2M + U(x) at each sample."""
        return self.p ** 2 / (2.0 * params.mass) + self.x ** 4 / 4.0 - self.x ** 2 / 2.0


@dataclass(frozen=True)
class SectionCloud(_PointSequence):
    """Stroboscopic section samples at t_i = 2*pi*i/omega0 (plus start offset)."""

    x: np.ndarray
    p: np.ndarray
    t: np.ndarray
    params: DuffingParams
    skip: int


def _steps_per_period(params: DuffingParams, dt: float) -> int:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    return max(1, int(round(params.period / dt)))


def duffing_flow(params: DuffingParams, start: PhasePoint, duration: float,
                 dt: float, record_stride: int = 1) -> Trajectory:
    """Integrate the deterministic flow (F = 0) with fixed-step RK4.

    Parameters
    ----------
    duration : float
        Total integration time; rounded to a whole number of steps.
    dt : float
        Time step.
    record_stride : int
        Keep every record_stride-th state (1 keeps every step).

    Returns
    -------
    Trajectory
        Includes the initial state as its first sample.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if duration < 0:
        raise ValueError(f"duration must be nonnegative, got {duration}")
    nsteps = int(round(duration / dt))
    nrec = nsteps // record_stride
    xs = np.empty(nrec + 1)
    ps = np.empty(nrec + 1)
    status = rk4_record(start.x, start.p, start.t, dt, nsteps, record_stride,
                        params.mass, params.gamma, params.q, params.omega0, xs, ps)
    if status != 0:
        raise NumericalOverflowError("trajectory diverged (|x| > 1e6); check parameters")
    ts = start.t + dt * record_stride * np.arange(nrec + 1)
    return Trajectory(x=xs, p=ps, t=ts)


def poincare_section(params: DuffingParams, start: PhasePoint, n_points: int,
                     skip: int = 200, dt: float | None = None) -> SectionCloud:
    """Stroboscopic map samples of the deterministic flow.

    The step is adjusted so it divides the drive period exactly; the returned
    cloud holds the states after periods skip+1 .. skip+n_points (the start
    itself is not a sample).
    """
    if n_points < 1:
        raise ValueError(f"n_points must be >= 1, got {n_points}")
    if skip < 0:
        raise ValueError(f"skip must be nonnegative, got {skip}")
    if dt is None:
        dt = params.period / DEFAULT_STEPS_PER_PERIOD
    spp = _steps_per_period(params, dt)
    dt = params.period / spp
    total = skip + n_points
    xs = np.empty(total + 1)
    ps = np.empty(total + 1)
    status = rk4_record(start.x, start.p, start.t, dt, total * spp, spp,
                        params.mass, params.gamma, params.q, params.omega0, xs, ps)
    if status != 0:
        raise NumericalOverflowError("trajectory diverged (|x| > 1e6); check parameters")
    ts = start.t + params.period * np.arange(skip + 1, total + 1)
    return SectionCloud(x=xs[skip + 1:], p=ps[skip + 1:], t=ts, params=params, skip=skip)


def langevin_flow(params: DuffingParams, start: PhasePoint, duration: float, dt: float,
                  rng: RngStream | None = None, record_stride: int = 1) -> Trajectory:
    """Euler-Maruyama trajectory with white thermal noise.

    The per-step momentum kick has standard deviation sqrt(4*M*Gamma*kT*dt).
    With kT = 0 the noise strength vanishes and this delegates to the
    deterministic integrator without consuming any random draws.
    """
    if params.noise_strength == 0.0:
        return duffing_flow(params, start, duration, dt, record_stride)
    if rng is None:
        raise ValueError("rng is required when the noise strength is nonzero")
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    nsteps = int(round(duration / dt))
    kick = math.sqrt(params.noise_strength * dt)
    nrec = nsteps // record_stride
    xs = np.empty(nrec + 1)
    ps = np.empty(nrec + 1)
    gen = rng.generator
    x, p, t = start.x, start.p, start.t
    xs[0], ps[0] = x, p
    done = 0
    # whole multiples of record_stride per block keep the slot bookkeeping simple
    block = max(record_stride, (_NOISE_BLOCK // record_stride) * record_stride)
    while done < nsteps:
        n = min(block, ((nsteps - done) // record_stride) * record_stride)
        if n == 0:
            break  # trailing partial stride records nothing anyway
        noise = gen.standard_normal(n)
        bx = np.empty(n // record_stride + 1)
        bp = np.empty(n // record_stride + 1)
        status = langevin_record(x, p, t + done * dt, dt, n, record_stride,
                                 params.mass, params.gamma, params.q, params.omega0,
                                 kick, noise, bx, bp)
        if status != 0:
            raise NumericalOverflowError("trajectory diverged (|x| > 1e6); check parameters")
        lo = done // record_stride
        xs[lo + 1: lo + 1 + n // record_stride] = bx[1:]
        ps[lo + 1: lo + 1 + n // record_stride] = bp[1:]
        x, p = bx[-1], bp[-1]
        done += n
    ts = start.t + dt * record_stride * np.arange(nrec + 1)
    return Trajectory(x=xs, p=ps, t=ts)


def langevin_section(params: DuffingParams, start: PhasePoint, n_points: int,
                     skip: int = 200, dt: float | None = None,
                     rng: RngStream | None = None) -> SectionCloud:
    """Stroboscopic samples of the Langevin dynamics.

    At kT = 0 (or Gamma = 0) the noise strength is exactly zero and the call
    reduces bitwise to poincare_section: same deterministic code path, no
    random draws consumed.
    """
    if params.noise_strength == 0.0:
        return poincare_section(params, start, n_points, skip, dt)
    if rng is None:
        raise ValueError("rng is required when the noise strength is nonzero")
    if n_points < 1:
        raise ValueError(f"n_points must be >= 1, got {n_points}")
    if skip < 0:
        raise ValueError(f"skip must be nonnegative, got {skip}")
    if dt is None:
        dt = params.period / DEFAULT_STEPS_PER_PERIOD
    spp = _steps_per_period(params, dt)
    dt = params.period / spp
    total = skip + n_points
    traj = langevin_flow(params, start, total * spp * dt, dt, rng, record_stride=spp)
    ts = start.t + params.period * np.arange(skip + 1, total + 1)
    return SectionCloud(x=traj.x[skip + 1:], p=traj.p[skip + 1:], t=ts,
                        params=params, skip=skip)


def lyapunov_max(params: DuffingParams, start: PhasePoint, duration: float,
                 dt: float, renorm_interval: float) -> float:
    """Largest Lyapunov exponent by the tangent-vector (Benettin) method.

    A unit tangent vector is carried along the variational equations and
    renormalized every renorm_interval; the estimate is the running average
    of the log growth over the last half of the run, which discards the
    transient alignment of the vector with the expanding direction.
    """
    if not (duration > renorm_interval > 0):
        raise ValueError("need duration > renorm_interval > 0")
    nsteps = int(round(duration / dt))
    rstride = max(1, int(round(renorm_interval / dt)))
    nlogs = nsteps // rstride
    if nlogs < 2:
        raise ValueError("duration too short for the requested renorm_interval")
    logs = np.empty(nlogs)
    status = benettin_logs(start.x, start.p, start.t, dt, nsteps, rstride,
                           params.mass, params.gamma, params.q, params.omega0, logs)
    if status != 0:
        raise NumericalOverflowError("trajectory diverged (|x| > 1e6); check parameters")
    half = nlogs // 2
    return float(np.sum(logs[half:]) / ((nlogs - half) * rstride * dt))


def lyapunov_pair(params: DuffingParams, start: PhasePoint, duration: float,
                  dt: float, renorm_interval: float, separation: float = 1e-8) -> float:
    """Two-trajectory divergence estimate of the largest Lyapunov exponent.

    Independent cross-check on lyapunov_max: a second full (nonlinear)
    trajectory is kept at finite separation and rescaled back every
    renorm_interval.  Averaging convention matches lyapunov_max.
    """
    if not (duration > renorm_interval > 0):
        raise ValueError("need duration > renorm_interval > 0")
    if not 0 < separation < 1e-2:
        raise ValueError(f"separation must be small and positive, got {separation}")
    nsteps = int(round(duration / dt))
    rstride = max(1, int(round(renorm_interval / dt)))
    nlogs = nsteps // rstride
    if nlogs < 2:
        raise ValueError("duration too short for the requested renorm_interval")
    logs = np.empty(nlogs)
    status = pair_divergence_logs(start.x, start.p, start.t, dt, nsteps, rstride,
                                  separation, params.mass, params.gamma, params.q,
                                  params.omega0, logs)
    if status != 0:
        raise NumericalOverflowError("trajectory diverged (|x| > 1e6); check parameters")
    half = nlogs // 2
    return float(np.sum(logs[half:]) / ((nlogs - half) * rstride * dt))


@dataclass(frozen=True)
class MeasureHistogram:
    """Normalized phase-space occupancy on a rectangular grid.

    weights sums to 1 minus the overflow fraction; overflow collects all
    points falling outside the extent.
    """

    weights: np.ndarray
    x_edges: np.ndarray
    p_edges: np.ndarray
    overflow: float

    @property
    def total(self) -> float:
        return float(np.sum(self.weights) + self.overflow)


def measure_map_histogram(cloud, extent=((-2.0, 2.0), (-2.0, 2.0)),
                          resolution=(256, 256)) -> MeasureHistogram:
    """Empirical invariant measure of a section cloud.

    Parameters
    ----------
    cloud : SectionCloud or Trajectory
        Any array-backed point sequence.
    extent : ((x_lo, x_hi), (p_lo, p_hi))
    resolution : (nx, np) bin counts

    Returns
    -------
    MeasureHistogram
        Bin weights normalized by the total point count, so weights plus the
        overflow fraction sum to exactly 1.
    """
    n = len(cloud)
    if n == 0:
        raise ValueError("empty point cloud")
    (xlo, xhi), (plo, phi) = extent
    nx, npp = resolution
    if not (xhi > xlo and phi > plo and nx >= 1 and npp >= 1):
        raise ValueError("degenerate histogram extent or resolution")
    x_edges = np.linspace(xlo, xhi, nx + 1)
    p_edges = np.linspace(plo, phi, npp + 1)
    counts, _, _ = np.histogram2d(cloud.x, cloud.p, bins=[x_edges, p_edges])
    inside = float(np.sum(counts))
    return MeasureHistogram(weights=counts / n, x_edges=x_edges, p_edges=p_edges,
                            overflow=(n - inside) / n)
