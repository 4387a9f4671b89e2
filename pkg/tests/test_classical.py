import math

import numpy as np
import pytest

from duffing_qsd.classical import (
    DuffingParams,
    PhasePoint,
    duffing_flow,
    langevin_flow,
    langevin_section,
    lyapunov_max,
    lyapunov_pair,
    measure_map_histogram,
    poincare_section,
)
from duffing_qsd.numerics import RngStream


class TestParams:
    def test_defaults_and_period(self):
        p = DuffingParams()
        assert p.q == 0.3 and p.gamma == 0.125 and p.omega0 == 1.0
        assert math.isclose(p.period, 2 * math.pi)

    def test_noise_strength(self):
        p = DuffingParams(kT=0.01)
        assert math.isclose(p.noise_strength, 4 * 1.0 * 0.125 * 0.01)

    def test_validation(self):
        with pytest.raises(ValueError):
            DuffingParams(mass=0.0)
        with pytest.raises(ValueError):
            DuffingParams(gamma=-0.1)
        with pytest.raises(ValueError):
            DuffingParams(omega0=0.0)

    def test_phase_point_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            PhasePoint(float("nan"), 0.0)


class TestConservativeFlow:
    def test_energy_conserved_without_damping_or_drive(self):
        p = DuffingParams(gamma=0.0, q=0.0)
        start = PhasePoint(0.5, 0.3)
        traj = duffing_flow(p, start, duration=100.0, dt=1e-3, record_stride=100)
        e = traj.energy(p)
        drift = np.max(np.abs(e - e[0])) / abs(e[0])
        assert drift < 1e-8

    def test_small_oscillation_frequency(self):
        # about the well bottom x = 1 the linearized frequency is sqrt(2)
        p = DuffingParams(gamma=0.0, q=0.0)
        traj = duffing_flow(p, PhasePoint(1.001, 0.0), duration=50.0, dt=1e-3)
        x = traj.x - 1.0
        crossings = np.flatnonzero((x[:-1] > 0) & (x[1:] <= 0))
        period = np.mean(np.diff(traj.t[crossings]))
        assert abs(period - 2 * math.pi / math.sqrt(2)) < 1e-3

    def test_damped_flow_settles_into_well(self):
        p = DuffingParams(q=0.0)
        traj = duffing_flow(p, PhasePoint(0.5, 0.3), duration=200.0, dt=1e-3)
        assert abs(abs(traj.x[-1]) - 1.0) < 1e-3
        assert abs(traj.p[-1]) < 1e-3


class TestPoincareSection:
    def test_point_count_and_strobe_times(self):
        p = DuffingParams()
        sec = poincare_section(p, PhasePoint(0.5, 0.3), n_points=20, skip=5)
        assert len(sec) == 20
        np.testing.assert_allclose(np.diff(sec.t), p.period, rtol=1e-12)
        assert math.isclose(sec.t[0], 6 * p.period, rel_tol=1e-12)

    def test_matches_flow_at_strobe_times(self):
        # same kernel, same step arithmetic: bitwise equality
        p = DuffingParams()
        spp = 1000
        dt = p.period / spp
        sec = poincare_section(p, PhasePoint(0.5, 0.3), n_points=10, skip=0, dt=dt)
        traj = duffing_flow(p, PhasePoint(0.5, 0.3), duration=10 * p.period,
                            dt=dt, record_stride=spp)
        np.testing.assert_array_equal(sec.x, traj.x[1:])
        np.testing.assert_array_equal(sec.p, traj.p[1:])

    def test_attractor_bounded(self):
        p = DuffingParams()
        sec = poincare_section(p, PhasePoint(0.5, 0.3), n_points=3000, skip=300)
        assert np.max(np.abs(sec.x)) < 2.0
        assert np.max(np.abs(sec.p)) < 1.5
        # known strobe-phase extent of the attractor, generous margins
        assert sec.x.min() < -1.0 and sec.x.max() > 1.0

    def test_skip_must_be_nonnegative(self):
        p = DuffingParams()
        with pytest.raises(ValueError):
            poincare_section(p, PhasePoint(0.5, 0.3), n_points=5, skip=-1)


class TestLangevin:
    def test_zero_temperature_is_deterministic_path(self):
        p = DuffingParams(kT=0.0)
        start = PhasePoint(0.5, 0.3)
        a = langevin_flow(p, start, duration=10.0, dt=1e-3, rng=RngStream(1))
        b = duffing_flow(p, start, duration=10.0, dt=1e-3)
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.p, b.p)

    def test_zero_temperature_section_matches_deterministic(self):
        p = DuffingParams(kT=0.0)
        a = langevin_section(p, PhasePoint(0.5, 0.3), n_points=5, skip=2,
                             rng=RngStream(1))
        b = poincare_section(p, PhasePoint(0.5, 0.3), n_points=5, skip=2)
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.p, b.p)

    def test_noisy_requires_rng(self):
        p = DuffingParams(kT=0.1)
        with pytest.raises(ValueError):
            langevin_flow(p, PhasePoint(0.0, 0.0), duration=1.0, dt=1e-3)

    def test_record_stride_does_not_change_noise_sequence(self):
        p = DuffingParams(kT=0.05)
        start = PhasePoint(0.5, 0.3)
        a = langevin_flow(p, start, duration=2.0, dt=1e-3, rng=RngStream(9))
        b = langevin_flow(p, start, duration=2.0, dt=1e-3, rng=RngStream(9),
                          record_stride=50)
        np.testing.assert_array_equal(a.x[::50], b.x)
        np.testing.assert_array_equal(a.p[::50], b.p)

    def test_seed_reproducibility(self):
        p = DuffingParams(kT=0.05)
        a = langevin_flow(p, PhasePoint(0.0, 0.0), duration=1.0, dt=1e-3,
                          rng=RngStream(4))
        b = langevin_flow(p, PhasePoint(0.0, 0.0), duration=1.0, dt=1e-3,
                          rng=RngStream(4))
        np.testing.assert_array_equal(a.p, b.p)

    def test_equipartition_in_linearized_well(self):
        # stationary Var(p) = M*kT about x = 1.  Euler-Maruyama inflates the
        # variance by ~omega^2*dt/(2*Gamma) (3% at this dt) and the momentum
        # correlation time 1/(2*Gamma) = 4 leaves ~250 effective samples, so
        # the bound is loose; the strict version runs longer in the
        # acceptance suite.
        kT = 0.01
        p = DuffingParams(q=0.0, kT=kT)
        traj = langevin_flow(p, PhasePoint(1.0, 0.0), duration=2000.0, dt=4e-3,
                             rng=RngStream(12), record_stride=4)
        ps = traj.p[len(traj) // 5:]
        var = float(np.var(ps))
        assert abs(var - kT) / kT < 0.25


class TestLyapunov:
    def test_chaotic_exponent_positive_and_routes_agree(self):
        p = DuffingParams()
        dur = 500 * p.period
        lb = lyapunov_max(p, PhasePoint(0.5, 0.3), duration=dur,
                          dt=p.period / 1000, renorm_interval=p.period)
        lp = lyapunov_pair(p, PhasePoint(0.5, 0.3), duration=dur,
                           dt=p.period / 1000, renorm_interval=p.period)
        assert lb > 0.05
        assert abs(lb - lp) / lb < 0.05
        # value pinned from 2000-period runs of both estimators
        assert abs(lb - 0.115) < 0.03

    def test_damped_undriven_exponent_negative(self):
        p = DuffingParams(q=0.0)
        lb = lyapunov_max(p, PhasePoint(0.5, 0.3), duration=200.0,
                          dt=1e-3, renorm_interval=1.0)
        assert lb < 0.0


class TestMeasureHistogram:
    def test_weights_normalized_with_overflow(self):
        p = DuffingParams()
        sec = poincare_section(p, PhasePoint(0.5, 0.3), n_points=2000, skip=300)
        h = measure_map_histogram(sec, extent=((-2, 2), (-2, 2)),
                                  resolution=(64, 64))
        assert h.weights.shape == (64, 64)
        assert math.isclose(h.weights.sum() + h.overflow, 1.0, abs_tol=1e-12)
        assert h.overflow == 0.0
        assert math.isclose(h.total, 1.0, abs_tol=1e-12)

    def test_overflow_counts_out_of_extent_points(self):
        p = DuffingParams()
        sec = poincare_section(p, PhasePoint(0.5, 0.3), n_points=500, skip=300)
        h = measure_map_histogram(sec, extent=((-0.5, 0.5), (-0.5, 0.5)),
                                  resolution=(16, 16))
        assert h.overflow > 0.0
        assert math.isclose(h.weights.sum() + h.overflow, 1.0, abs_tol=1e-12)

    def test_edges_match_extent(self):
        p = DuffingParams()
        sec = poincare_section(p, PhasePoint(0.5, 0.3), n_points=100, skip=100)
        h = measure_map_histogram(sec, extent=((-2, 2), (-1, 1)),
                                  resolution=(32, 16))
        assert h.x_edges[0] == -2 and h.x_edges[-1] == 2
        assert h.p_edges[0] == -1 and h.p_edges[-1] == 1
        assert len(h.x_edges) == 33 and len(h.p_edges) == 17
