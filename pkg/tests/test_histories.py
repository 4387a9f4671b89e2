import math
import warnings

import numpy as np
import pytest

from duffing_qsd.classical import DuffingParams, PhasePoint
from duffing_qsd.errors import DecoherenceTimeWarning, HistoryBudgetError
from duffing_qsd.histories import (
    CellGrid,
    DecoherenceMatrix,
    HistorySpec,
    HistoryTable,
    cell_grid,
    classical_cell_frequencies,
    classical_probability_check,
    decoherence_functional,
    decoherence_time,
    history_probabilities,
)
from duffing_qsd.numerics import RngStream, hermiticity_defect
from duffing_qsd.oscillator_ops import BasisSpec, QuantumState, coherent_state
from duffing_qsd.qsd import DensityOperator, UnravelingSpec, propagate_stack


def cat_state(basis, q0):
    amps = (coherent_state(basis, q0, 0.0).amplitudes
            + coherent_state(basis, -q0, 0.0).amplitudes)
    return QuantumState(amps, basis).normalized()


def finite_t(gamma, kT, hbar):
    return UnravelingSpec(mode="finite-temperature", gamma=gamma, kT=kT,
                          hbar=hbar)


class TestCellGrid:
    def test_completeness_exact(self):
        basis = BasisSpec(dim=24, hbar=0.5)
        grid = cell_grid(basis, [-1.0, 0.0, 1.0], [-0.8, 0.8])
        total = sum(grid.effects())
        assert np.max(np.abs(total - np.eye(basis.dim))) < 1e-12

    def test_rest_effect_positive(self):
        basis = BasisSpec(dim=24, hbar=0.5)
        grid = cell_grid(basis, [-1.0, 0.0, 1.0], [-0.8, 0.8])
        lo = np.linalg.eigvalsh(grid.effects()[-1])[0]
        assert lo > -1e-8

    def test_sqrt_effects_square_back(self):
        basis = BasisSpec(dim=20, hbar=0.5)
        grid = cell_grid(basis, [-0.9, 0.9], [0.0])
        for e, s in zip(grid.effects(), grid.sqrt_effects()):
            assert np.max(np.abs(s @ s - e)) < 1e-7

    def test_single_cell_weight_hits_margin(self):
        # one coherent projector has unit norm, so the cap is the margin
        basis = BasisSpec(dim=20, hbar=0.5)
        grid = cell_grid(basis, [0.5], [0.0])
        assert grid.weight == pytest.approx(0.999)

    def test_coarse_grid_weight_capped_below_naive(self):
        # at the default pitch the resolution-of-identity weight exceeds
        # one, which no POVM with a positive remainder can carry
        basis = BasisSpec(dim=44, hbar=0.5)
        d = 3.0 * math.sqrt(basis.hbar)
        grid = cell_grid(basis, [-d, 0.0, d], [0.0])
        naive = grid.dq * grid.dp / (2.0 * math.pi * basis.hbar)
        assert naive > 1.0
        assert grid.weight < 1.0
        lo = np.linalg.eigvalsh(grid.effects()[-1])[0]
        assert lo > -1e-8

    def test_oversized_weight_rejected(self):
        basis = BasisSpec(dim=20, hbar=0.5)
        with pytest.raises(ValueError, match="indefinite"):
            cell_grid(basis, [-0.6, 0.6], [0.0], weight=1.2)

    def test_validation(self):
        basis = BasisSpec(dim=16, hbar=0.5)
        with pytest.raises(ValueError):
            cell_grid(basis, [], [0.0])
        with pytest.raises(ValueError):
            cell_grid(basis, [0.0], [0.0], spacing=(-1.0, 1.0))
        with pytest.raises(ValueError):
            cell_grid(basis, [0.0], [0.0], weight=0.0)

    def test_response_matches_effects(self):
        basis = BasisSpec(dim=28, hbar=0.5)
        grid = cell_grid(basis, [-0.8, 0.8], [0.0])
        effs = grid.effects()
        for q, p in [(0.3, 0.2), (-0.8, 0.0), (0.0, -0.5)]:
            psi = coherent_state(basis, q, p)
            direct = [float(np.real(psi.amplitudes.conj() @ e @ psi.amplitudes))
                      for e in effs]
            r = grid.response(q, p)[0]
            assert np.allclose(r, direct, atol=1e-9)

    def test_response_rows_sum_to_one(self):
        basis = BasisSpec(dim=16, hbar=0.5)
        grid = cell_grid(basis, [-0.8, 0.8], [0.0])
        r = grid.response(np.linspace(-3, 3, 17), np.zeros(17))
        assert np.allclose(r.sum(axis=1), 1.0, atol=1e-12)

    def test_cell_index(self):
        basis = BasisSpec(dim=16, hbar=0.5)
        grid = cell_grid(basis, [-1.0, 1.0], [0.0], spacing=(1.0, 1.0))
        assert grid.cell_index(-1.0, 0.0) == 0
        assert grid.cell_index(1.2, 0.3) == 1
        assert grid.cell_index(0.0, 3.0) == grid.rest_index
        assert grid.cell_index(5.0, 0.0) == grid.rest_index


class TestHistorySpec:
    def test_roundtrip(self):
        h = HistorySpec(times=np.array([0.0, 1.0, 2.0]), cells=(0, 1, 2))
        assert h.cells == (0, 1, 2)

    def test_validation(self):
        with pytest.raises(ValueError):
            HistorySpec(times=np.array([0.0, 1.0]), cells=(0,))
        with pytest.raises(ValueError):
            HistorySpec(times=np.array([0.0, 0.0]), cells=(0, 1))


class TestDecoherenceTime:
    def test_formula(self):
        params = DuffingParams(gamma=0.125, kT=0.5, hbar=0.05)
        assert decoherence_time(params, 0.2) == pytest.approx(0.5)

    def test_quarter_on_doubled_cell(self):
        params = DuffingParams(gamma=0.125, kT=0.5, hbar=0.05)
        assert decoherence_time(params, 0.4) == pytest.approx(
            decoherence_time(params, 0.2) / 4.0)

    def test_undefined_without_reservoir(self):
        with pytest.warns(DecoherenceTimeWarning):
            assert decoherence_time(DuffingParams(kT=0.0), 0.2) == math.inf
        with pytest.warns(DecoherenceTimeWarning):
            assert decoherence_time(
                DuffingParams(gamma=0.0, kT=0.5), 0.2) == math.inf

    def test_cell_size_guard(self):
        with pytest.raises(ValueError):
            decoherence_time(DuffingParams(kT=0.5), 0.0)


class TestDecoherenceFunctional:
    def test_single_time_is_povm_distribution(self):
        basis = BasisSpec(dim=28, hbar=0.5)
        grid = cell_grid(basis, [-0.9, 0.0, 0.9], [0.0])
        params = DuffingParams(gamma=0.125, kT=0.5, hbar=0.5)
        rho = DensityOperator.from_state(coherent_state(basis, 0.0, 0.0))
        dm = decoherence_functional(rho, grid, 1, params,
                                    finite_t(0.125, 0.5, 0.5))
        direct = [float(np.real(np.trace(e @ rho.matrix)))
                  for e in grid.effects()]
        assert np.allclose(dm.matrix.diagonal().real, direct, atol=1e-12)
        assert dm.diagonal_sum() == pytest.approx(1.0, abs=1e-8)
        # the start sits at the middle cell, which must dominate
        assert np.argmax(direct) == 1

    def test_matches_bruteforce_pair_propagation(self):
        # independent reference: propagate each branch pair separately
        basis = BasisSpec(dim=16, hbar=0.5)
        grid = cell_grid(basis, [0.7], [0.0])
        params = DuffingParams(gamma=0.125, kT=0.5, hbar=0.5)
        spec = finite_t(0.125, 0.5, 0.5)
        rho = DensityOperator.from_state(coherent_state(basis, 0.4, 0.2))
        dt = params.period / 500
        dm = decoherence_functional(rho, grid, 2, params, spec, dt=dt)
        sq = grid.sqrt_effects()
        ne = len(sq)
        ref = np.empty((ne * ne, ne * ne), dtype=complex)
        for i1 in range(ne):
            for j1 in range(ne):
                seed = (sq[i1] @ rho.matrix @ sq[j1])[None]
                out = propagate_stack(seed, basis, params, spec, dt=dt)[0]
                for i2 in range(ne):
                    for j2 in range(ne):
                        ref[i1 * ne + i2, j1 * ne + j2] = np.trace(
                            sq[i2] @ out @ sq[j2])
        ref = 0.5 * (ref + ref.conj().T)
        assert np.max(np.abs(dm.matrix - ref)) < 1e-12

    def test_trace_identity_three_times(self):
        basis = BasisSpec(dim=20, hbar=0.5)
        grid = cell_grid(basis, [0.8], [0.0])
        params = DuffingParams(gamma=0.125, kT=0.5, hbar=0.5)
        rho = DensityOperator.from_state(coherent_state(basis, 0.8, 0.0))
        dm = decoherence_functional(rho, grid, 3, params,
                                    finite_t(0.125, 0.5, 0.5),
                                    dt=params.period / 600)
        assert abs(dm.diagonal_sum() - 1.0) < 1e-8
        assert hermiticity_defect(dm.matrix) < 1e-10

    def test_marginalizing_last_slot(self):
        # summing the final assertion recovers the shorter-history diagonal
        basis = BasisSpec(dim=20, hbar=0.5)
        grid = cell_grid(basis, [-0.7, 0.7], [0.0])
        params = DuffingParams(gamma=0.125, kT=0.5, hbar=0.5)
        spec = finite_t(0.125, 0.5, 0.5)
        rho = DensityOperator.from_state(coherent_state(basis, 0.5, 0.0))
        dt = params.period / 500
        dm1 = decoherence_functional(rho, grid, 1, params, spec, dt=dt)
        dm2 = decoherence_functional(rho, grid, 2, params, spec, dt=dt)
        ne = grid.n_effects
        p2 = dm2.matrix.diagonal().real.reshape(ne, ne)
        assert np.allclose(p2.sum(axis=1), dm1.matrix.diagonal().real,
                           atol=1e-10)

    def test_budget_guard(self):
        basis = BasisSpec(dim=16, hbar=0.5)
        grid = cell_grid(basis, [-0.7, 0.7], [0.0])
        params = DuffingParams(gamma=0.125, kT=0.5, hbar=0.5)
        rho = DensityOperator.from_state(coherent_state(basis, 0.0, 0.0))
        with pytest.raises(HistoryBudgetError):
            decoherence_functional(rho, grid, 2, params,
                                   finite_t(0.125, 0.5, 0.5), budget=80)

    def test_basis_mismatch(self):
        grid = cell_grid(BasisSpec(dim=16, hbar=0.5), [0.5], [0.0])
        other = BasisSpec(dim=20, hbar=0.5)
        rho = DensityOperator.from_state(coherent_state(other, 0.0, 0.0))
        params = DuffingParams(gamma=0.125, kT=0.5, hbar=0.5)
        with pytest.raises(ValueError):
            decoherence_functional(rho, grid, 1, params,
                                   finite_t(0.125, 0.5, 0.5))

    def test_warns_without_reservoir(self):
        basis = BasisSpec(dim=16, hbar=0.5)
        grid = cell_grid(basis, [0.5], [0.0])
        params = DuffingParams(gamma=0.0, kT=0.0, hbar=0.5)
        spec = UnravelingSpec(mode="zero-temperature-damping", gamma=0.0,
                              kT=0.0, hbar=0.5)
        rho = DensityOperator.from_state(coherent_state(basis, 0.5, 0.0))
        with pytest.warns(DecoherenceTimeWarning):
            dm = decoherence_functional(rho, grid, 1, params, spec)
        assert dm.diagonal_sum() == pytest.approx(1.0, abs=1e-8)

    def test_warns_when_strobe_beats_decoherence_time(self):
        basis = BasisSpec(dim=16, hbar=0.5)
        grid = cell_grid(basis, [0.5], [0.0])
        # kT tiny: cells of this size need far longer than one period
        params = DuffingParams(gamma=0.125, kT=1e-6, hbar=0.5)
        rho = DensityOperator.from_state(coherent_state(basis, 0.5, 0.0))
        with pytest.warns(DecoherenceTimeWarning, match="strobe spacing"):
            decoherence_functional(rho, grid, 1, params,
                                   finite_t(0.125, 1e-6, 0.5))

    def test_interference_survives_without_damping(self):
        basis = BasisSpec(dim=28, hbar=0.25)
        grid = cell_grid(basis, [1.0], [0.0])
        params = DuffingParams(gamma=0.0, q=0.3, kT=0.0, hbar=0.25)
        spec = UnravelingSpec(mode="zero-temperature-damping", gamma=0.0,
                              kT=0.0, hbar=0.25)
        rho = DensityOperator.from_state(cat_state(basis, 1.0))
        with pytest.warns(DecoherenceTimeWarning):
            dm = decoherence_functional(rho, grid, 2, params, spec,
                                        dt=params.period / 800)
        assert history_probabilities(dm).epsilon > 0.5

    def test_reservoir_decoheres_cat(self):
        basis = BasisSpec(dim=28, hbar=0.25)
        grid = cell_grid(basis, [1.0], [0.0])
        params = DuffingParams(gamma=0.125, q=0.3, kT=0.5, hbar=0.25)
        rho = DensityOperator.from_state(cat_state(basis, 1.0))
        dm = decoherence_functional(rho, grid, 2, params,
                                    finite_t(0.125, 0.5, 0.25),
                                    dt=params.period / 800)
        assert history_probabilities(dm).epsilon < 0.1

    def test_epsilon_monotone_in_damping(self):
        basis = BasisSpec(dim=28, hbar=0.25)
        grid = cell_grid(basis, [1.0], [0.0])
        rho = DensityOperator.from_state(cat_state(basis, 1.0))
        eps = []
        for gamma in (0.0, 0.05, 0.125):
            params = DuffingParams(gamma=gamma, q=0.3, kT=0.5, hbar=0.25)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DecoherenceTimeWarning)
                dm = decoherence_functional(rho, grid, 2, params,
                                            finite_t(gamma, 0.5, 0.25),
                                            dt=params.period / 800)
            eps.append(history_probabilities(dm).epsilon)
        assert eps[0] > eps[1] > eps[2]

    def test_n_times_guard(self):
        basis = BasisSpec(dim=16, hbar=0.5)
        grid = cell_grid(basis, [0.5], [0.0])
        params = DuffingParams(gamma=0.125, kT=0.5, hbar=0.5)
        rho = DensityOperator.from_state(coherent_state(basis, 0.0, 0.0))
        with pytest.raises(ValueError):
            decoherence_functional(rho, grid, 0, params,
                                   finite_t(0.125, 0.5, 0.5))


class TestDecoherenceMatrix:
    def _grid(self):
        return cell_grid(BasisSpec(dim=16, hbar=0.5), [0.5], [0.0])

    def test_rejects_non_hermitian(self):
        m = np.array([[0.5, 0.1], [0.3, 0.5]], dtype=complex)
        with pytest.raises(ValueError, match="Hermitian"):
            DecoherenceMatrix(matrix=m, histories=((0,), (1,)),
                              grid=self._grid(), times=np.array([0.0]))

    def test_rejects_negative_probability(self):
        m = np.diag([1.1, -0.1]).astype(complex)
        with pytest.raises(ValueError, match="negative"):
            DecoherenceMatrix(matrix=m, histories=((0,), (1,)),
                              grid=self._grid(), times=np.array([0.0]))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            DecoherenceMatrix(matrix=np.eye(3, dtype=complex) / 3.0,
                              histories=((0,), (1,)),
                              grid=self._grid(), times=np.array([0.0]))


class TestHistoryProbabilities:
    def _dm(self, matrix):
        grid = cell_grid(BasisSpec(dim=16, hbar=0.5), [0.5], [0.0])
        n = matrix.shape[0]
        hists = tuple((k,) for k in range(n))
        return DecoherenceMatrix(matrix=matrix, histories=hists, grid=grid,
                                 times=np.array([0.0]))

    def test_diagonal_matrix_gives_zero_epsilon(self):
        tab = history_probabilities(self._dm(np.diag([0.25, 0.75]).astype(complex)))
        assert tab.epsilon == 0.0
        assert np.allclose(tab.probabilities, [0.25, 0.75])

    def test_floor_excludes_empty_histories(self):
        # the tiny branch is fully coherent with the first, but carries
        # no probability, so it must not drive epsilon to one
        t = 1e-14
        m = np.array([[0.9, 0.0, math.sqrt(0.9 * t)],
                      [0.0, 0.1, 0.0],
                      [math.sqrt(0.9 * t), 0.0, t]], dtype=complex)
        tab = history_probabilities(self._dm(m))
        assert tab.epsilon == 0.0


class TestClassicalFrequencies:
    def _grid(self):
        return cell_grid(BasisSpec(dim=20, hbar=0.5), [-0.8, 0.8], [0.0])

    def test_frequencies_normalized(self):
        params = DuffingParams(gamma=0.125, kT=0.2, hbar=0.5)
        freq = classical_cell_frequencies(self._grid(), params,
                                          PhasePoint(0.8, 0.0), 2, 200,
                                          rng=RngStream(9))
        assert freq.shape == (9,)
        assert freq.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(freq >= 0.0)

    def test_reproducible(self):
        params = DuffingParams(gamma=0.125, kT=0.2, hbar=0.5)
        a = classical_cell_frequencies(self._grid(), params,
                                       PhasePoint(0.8, 0.0), 2, 100,
                                       rng=RngStream(3))
        b = classical_cell_frequencies(self._grid(), params,
                                       PhasePoint(0.8, 0.0), 2, 100,
                                       rng=RngStream(3))
        assert np.array_equal(a, b)

    def test_noise_free_runs_without_kicks(self):
        params = DuffingParams(gamma=0.125, kT=0.0, hbar=0.5)
        freq = classical_cell_frequencies(self._grid(), params,
                                          PhasePoint(0.8, 0.0), 2, 50,
                                          rng=RngStream(1))
        assert freq.sum() == pytest.approx(1.0, abs=1e-12)

    def test_validation(self):
        params = DuffingParams(kT=0.2, hbar=0.5)
        grid = self._grid()
        with pytest.raises(ValueError):
            classical_cell_frequencies(grid, params, PhasePoint(0, 0), 0, 10,
                                       rng=RngStream(1))
        with pytest.raises(ValueError):
            classical_cell_frequencies(grid, params, PhasePoint(0, 0), 1, 0,
                                       rng=RngStream(1))
        with pytest.raises(ValueError):
            classical_cell_frequencies(grid, params, PhasePoint(0, 0), 1, 10)


class TestProbabilityCheck:
    def _table(self, probs):
        p = np.asarray(probs, dtype=float)
        hists = tuple((k,) for k in range(p.size))
        return HistoryTable(histories=hists, probabilities=p, epsilon=0.0)

    def test_identical_distributions(self):
        tab = self._table([0.2, 0.3, 0.5])
        chk = classical_probability_check(tab, np.array([0.2, 0.3, 0.5]))
        assert chk.tv_distance == pytest.approx(0.0, abs=1e-12)

    def test_disjoint_distributions(self):
        tab = self._table([1.0, 0.0, 0.0])
        chk = classical_probability_check(tab, np.array([0.0, 0.5, 0.5]))
        assert chk.tv_distance == pytest.approx(1.0)

    def test_uniform_against_peaked_is_far(self):
        tab = self._table([0.97] + [0.01] * 3)
        chk = classical_probability_check(tab, np.full(4, 0.25))
        assert chk.tv_distance > 0.5

    def test_normalizes_inputs(self):
        tab = self._table([2.0, 2.0])
        chk = classical_probability_check(tab, np.array([5.0, 5.0]))
        assert chk.tv_distance == pytest.approx(0.0, abs=1e-12)

    def test_validation(self):
        tab = self._table([0.5, 0.5])
        with pytest.raises(ValueError):
            classical_probability_check(tab, np.zeros(3))
        with pytest.raises(ValueError):
            classical_probability_check(tab, np.zeros(2))
