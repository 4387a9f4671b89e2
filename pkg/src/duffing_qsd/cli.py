"""Command-line entry point.

Each subcommand reads one flat JSON config (all keys optional, defaults in
config.DEFAULTS), applies -s/--set overrides, runs, and writes artifacts
into --out: `<name>.csv` with the delimited results, `<name>.meta.json`
with the fully resolved config, and for raster results `<name>.pgm`.
Unless --no-figures is given it also renders `<name>.png`.

Reruns with the same config and seed produce byte-identical csv/meta/pgm
artifacts, and any artifact can be regenerated from the config block of
its own metadata sidecar.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 history budget exceeded.
"""

import argparse
import os
import sys

import numpy as np

from . import report
from .classical import (langevin_section, lyapunov_max, lyapunov_pair,
                        poincare_section)
from .config import SimConfig, apply_overrides, from_dict, load_config
from .errors import (ConfigError, GridCoverageError, HistoryBudgetError,
                     NumericalOverflowError, StepSizeFailure,
                     TruncationOverflowError, TruncationUnsafeError)
from .histories import (HistoryTable, cell_grid, classical_cell_frequencies,
                        classical_probability_check, decoherence_functional,
                        history_probabilities)
from .io import read_meta, read_table, write_csv, write_meta, write_pgm
from .numerics import RngStream
from .oscillator_ops import (QuantumState, coherent_state, fock_state,
                             operator_table)
from .phase_space import (histogram_overlap, invariant_wigner,
                          smooth_histogram, wigner_transform)
from .qsd import DensityOperator, qsd_section, strobe_map

NUMERICAL_ERRORS = (NumericalOverflowError, StepSizeFailure,
                    TruncationOverflowError, TruncationUnsafeError,
                    GridCoverageError)


def _apply_thread_cap():
    raw = os.environ.get("DUFFING_QSD_THREADS")
    if raw is None:
        return
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(
            f"DUFFING_QSD_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"DUFFING_QSD_THREADS must be >= 1, got {n}")
    import numba
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _initial_state(cfg: SimConfig) -> QuantumState:
    basis = cfg.basis()
    if cfg.state == "fock":
        return fock_state(basis, cfg.fock_n)
    if cfg.state == "cat":
        plus = coherent_state(basis, cfg.start_x, cfg.start_p)
        minus = coherent_state(basis, -cfg.start_x, -cfg.start_p)
        amps = plus.amplitudes + minus.amplitudes
        return QuantumState(amps / np.linalg.norm(amps), basis)
    return coherent_state(basis, cfg.start_x, cfg.start_p)


def _paths(cfg: SimConfig, out: str) -> dict:
    stem = os.path.join(out, cfg.name)
    return {"csv": stem + ".csv", "meta": stem + ".meta.json",
            "pgm": stem + ".pgm", "png": stem + ".png"}


def _wigner_axes(cfg: SimConfig) -> tuple[np.ndarray, np.ndarray]:
    return (np.linspace(cfg.extent_x[0], cfg.extent_x[1], cfg.resolution[0]),
            np.linspace(cfg.extent_p[0], cfg.extent_p[1], cfg.resolution[1]))


def _histogram(x: np.ndarray, p: np.ndarray, cfg: SimConfig) -> np.ndarray:
    """Normalized occupancy on the configured extent, then smoothed."""
    x_edges = np.linspace(cfg.extent_x[0], cfg.extent_x[1],
                          cfg.resolution[0] + 1)
    p_edges = np.linspace(cfg.extent_p[0], cfg.extent_p[1],
                          cfg.resolution[1] + 1)
    counts, _, _ = np.histogram2d(x, p, bins=[x_edges, p_edges])
    return smooth_histogram(counts / max(len(x), 1), cfg.smooth_sigma)


def _cell_grid(cfg: SimConfig):
    spacing = tuple(cfg.cell_spacing) if cfg.cell_spacing else None
    return cell_grid(cfg.basis(), cfg.cells_x, cfg.cells_p,
                     spacing=spacing, weight=cfg.cell_weight)


# ---- subcommand handlers; each returns the extras dict stored in the meta ----


def _run_classical(cfg: SimConfig, paths: dict, figures: bool) -> dict:
    cloud = poincare_section(cfg.params(), cfg.start(), cfg.n_points,
                             skip=cfg.skip, dt=cfg.dt)
    write_csv(paths["csv"], {"t": cloud.t, "x": cloud.x, "p": cloud.p})
    if figures:
        report.section_figure(paths["png"], cloud.x, cloud.p,
                              f"{cfg.name}: deterministic section")
    return {"n_points": len(cloud)}


def _run_langevin(cfg: SimConfig, paths: dict, figures: bool) -> dict:
    cloud = langevin_section(cfg.params(), cfg.start(), cfg.n_points,
                             skip=cfg.skip, dt=cfg.dt,
                             rng=RngStream(cfg.seed))
    write_csv(paths["csv"], {"t": cloud.t, "x": cloud.x, "p": cloud.p})
    if figures:
        report.section_figure(paths["png"], cloud.x, cloud.p,
                              f"{cfg.name}: thermal section")
    return {"n_points": len(cloud)}


def _run_lyapunov(cfg: SimConfig, paths: dict, figures: bool) -> dict:
    params = cfg.params()
    duration = cfg.n_periods * params.period
    dt = cfg.dt if cfg.dt is not None else params.period / 1000.0
    tangent = lyapunov_max(params, cfg.start(), duration, dt,
                           renorm_interval=cfg.renorm_periods * params.period)
    pair = lyapunov_pair(params, cfg.start(), duration, dt,
                         renorm_interval=cfg.renorm_periods * params.period,
                         separation=cfg.separation)
    write_csv(paths["csv"], {"benettin": [tangent], "pair": [pair]})
    return {"benettin": tangent, "pair": pair}


def _run_qsd_section(cfg: SimConfig, paths: dict, figures: bool) -> dict:
    cloud = qsd_section(_initial_state(cfg), cfg.params(), cfg.unraveling(),
                        cfg.n_points, skip=cfg.skip, dt=cfg.dt,
                        rng=RngStream(cfg.seed), n_traj=cfg.ensemble,
                        recenter_threshold=cfg.recenter_threshold,
                        tail_tol=cfg.tail_tol)
    write_csv(paths["csv"], {"t": cloud.t, "x": cloud.x, "p": cloud.p})
    if figures:
        report.section_figure(paths["png"], cloud.x, cloud.p,
                              f"{cfg.name}: quantum section")
    return {"n_points": len(cloud)}


def _run_strobe_map(cfg: SimConfig, paths: dict, figures: bool) -> dict:
    params = cfg.params()
    spec = cfg.unraveling()
    rho = DensityOperator.from_state(_initial_state(cfg))
    ops = operator_table(rho.basis)
    for _ in range(cfg.skip):
        rho = strobe_map(rho, params, spec, cfg.dt)
    rows = {"k": [], "t": [], "x": [], "p": [], "n": [], "purity": []}
    for k in range(1, cfg.n_points + 1):
        rho = strobe_map(rho, params, spec, cfg.dt)
        rows["k"].append(k)
        rows["t"].append((cfg.skip + k) * params.period)
        rows["x"].append(rho.expectation(ops.x).real)
        rows["p"].append(rho.expectation(ops.p).real)
        rows["n"].append(rho.expectation(ops.n).real)
        rows["purity"].append(rho.purity())
    write_csv(paths["csv"], rows)
    if figures:
        report.expectation_figure(
            paths["png"], rows["t"],
            {"x": rows["x"], "p": rows["p"], "n": rows["n"],
             "purity": rows["purity"]},
            f"{cfg.name}: stroboscopic map")
    return {"final_purity": rows["purity"][-1]}


def _write_wigner(grid, cfg: SimConfig, paths: dict, figures: bool,
                  title: str) -> dict:
    xx, pp = np.meshgrid(grid.x, grid.p, indexing="ij")
    write_csv(paths["csv"], {"x": xx.ravel(), "p": pp.ravel(),
                             "w": grid.values.ravel()})
    bound = float(np.abs(grid.values).max()) or 1.0
    vmin, vmax = write_pgm(paths["pgm"], grid.values, -bound, bound)
    if figures:
        report.heatmap_figure(paths["png"], grid.values,
                              (cfg.extent_x, cfg.extent_p), title,
                              diverging=True)
    return {"integral": grid.integral(), "min": float(grid.values.min()),
            "max": float(grid.values.max()),
            "pgm_vmin": vmin, "pgm_vmax": vmax}


def _run_wigner(cfg: SimConfig, paths: dict, figures: bool) -> dict:
    rho = DensityOperator.from_state(_initial_state(cfg))
    x, p = _wigner_axes(cfg)
    grid = wigner_transform(rho, x, p)
    return _write_wigner(grid, cfg, paths, figures,
                         f"{cfg.name}: Wigner function")


def _run_invariant_wigner(cfg: SimConfig, paths: dict, figures: bool) -> dict:
    rho = DensityOperator.from_state(_initial_state(cfg))
    x, p = _wigner_axes(cfg)
    grid = invariant_wigner(rho, cfg.params(), cfg.unraveling(), x, p,
                            n_iterates=cfg.n_points, skip=cfg.skip,
                            dt=cfg.dt)
    return _write_wigner(grid, cfg, paths, figures,
                         f"{cfg.name}: strobe-averaged Wigner")


def _run_histories(cfg: SimConfig, paths: dict, figures: bool) -> dict:
    grid = _cell_grid(cfg)
    rho = DensityOperator.from_state(_initial_state(cfg))
    dm = decoherence_functional(rho, grid, cfg.n_times, cfg.params(),
                                cfg.unraveling(), dt=cfg.dt,
                                budget=cfg.budget)
    table = history_probabilities(dm)
    n = len(dm.histories)
    alpha, alpha_prime = np.meshgrid(np.arange(n), np.arange(n),
                                     indexing="ij")
    write_csv(paths["csv"], {
        "alpha": alpha.ravel(), "alpha_prime": alpha_prime.ravel(),
        "re": dm.matrix.real.ravel(), "im": dm.matrix.imag.ravel(),
    })
    if figures:
        labels = ["-".join(str(c) for c in h) for h in dm.histories]
        report.matrix_figure(paths["png"], np.abs(dm.matrix), labels,
                             f"{cfg.name}: |decoherence functional|")
    return {
        "histories": [list(h) for h in dm.histories],
        "times": list(dm.times),
        "cells_x": list(grid.x_centers), "cells_p": list(grid.p_centers),
        "cell_spacing": [grid.dq, grid.dp],
        "cell_weight": grid.weight,
        "rest_index": grid.rest_index,
        "epsilon": table.epsilon,
        "diagonal_sum": dm.diagonal_sum(),
    }


def _compare_sections(cfg: SimConfig, paths: dict) -> dict:
    a = read_table(cfg.input_a)
    b = read_table(cfg.input_b)
    for name, table in (("input_a", a), ("input_b", b)):
        if "x" not in table or "p" not in table:
            raise ConfigError(f"{name} needs x and p columns, "
                              f"got {sorted(table)}")
    overlap = histogram_overlap(_histogram(a["x"], a["p"], cfg),
                                _histogram(b["x"], b["p"], cfg))
    write_csv(paths["csv"], {"overlap": [overlap]})
    return {"overlap": overlap}


def _compare_histories(cfg: SimConfig, paths: dict) -> dict:
    """Classical cell statistics against a stored histories artifact.

    input_a points at the histories csv; the grid, start, and strobe count
    are rebuilt from its metadata sidecar, while ensemble and seed of the
    classical sampling come from this config.
    """
    sidecar = cfg.input_a.removesuffix(".csv") + ".meta.json"
    meta = read_meta(sidecar)
    if meta.get("subcommand") != "histories":
        raise ConfigError(f"{sidecar} does not describe a histories artifact")
    stored = from_dict(meta["config"])
    extras = meta["extras"]
    histories = tuple(tuple(h) for h in extras["histories"])
    table = read_table(cfg.input_a)
    diag = np.asarray(table["alpha"]) == np.asarray(table["alpha_prime"])
    order = np.argsort(table["alpha"][diag])
    probs = table["re"][diag][order]
    quantum = HistoryTable(histories, probs, float(extras["epsilon"]))

    grid = _cell_grid(stored)
    freqs = classical_cell_frequencies(grid, stored.params(), stored.start(),
                                       stored.n_times, n_samples=cfg.ensemble,
                                       rng=RngStream(cfg.seed), dt=stored.dt)
    check = classical_probability_check(quantum, freqs)
    write_csv(paths["csv"], {
        "history": np.arange(len(histories)),
        "quantum": check.quantum, "classical": check.classical,
    })
    return {"tv_distance": check.tv_distance}


def _run_compare(cfg: SimConfig, paths: dict, figures: bool) -> dict:
    if not cfg.input_a or (cfg.compare_mode == "sections" and not cfg.input_b):
        raise ConfigError("compare needs input_a (and input_b for sections)")
    if cfg.compare_mode == "sections":
        return _compare_sections(cfg, paths)
    return _compare_histories(cfg, paths)


HANDLERS = {
    "classical": _run_classical,
    "langevin": _run_langevin,
    "lyapunov": _run_lyapunov,
    "qsd-section": _run_qsd_section,
    "strobe-map": _run_strobe_map,
    "wigner": _run_wigner,
    "invariant-wigner": _run_invariant_wigner,
    "histories": _run_histories,
    "compare": _run_compare,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="duffing-qsd",
        description="Forced damped Duffing oscillator: classical, thermal, "
                    "and open-quantum-system simulations.")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name, doc in (
            ("classical", "stroboscopic section of the deterministic flow"),
            ("langevin", "stroboscopic section with thermal noise"),
            ("lyapunov", "largest Lyapunov exponent, two estimators"),
            ("qsd-section", "quantum-trajectory stroboscopic section"),
            ("strobe-map", "density-operator observables strobe by strobe"),
            ("wigner", "Wigner function of the configured state"),
            ("invariant-wigner", "Wigner function of the strobe-averaged state"),
            ("histories", "decoherence functional on a phase-space cell grid"),
            ("compare", "overlap or cell statistics between artifacts"),
    ):
        p = sub.add_parser(name, help=doc)
        p.add_argument("--config", default=None,
                       help="JSON config file (defaults used when omitted)")
        p.add_argument("-s", "--set", action="append", default=[],
                       metavar="KEY=VALUE",
                       help="override one config key; value parsed as JSON")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--no-figures", action="store_true",
                       help="skip PNG rendering")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        _apply_thread_cap()
        cfg = load_config(args.config) if args.config else SimConfig().validate()
        if args.set:
            cfg = apply_overrides(cfg, args.set)
        os.makedirs(args.out, exist_ok=True)
        paths = _paths(cfg, args.out)
        extras = HANDLERS[args.subcommand](cfg, paths, not args.no_figures)
        write_meta(paths["meta"], args.subcommand, cfg.to_dict(), extras)
    except HistoryBudgetError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except NUMERICAL_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (ConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print(paths["csv"])
    return 0


if __name__ == "__main__":
    sys.exit(main())
