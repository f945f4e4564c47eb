"""Configuration-driven experiment runner.

Every subcommand reads one TOML config, writes a ``summary.json`` (with the
fully resolved configuration embedded) plus CSV tables into the output
directory, and exits 0 only when its declared assertions pass.  Config
errors exit 2 and numerical failures exit 3, both leaving a machine-readable
``error.json``.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import ldp as ldp_mod
from .config import ExperimentConfig
from .coefficients import check_hypotheses
from .fields import field_catalog, sign_coord_field
from .ou import OUQuadrature, smoothing_scan
from .sde import SimConfig, feynman_kac_verify, probabilistic_fixed_point, spde_simulate
from .solver import solve_qlpde, sweep_delta
from .spectral import interpolation_probe
from .util import ConfigError, NumericalError, set_max_workers

EXIT_OK = 0
EXIT_ASSERTIONS = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _finish(out: Path, subcommand: str, cfg: ExperimentConfig, results: dict, assertions: dict) -> int:
    passed = all(assertions.values())
    summary = {
        "subcommand": subcommand,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "config": cfg.resolved(),
        "results": results,
        "assertions": assertions,
        "passed": passed,
    }
    _write_json(out / "summary.json", summary)
    return EXIT_OK if passed else EXIT_ASSERTIONS


def _probe_points(cfg: ExperimentConfig, d: int) -> np.ndarray:
    pts = cfg.section("probes").get("points")
    if pts is None:
        base = np.zeros((3, d))
        base[1, 0] = 0.5
        if d > 1:
            base[2, 1] = -0.5
        else:
            base[2, 0] = -0.5
        return base
    arr = np.asarray(pts, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != d:
        raise ConfigError("probes.points must be a list of n_modes-dimensional points")
    return arr


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_check_hypotheses(cfg: ExperimentConfig, out: Path) -> int:
    coeffs = cfg.build_coefficients()
    report = check_hypotheses(coeffs, seed=cfg.master_seed + 11)
    rows = [
        [c.clause, c.passed, c.description, json.dumps(c.measured, sort_keys=True)]
        for c in report.clauses
    ]
    _write_csv(out / "hypotheses.csv", ["clause", "passed", "description", "measured"], rows)
    return _finish(
        out, "check-hypotheses", cfg,
        {"report": report.to_dict()},
        {"all_clauses_pass": report.all_passed},
    )


def _run_solver(cfg: ExperimentConfig):
    coeffs = cfg.build_coefficients()
    sol = cfg.section("solver")
    theta = sol.get("theta")
    field, report = solve_qlpde(
        coeffs,
        coeffs.g,
        epsilon=float(sol.get("epsilon", 0.1)),
        delta=coeffs.delta,
        T=float(sol.get("T", 1.0)),
        grids=cfg.solver_grids(),
        tol=float(sol.get("tol", 1e-6)),
        max_iter=int(sol.get("max_iter", 25)),
        theta=float(theta) if theta is not None else None,
        n_windows=int(sol.get("n_windows", 1)),
    )
    return coeffs, field, report


def cmd_solve_qlpde(cfg: ExperimentConfig, out: Path) -> int:
    coeffs, field, report = _run_solver(cfg)
    state = field.to_dict()
    state["norm_breakdown"] = report.norm_breakdown.to_dict()
    state["contraction_history"] = {
        "distances": report.distances,
        "ratios": report.ratios,
    }
    _write_json(out / "solution.json", state)
    _write_csv(
        out / "contraction.csv",
        ["iteration", "distance", "ratio"],
        [
            [i + 1, d, report.ratios[i - 1] if 0 < i <= len(report.ratios) else ""]
            for i, d in enumerate(report.distances)
        ],
    )
    return _finish(
        out, "solve-qlpde", cfg,
        {"contraction": report.to_dict()},
        {"converged": report.converged, "max_principle": report.max_principle_ok},
    )


def cmd_solve_probabilistic(cfg: ExperimentConfig, out: Path) -> int:
    coeffs = cfg.build_coefficients()
    sol = cfg.section("solver")
    sim = cfg.sim_config()
    fp_tol = float(cfg.section("simulation").get("fixed_point_tol", 0.02))
    field, report = probabilistic_fixed_point(
        coeffs, coeffs.g,
        epsilon=float(sol.get("epsilon", 0.1)),
        delta=coeffs.delta,
        t=float(sol.get("T", 1.0)),
        grids=cfg.solver_grids(),
        cfg=sim,
        tol=fp_tol,
    )
    _write_json(out / "solution.json", field.to_dict())
    return _finish(
        out, "solve-probabilistic", cfg,
        {"fixed_point": report.to_dict()},
        {"converged": report.converged},
    )


def cmd_verify_fk(cfg: ExperimentConfig, out: Path) -> int:
    coeffs, field, report = _run_solver(cfg)
    sim = cfg.sim_config()
    T = float(cfg.section("solver").get("T", 1.0))
    probes = _probe_points(cfg, coeffs.model.n_modes)
    fk_rows = []
    fks = []
    for x in probes:
        fk = feynman_kac_verify(coeffs, field, x, T, sim)
        fks.append(fk)
        fk_rows.append(
            [json.dumps(x.tolist()), fk.u_value, fk.mc_mean, fk.mc_stderr,
             fk.z_score, fk.bias_estimate, fk.bias_budget, fk.passed]
        )
    _write_csv(
        out / "fk_reports.csv",
        ["x", "u_value", "mc_mean", "mc_stderr", "z_score", "bias_estimate", "bias_budget", "passed"],
        fk_rows,
    )
    return _finish(
        out, "verify-fk", cfg,
        {"fk_reports": [fk.to_dict() for fk in fks]},
        {
            "solver_converged": report.converged,
            "all_z_scores_within_4": all(abs(fk.z_score) <= 4 for fk in fks),
            "all_fk_pass": all(fk.passed for fk in fks),
        },
    )


def cmd_simulate(cfg: ExperimentConfig, out: Path) -> int:
    coeffs = cfg.build_coefficients()
    sim = cfg.sim_config()
    T = float(cfg.section("solver").get("T", 1.0))
    probes = _probe_points(cfg, coeffs.model.n_modes)
    x = probes[0]
    ens = spde_simulate(coeffs, coeffs.g, x, T, sim)
    mean, stderr = ens.terminal_mean_stderr(sim.antithetic)
    results = {
        "x": x.tolist(),
        "t": T,
        "terminal_g_mean": mean,
        "terminal_g_stderr": stderr,
        "exit_fraction": ens.exit_fraction,
        "sup_norm_mean": float(np.mean(ens.sup_norm)),
        "sup_norm_p2": float(np.mean(ens.sup_norm**2)),
        "sup_norm_p4": float(np.mean(ens.sup_norm**4)),
    }
    _write_csv(
        out / "ensemble.csv",
        ["quantity", "value"],
        [[k, v] for k, v in results.items() if np.isscalar(v)],
    )
    if sim.store_paths:
        write_paths_bin(out / "paths.bin", ens.paths)
    g_bound = float(np.max(np.abs(coeffs.g.value(ens.terminal))))
    return _finish(
        out, "simulate", cfg,
        results,
        {"mean_bounded_by_sup_g": abs(mean) <= max(g_bound, 1.0) + 1e-12,
         "finite_moments": bool(np.isfinite(results["sup_norm_p4"]))},
    )


def _ldp_start(cfg: ExperimentConfig, lsec: dict, d: int) -> np.ndarray:
    if "x" in lsec:
        x = np.asarray(lsec["x"], dtype=float)
        if x.shape != (d,):
            raise ConfigError("ldp.x must have n_modes entries")
        return x
    return _probe_points(cfg, d)[0]


def cmd_ldp_minimize(cfg: ExperimentConfig, out: Path) -> int:
    coeffs = cfg.build_coefficients()
    lsec = cfg.section("ldp")
    d = coeffs.model.n_modes
    target = np.asarray(lsec.get("target", [1.0] + [0.0] * (d - 1)), dtype=float)
    T = float(cfg.section("solver").get("T", 1.0))
    x = _ldp_start(cfg, lsec, d)
    opts = ldp_mod.MinimizeOptions(
        n_steps=int(lsec.get("minimize_n_steps", 128)),
        radius=float(lsec.get("minimize_radius", 0.0)),
    )
    av = ldp_mod.minimize_action(coeffs, coeffs.g, x, T, target, opts)
    _write_json(out / "control.json", av.control.to_dict())
    _write_csv(
        out / "minimizer_trace.csv",
        ["mu", "action", "endpoint_gap", "objective"],
        [[s["mu"], s["action"], s["endpoint_gap"], s["objective"]] for s in av.stages],
    )
    results = av.to_dict()
    results.pop("control")
    return _finish(
        out, "ldp-minimize", cfg, results,
        {"converged": av.converged},
    )


def cmd_ldp_mc(cfg: ExperimentConfig, out: Path) -> int:
    coeffs = cfg.build_coefficients()
    lsec = cfg.section("ldp")
    d = coeffs.model.n_modes
    target = np.asarray(lsec.get("target", [0.6] + [0.0] * (d - 1)), dtype=float)
    radius = float(lsec.get("radius", 0.15))
    T = float(cfg.section("solver").get("T", 1.0))
    x = _probe_points(cfg, d)[0]
    sim = SimConfig(
        n_steps=int(lsec.get("n_steps", 128)),
        n_paths=int(lsec.get("n_paths", 200_000)),
        seed=cfg.master_seed,
        epsilon=float(cfg.section("solver").get("epsilon", 0.1)),
    )
    rep = ldp_mod.ldp_mc_probe(
        coeffs, coeffs.g, x, T,
        {"target": target, "radius": radius},
        lsec.get("epsilon_grid", [0.05, 0.1, 0.2]),
        sim,
        opts=ldp_mod.MinimizeOptions(
            n_steps=int(lsec.get("minimize_n_steps", 128)), radius=radius
        ),
        min_hits=int(lsec.get("min_hits", 30)),
    )
    _write_csv(
        out / "ldp_levels.csv",
        ["epsilon", "n_paths", "hits", "p_hat", "neg_eps_log_p", "flagged_low_hits"],
        [[lv.epsilon, lv.n_paths, lv.hits, lv.p_hat, lv.neg_eps_log_p, lv.flagged_low_hits]
         for lv in rep.levels],
    )
    return _finish(
        out, "ldp-mc", cfg, rep.to_dict(),
        {"all_levels_have_hits": all(not lv.flagged_low_hits for lv in rep.levels)},
    )


def cmd_smoothing_probe(cfg: ExperimentConfig, out: Path) -> int:
    coeffs = cfg.build_coefficients()
    ssec = cfg.section("smoothing")
    model = coeffs.model
    tg = np.geomspace(
        float(ssec.get("t_min", 1e-3)), float(ssec.get("t_max", 1e-1)),
        int(ssec.get("n_t", 8)),
    )
    quad = OUQuadrature(
        mode="gauss_hermite_tensor" if model.n_modes <= 3 else "monte_carlo",
        nodes_per_mode=int(ssec.get("gh_nodes", 96)),
        n_samples=int(ssec.get("mc_samples", 40_000)),
        seed=cfg.master_seed,
    )
    orders = tuple(int(o) for o in ssec.get("orders", [1, 2]))
    g = sign_coord_field(model.n_modes)
    reports = smoothing_scan(
        model, g, orders, tg, float(cfg.section("solver").get("epsilon", 0.1)), quad
    )
    _write_csv(
        out / "smoothing.csv",
        ["order", "exponent", "constant", "passed"] + [f"t_{i}" for i in range(tg.size)],
        [[r.order, r.exponent, r.constant, r.passed] + r.norms.tolist() for r in reports],
    )
    return _finish(
        out, "smoothing-probe", cfg,
        {
            "t_grid": tg.tolist(),
            "reports": [
                {"order": r.order, "exponent": r.exponent, "constant": r.constant,
                 "passed": r.passed, "norms": r.norms.tolist()}
                for r in reports
            ],
        },
        {"all_orders_pass": all(r.passed for r in reports)},
    )


def cmd_interp_probe(cfg: ExperimentConfig, out: Path) -> int:
    coeffs = cfg.build_coefficients()
    isec = cfg.section("interp")
    model = coeffs.model
    theta = float(isec.get("theta", 0.5))
    n_fields = int(isec.get("n_fields", 20))
    fields = field_catalog(model.n_modes, n_fields, seed=cfg.master_seed)
    rows = []
    violations = 0
    reports = []
    for i, f in enumerate(fields):
        rep = interpolation_probe(f, theta, model, seed=cfg.master_seed + i)
        reports.append(rep)
        for e in rep.entries:
            rows.append([i, f.name, e.name, e.lhs, e.rhs, e.constant, e.violated])
            violations += int(e.violated)
    _write_csv(
        out / "interpolation.csv",
        ["field_index", "field", "inequality", "lhs", "rhs", "constant", "violated"],
        rows,
    )
    return _finish(
        out, "interp-probe", cfg,
        {"n_fields": n_fields, "theta": theta, "violations": violations},
        {"no_constant2_violations": violations == 0},
    )


def cmd_sweep_delta(cfg: ExperimentConfig, out: Path) -> int:
    sol = cfg.section("solver")
    deltas = cfg.section("sweep").get("deltas", [0.02, 0.05, 0.1, 0.2, 0.4])
    rep = sweep_delta(
        lambda dlt: cfg.build_coefficients(delta=dlt),
        deltas,
        epsilon=float(sol.get("epsilon", 0.1)),
        T=float(sol.get("T", 1.0)),
        grids=cfg.solver_grids(),
    )
    _write_csv(
        out / "delta_sweep.csv",
        ["delta", "ratio", "contractive", "delta_bar", "delta_bar_in_range"],
        [[e.delta, e.ratio, e.contractive, rep.delta_bar, rep.delta_bar_in_range]
         for e in rep.entries],
    )
    ratios = [e.ratio for e in rep.entries]
    return _finish(
        out, "sweep-delta", cfg, rep.to_dict(),
        {
            "delta_bar_reported": rep.delta_bar is not None,
            "ratios_monotone_nondecreasing": all(
                b >= a for a, b in zip(ratios[:-1], ratios[1:])
            ),
        },
    )


def write_paths_bin(path: Path, paths: np.ndarray) -> None:
    """Header int64 LE {n_paths, n_steps, n_modes}, then row-major float64
    states of shape (n_paths, n_steps + 1, n_modes)."""
    n_paths, n_states, n_modes = paths.shape
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.asarray([n_paths, n_states - 1, n_modes], dtype="<i8").tofile(fh)
        np.ascontiguousarray(paths, dtype="<f8").tofile(fh)


def read_paths_bin(path: Path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = np.fromfile(fh, dtype="<i8", count=3)
        n_paths, n_steps, n_modes = (int(v) for v in header)
        data = np.fromfile(fh, dtype="<f8")
    return data.reshape(n_paths, n_steps + 1, n_modes)


_SUBCOMMANDS = {
    "check-hypotheses": cmd_check_hypotheses,
    "solve-qlpde": cmd_solve_qlpde,
    "solve-probabilistic": cmd_solve_probabilistic,
    "verify-fk": cmd_verify_fk,
    "simulate": cmd_simulate,
    "ldp-minimize": cmd_ldp_minimize,
    "ldp-mc": cmd_ldp_mc,
    "smoothing-probe": cmd_smoothing_probe,
    "interp-probe": cmd_interp_probe,
    "sweep-delta": cmd_sweep_delta,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="qlklab",
        description="Spectral laboratory for quasi-linear Kolmogorov equations and SPDE small-noise analysis",
    )
    parser.add_argument("subcommand", choices=sorted(_SUBCOMMANDS))
    parser.add_argument("--config", required=True, help="path to the TOML experiment config")
    parser.add_argument("--out", default=None, help="output directory (overrides config)")
    parser.add_argument("--seed", type=int, default=None, help="override master_seed")
    parser.add_argument("--threads", type=int, default=1, help="worker pool cap")
    args = parser.parse_args(argv)

    set_max_workers(args.threads)
    out = None
    try:
        cfg = ExperimentConfig.load(args.config)
        if args.seed is not None:
            cfg.raw["master_seed"] = int(args.seed)
        out = Path(args.out or cfg.section("output").get("directory", "out"))
        out.mkdir(parents=True, exist_ok=True)
        return _SUBCOMMANDS[args.subcommand](cfg, out)
    except ConfigError as exc:
        payload = {"error_type": "config", "message": str(exc)}
        if out is not None:
            _write_json(out / "error.json", payload)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        payload = {"error_type": "numerical", "message": str(exc)}
        if out is not None:
            _write_json(out / "error.json", payload)
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
