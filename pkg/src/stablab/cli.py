"""Command-line front end: ``stablab <subcommand> --config run.toml --out results/``.

Exit codes: 0 success, 1 configuration error, 2 numerical failure (the stage
is printed), 3 invariant violation.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import plotting
from .config import ExperimentConfig, load_config
from .errors import (EXIT_CONFIG, EXIT_INVARIANT, EXIT_NUMERICAL, EXIT_OK, ConfigError,
                     InvariantViolation, StabLabError)
from .forward import Potential
from .geometry import build_cutoffs, build_neighborhoods, build_patch, make_grid
from .io import Cache, write_csv, write_field, write_json
from .potentials import make_profile
from .recon import CAVEATS, PROBE_COLUMNS, Schedule, SweepSettings

log = logging.getLogger("stablab")

SUBCOMMANDS = ("forward", "dtn", "cgo", "runge", "carleman", "ucp", "probe", "sweep", "selftest")


class Run:
    """Shared state of one invocation: config, output directory, cache and header block."""

    def __init__(self, cfg: ExperimentConfig, out: Path, cache: Cache, dump_probes: bool, command: str):
        self.cfg, self.out, self.cache, self.dump_probes, self.command = cfg, out, cache, dump_probes, command
        out.mkdir(parents=True, exist_ok=True)
        g = cfg["grid"]
        self.grid = make_grid(g["n_axis"], g["extent"])

    def header(self, grid=None) -> dict:
        grid = grid or self.grid
        return {"command": self.command, "grid": grid.describe(), "grid_hash": grid.key(),
                "deviations": list(CAVEATS), "schedule": dict(self.cfg["schedule"]),
                "seed": self.cfg.seed, "label": self.cfg["label"]}

    def csv(self, name, rows, columns, grid=None):
        write_csv(self.out / name, rows, columns, header=self.header(grid))

    def json(self, name, obj, grid=None):
        write_json(self.out / name, {"header": self.header(grid), **obj})

    # shared objects
    def chain(self):
        c = self.cfg["chain"]
        return build_neighborhoods(self.grid, c["widths"], c["min_width"])

    def potentials(self, chain=None):
        p = self.cfg["potentials"]
        f1, fd = make_profile(p["q1"]), make_profile(p["dq"])
        q1 = Potential.from_function(self.grid, f1, chain=chain, tag="q1")
        q2 = Potential.from_function(self.grid, lambda x, y, z: f1(x, y, z) + fd(x, y, z), chain=chain,
                                     tag="q2")
        return q1, q2

    def solver_opts(self) -> dict:
        s = self.cfg["solver"]
        return {"max_kh": s["max_kh"], "gap_constant": s["gap_constant"], "override": s["override"]}

    def patches(self):
        p = self.cfg["patches"]
        return build_patch(self.grid, p["gd"]), build_patch(self.grid, p["gn"])


# --- subcommands ------------------------------------------------------------------------

def cmd_forward(run: Run):
    from .forward import get_solver
    from .norms import grid_sobolev_norm

    q1, _ = run.potentials()
    grid = run.grid
    X, Y, Z = grid.mesh()
    rows = []
    u = None
    for k in run.cfg["solver"]["ks"]:
        s = get_solver(q1, k, **run.solver_opts())
        f = np.exp(1j * k * X).ravel()[grid.boundary_ids]
        u = s.solve_dirichlet(f)
        res = s.apply(u)
        gap = s.spectral_gap()
        rows.append({"k": k, "kh": k * grid.spacing, "gap": gap.gap, "gap_threshold": gap.threshold,
                     "residual_max": float(np.max(np.abs(res))),
                     "u_l2": grid_sobolev_norm(u.reshape(grid.shape), grid, 0),
                     "u_h1": grid_sobolev_norm(u.reshape(grid.shape), grid, 1)})
        write_field(run.out / f"u_k{k:g}.bin", u.reshape(grid.shape), "solution", grid.n_axis, k=k)
    cols = ["k", "kh", "gap", "gap_threshold", "residual_max", "u_l2", "u_h1"]
    run.csv("forward.csv", rows, cols)
    plotting.mid_slice(run.out / "forward_slice.png", u.reshape(grid.shape),
                       f"|u| mid-plane, k={rows[-1]['k']:g}")
    return {"rows": len(rows)}


def cmd_dtn(run: Run):
    from .dtn import assemble_partial_dtn, dtn_distance

    q1, q2 = run.potentials()
    gd, gn = run.patches()
    rows = []
    for k in run.cfg["solver"]["ks"]:
        A = assemble_partial_dtn(q1, k, gd, gn, solver_opts=run.solver_opts(), cache=run.cache)
        B = assemble_partial_dtn(q2, k, gd, gn, solver_opts=run.solver_opts(), cache=run.cache)
        d = dtn_distance(A, B)
        A.save(run.out / f"dtn_q1_k{k:g}.bin")
        B.save(run.out / f"dtn_q2_k{k:g}.bin")
        rows.append({"k": k, "n_d": gd.size, "n_n": gn.size, "delta": d,
                     "q1_max_entry": float(np.max(np.abs(A.entries))),
                     "q2_max_entry": float(np.max(np.abs(B.entries)))})
    run.csv("dtn.csv", rows, ["k", "n_d", "n_n", "delta", "q1_max_entry", "q2_max_entry"])
    plotting.semilogx(run.out / "dtn_delta.png", [r["k"] for r in rows], {"delta": [r["delta"] for r in rows]},
                      "k", "δ")
    return {"rows": len(rows)}


def cmd_cgo(run: Run):
    from .cgo import cgo_cell_for, cgo_remainder, lattice_cell_for, lattice_zeta_pair, make_zeta_pair
    from .recon import fit_loglog

    c = run.cfg["cgo"]
    q1, _ = run.potentials()
    grid = run.grid
    rows = []
    cell = lattice_cell_for(grid) if c["lattice"] else cgo_cell_for(grid)
    for a in c["a"]:
        pair = make_zeta_pair(np.asarray(c["xi"], dtype=float), c["k"], a)
        if c["lattice"]:
            pair = lattice_zeta_pair(pair, grid.spacing)
        sol = cgo_remainder(q1, pair.zeta1, cell, tol=c["tol"])
        rows.append({"a": float(a), "r_l2": sol.r_l2, "residual_l2": sol.residual_l2,
                     "iterations": sol.iterations, "min_symbol": sol.min_symbol})
    slope, r2 = fit_loglog([r["a"] for r in rows], [r["r_l2"] for r in rows])
    run.csv("cgo.csv", rows, ["a", "r_l2", "residual_l2", "iterations", "min_symbol"])
    run.json("cgo.json", {"slope": slope, "r2": r2, "cell_n": cell.n, "k": c["k"], "xi": c["xi"]})
    plotting.loglog(run.out / "cgo_decay.png", [r["a"] for r in rows], {"‖r‖": [r["r_l2"] for r in rows]},
                    "a", "‖r‖₂", slope=-1.0)
    return {"slope": slope}


def cmd_runge(run: Run):
    from .cgo import lattice_cell_for, lattice_zeta_pair, make_zeta_pair, cgo_remainder
    from .runge import RungeProblem, check_tradeoff, fit_runge_exponent

    c = run.cfg["runge"]
    chain = run.chain()
    q1, _ = run.potentials()
    gd, _ = run.patches()
    grid = run.grid
    pair = lattice_zeta_pair(make_zeta_pair(np.asarray(c["xi"], dtype=float), c["k"], c["a"]), grid.spacing)
    v = cgo_remainder(q1, pair.zeta1, lattice_cell_for(grid)).sample(grid)
    rp = RungeProblem(q1, c["k"], gd, chain, mode=c["mode"], solver_opts=run.solver_opts())
    res = rp.sweep(v, c["lambdas"])
    rows = [r.row() for r in res]
    trade = check_tradeoff(res)
    fit = {}
    try:
        fit["mu"], fit["r2"] = fit_runge_exponent(res)
    except ConfigError as exc:
        fit["mu"], fit["r2"], fit["note"] = None, None, str(exc)
    run.csv("runge.csv", rows, ["lambda", "eps_achieved", "data_cost", "k"])
    run.json("runge.json", {"tradeoff": trade, "fit": fit, "mode": rp.mode})
    plotting.loglog(run.out / "runge_tradeoff.png", [1 / r["eps_achieved"] for r in rows],
                    {"cost": [r["data_cost"] for r in rows]}, "1/ε", "‖f‖")
    return trade


def cmd_carleman(run: Run):
    from .carleman import build_weight, carleman_ratio, gamma_growth, random_test_functions

    c = run.cfg["carleman"]
    grid = run.grid
    _, gn = run.patches()
    w = build_weight(grid, gn, c["gamma"])
    funcs = random_test_functions(grid, c["n_test"], seed=run.cfg.seed)
    hs = [c["h0"] * 2.0 ** (-j) for j in range(c["n_h"])]
    rows, summary = [], []
    for form in c["forms"]:
        for h in hs:
            checks = [carleman_ratio(w, v, h, c["E"], form) for v in funcs]
            for i, ch in enumerate(checks):
                rows.append({**ch.row(), "index": i})
            ratios = [ch.ratio for ch in checks]
            summary.append({"form": form, "h": h, "min_ratio": float(np.min(ratios)),
                            "median_ratio": float(np.median(ratios))})
    growth = gamma_growth(w, funcs[0], hs[-1], max(c["gamma"], 1.0), c["E"])
    write_field(run.out / "weight_psi.bin", w.psi, "weight", grid.n_axis, gamma=w.gamma)
    run.csv("carleman.csv", rows, ["form", "index", "h", "lhs", "rhs", "ratio", "gamma", "E"])
    run.csv("carleman_summary.csv", summary, ["form", "h", "min_ratio", "median_ratio"])
    run.json("carleman.json", {"weight": {**w.params, **w.diagnostics}, "gamma_growth": growth})
    plotting.loglog(run.out / "carleman_min_ratio.png", hs,
                    {f: [s["min_ratio"] for s in summary if s["form"] == f] for f in c["forms"]},
                    "h", "min rhs/lhs")
    return {"forms": c["forms"]}


def cmd_ucp(run: Run):
    from .carleman import build_weight, default_h_sweep, ucp_check, ucp_solution

    c = run.cfg["ucp"]
    chain = run.chain()
    q1, _ = run.potentials()
    _, gn = run.patches()
    u = ucp_solution(q1, c["k"], chain, c["amplitude"], **run.solver_opts())
    w = build_weight(run.grid, gn, c["gamma"])
    res = ucp_check(q1, c["k"], chain, gn, u, default_h_sweep(c["k"], c["h0"], c["n_h"]), c["h0"], weight=w)
    run.csv("ucp.csv", res.table, ["h", "lhs", "rhs", "ratio"])
    run.json("ucp.json", {"alpha1": res.alpha1, "alpha2": res.alpha2,
                          "predicted_alpha1": res.predicted_alpha1, "predicted_alpha2": res.predicted_alpha2,
                          "m0": res.m0, "norms": res.norms, "all_dominated": res.all_dominated(),
                          "degenerate": res.degenerate})
    hs = [r["h"] for r in res.table]
    plotting.loglog(run.out / "ucp.png", hs, {"lhs": [r["lhs"] for r in res.table],
                                               "fitted rhs": [r["rhs"] for r in res.table]}, "h", "norm")
    if not res.degenerate and not res.all_dominated():
        raise InvariantViolation("fitted model does not dominate the left-hand side")
    return {"alpha1": res.alpha1, "alpha2": res.alpha2}


def cmd_probe(run: Run):
    from .recon import build_cgo_pair, trace_partial_identity

    c = run.cfg["probe"]
    chain = run.chain()
    q1, q2 = run.potentials(chain)
    gd, gn = run.patches()
    ch = run.cfg["chain"]
    cut = build_cutoffs(chain, ch["transition"], ch["min_transition"])
    recs = []
    for xi in c["xi"]:
        cp = build_cgo_pair(q1, q2, np.asarray(xi, dtype=float), c["k"], c["a"])
        recs.append(trace_partial_identity(q1, q2, cp, gd, gn, chain, cut, lam=c["lam"]))
    rows = []
    for r in recs:
        rows.append({**r.row(), "commutator_re": r.commutator_term.real, "commutator_im": r.commutator_term.imag,
                     "eps": r.eps, "identity_residual": r.identity_residual, "triangle_gap": r.triangle_gap()})
    cols = PROBE_COLUMNS + ["commutator_re", "commutator_im", "eps", "identity_residual", "triangle_gap"]
    run.csv("probes.csv", rows, cols)
    return {"probes": len(rows)}


def sweep_settings(cfg: ExperimentConfig) -> SweepSettings:
    s = dict(cfg["sweep"])
    sched = Schedule(**cfg["schedule"])
    return SweepSettings(n_axis=int(s["n_axis"]), extent=float(s["extent"]), widths=tuple(s["widths"]),
                         q1=s["q1"], dq=s["dq"], ks=tuple(float(k) for k in s["ks"]), schedule=sched,
                         pad=int(s["pad"]), lattice_cgo=bool(s["lattice_cgo"]), gap_c=float(s["gap_c"]),
                         max_kh=float(s["max_kh"]), override=bool(cfg["solver"]["override"]),
                         r3_a=tuple(float(a) for a in s["r3_a"]), r3_k=float(s["r3_k"]),
                         r3_tau=float(s["r3_tau"]), delta_tol=float(s["delta_tol"]), seed=cfg.seed)


def write_sweep_report(run: Run, report, grid=None):
    grid = grid or make_grid(report.grid["n_axis"], report.grid["extent"])
    run.csv("sweep_rows.csv", report.rows, report.ROW_COLUMNS, grid)
    run.csv("sweep_r3.csv", report.r3_table, ["a", "max_abs_R3", "n_xi"], grid)
    run.json("sweep_report.json", report.to_dict(), grid)
    if run.dump_probes:
        run.csv("sweep_probes.csv", [p.row() for p in report.probes], PROBE_COLUMNS, grid)
    if report.rows:
        x = [r["k"] + math.log(1 / r["delta"]) for r in report.rows]
        plotting.loglog(run.out / "sweep_errors.png", x,
                        {"H⁻¹ error": [r["h_minus1_error"] for r in report.rows]},
                        "k + log(1/δ)", "error", slope=report.fits.get("reference_slope"))
    if report.r3_table:
        plotting.loglog(run.out / "sweep_r3.png", [r["a"] for r in report.r3_table],
                        {"max |R3|": [r["max_abs_R3"] for r in report.r3_table]}, "a", "|R3|", slope=-1.0)


def cmd_sweep(run: Run):
    from .recon import stability_sweep

    report = stability_sweep(sweep_settings(run.cfg))
    write_sweep_report(run, report)
    for k, t in report.timings.items():
        log.info("sweep %s took %.1f s", k, t)
    return {"rows": len(report.rows), "skipped": len(report.skipped)}


def cmd_selftest(run: Run):
    from .selftest import run_selftest

    rows = run_selftest()
    run.csv("selftest.csv", rows, ["check", "passed", "detail"])
    for r in rows:
        print(f"{'PASS' if r['passed'] else 'FAIL'} {r['check']}: {r['detail']}")
    if not all(r["passed"] for r in rows):
        raise InvariantViolation("self-test failures: " + ", ".join(r["check"] for r in rows if not r["passed"]))
    return {"checks": len(rows)}


COMMANDS = {"forward": cmd_forward, "dtn": cmd_dtn, "cgo": cmd_cgo, "runge": cmd_runge,
            "carleman": cmd_carleman, "ucp": cmd_ucp, "probe": cmd_probe, "sweep": cmd_sweep,
            "selftest": cmd_selftest}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stablab", description=__doc__.splitlines()[0])
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", help="TOML experiment file (defaults when omitted)")
    p.add_argument("--out", default="stablab-out", help="output directory")
    p.add_argument("--cache", default=None, help="cache directory for DtN matrices")
    p.add_argument("--threads", type=int, default=None, help="BLAS/FFT thread limit")
    p.add_argument("--dump-probes", action="store_true", help="write per-probe CSV in sweep mode")
    p.add_argument("--override", action="store_true", help="allow k*h above the pollution bound")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def run(subcommand: str, config_path=None, *, out="stablab-out", cache=None, threads=None,
        dump_probes=False, override=False) -> int:
    try:
        cfg = load_config(config_path, validate=False)
        if override:
            cfg.set_override()
        cfg.validate()
        r = Run(cfg, Path(out), Cache(cache), dump_probes, subcommand)
        if threads:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=int(threads)):
                result = COMMANDS[subcommand](r)
        else:
            result = COMMANDS[subcommand](r)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except StabLabError as exc:
        stage = getattr(exc, "stage", "") or subcommand
        print(f"numerical failure [{stage}]: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (np.linalg.LinAlgError, FloatingPointError, ArithmeticError) as exc:
        print(f"numerical failure [{subcommand}]: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    log.info("%s: %s", subcommand, json.dumps(result, default=str))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return run(args.subcommand, args.config, out=args.out, cache=args.cache, threads=args.threads,
               dump_probes=args.dump_probes, override=args.override)


if __name__ == "__main__":
    sys.exit(main())
