"""Command-line entry points binding the pipeline together.

Exit codes: 0 success, 1 runtime failure, 2 configuration error,
3 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .config import CONFIG_SCHEMA, ConfigError, RunConfig, parse_config
from .correlation import dc_curve, gradient_two_point, mean_h1_seminorm_sq
from .ensemble import (
    Ensemble,
    read_ensemble,
    sample_initial,
    shear_flow,
    taylor_green,
    write_ensemble,
)
from .khm import RadialBump, TestTensor, khm_budget
from .nse_solver import (
    BlowUpError,
    SolverConfig,
    energy_budget,
    load_trajectory,
    run,
    save_trajectory,
)
from .parallel import parallel_map
from .spectral_field import (
    ConfigurationError,
    Grid,
    VelocityField,
    energy,
    inner_product,
    l2_distance,
    leray_project,
    random_field,
)
from .structure_stats import (
    bound_check,
    direction_set,
    scaling_fit,
    structure_functions,
    weak_anisotropy_residual,
)
from .vvlimit import SweepPlan, run_sweep, inviscid_residual_scaling

GOLDEN_PATH = os.path.join(os.path.dirname(__file__), "data",
                           "golden_taylor_green.json")


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("NSE_STAT_THREADS")
    return int(env) if env else 1


# ---------------------------------------------------------------------------
# simulate run layout: per-member trajectory directories plus run.json
# ---------------------------------------------------------------------------

def write_run(out_dir, trajs, cfg: RunConfig) -> None:
    os.makedirs(out_dir, exist_ok=True)
    dirs = []
    for i, traj in enumerate(trajs):
        name = f"member_{i:04d}"
        save_trajectory(traj, os.path.join(out_dir, name))
        dirs.append(name)
    doc = {
        "times": [float(t) for t in trajs[0].times],
        "nu": trajs[0].config.nu,
        "member_dirs": dirs,
        "provenance": cfg.provenance(),
    }
    with open(os.path.join(out_dir, "run.json"), "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_run(run_dir) -> tuple:
    with open(os.path.join(run_dir, "run.json")) as fh:
        meta = json.load(fh)
    trajs = [load_trajectory(os.path.join(run_dir, d))
             for d in meta["member_dirs"]]
    ensembles = []
    for j in range(len(trajs[0].snapshots)):
        ensembles.append(Ensemble([t.snapshots[j] for t in trajs]))
    return ensembles, meta


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = parse_config(args.config)
    if args.print_config:
        json.dump(cfg.data, sys.stdout, indent=1, sort_keys=True)
        sys.stdout.write("\n")
        return 0
    ens = sample_initial(cfg.measure_spec(), cfg.data["ensemble"]["members"],
                         cfg.grid(), nu=cfg.data["solver"]["nu"],
                         threads=_threads(args))
    write_ensemble(ens, args.out, provenance=cfg.provenance())
    print(f"wrote ensemble of {ens.size} members to {args.out}")
    return 0


def cmd_simulate(args) -> int:
    cfg = parse_config(args.config)
    ens = read_ensemble(args.ensemble)
    solver_cfg = cfg.solver_config()
    times = cfg.sample_times()

    def one(member):
        return run(member.with_nu(solver_cfg.nu), solver_cfg,
                   snapshot_times=times)

    trajs = parallel_map(one, ens.members, _threads(args))
    write_run(args.out, trajs, cfg)
    print(f"wrote {len(trajs)} member trajectories "
          f"({len(times)} sample times) to {args.out}")
    return 0


def cmd_stats(args) -> int:
    cfg = parse_config(args.config)
    ensembles, _ = load_run(args.run)
    ana = cfg.data["analysis"]
    r_grid = cfg.r_grid()
    dirs = direction_set(ensembles[0].grid.dim, ana["directions"])
    table = structure_functions(ensembles, r_grid, dirs,
                                p_list=tuple(ana["p_list"]),
                                tau=ana["tau"], threads=_threads(args))
    ratios = bound_check(table)
    times = np.array([e.time for e in ensembles])
    dc_inst = np.stack([dc_curve(e, r_grid) for e in ensembles])
    dc_int = np.trapezoid(dc_inst, times, axis=0)

    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "structure.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau", "r", "p", "S_par", "S0_3", "S_perp_3"])
        for i, r in enumerate(table.r_grid):
            for p in sorted(table.s_par):
                w.writerow([f"{table.tau:.12g}", f"{r:.12g}", p,
                            f"{table.s_par[p][i]:.17g}",
                            f"{table.s0_3[i]:.17g}",
                            f"{table.s_perp_3[i]:.17g}"])
    with open(os.path.join(args.out, "dc_curve.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["observable", "k", "t_or_tau", "h_or_r", "value"])
        for j, t in enumerate(times):
            for i, r in enumerate(r_grid):
                w.writerow(["dc_modulus", 2, f"{t:.12g}", f"{r:.12g}",
                            f"{dc_inst[j, i]:.17g}"])
        for i, r in enumerate(r_grid):
            w.writerow(["dc_modulus_time_integral", 2, f"{times[-1]:.12g}",
                        f"{r:.12g}", f"{dc_int[i]:.17g}"])
    doc = {
        "tau": table.tau,
        "e0": table.e0,
        "bound_ratios": ratios,
        "provenance": cfg.provenance(),
    }
    try:
        fit = scaling_fit(table, (float(r_grid[0]), float(r_grid[-1])))
        doc["scaling_fit"] = {
            "alpha": fit.alpha, "zeta": {str(k): v for k, v in fit.zeta.items()},
            "r_squared": fit.r_squared,
            "she_leveque": {str(k): v for k, v in fit.she_leveque.items()},
            "warnings": fit.warnings,
        }
    except (ConfigurationError, ValueError) as exc:
        doc["scaling_fit"] = {"skipped": str(exc)}
    with open(os.path.join(args.out, "stats.json"), "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"wrote structure.csv, dc_curve.csv, stats.json to {args.out}")
    return 0


def cmd_khm(args) -> int:
    cfg = parse_config(args.config)
    ensembles, meta = load_run(args.run)
    ana = cfg.data["analysis"]
    s0 = ana["tensor_s0"]
    dirs = direction_set(ensembles[0].grid.dim, ana["directions"])
    nu = meta["nu"]
    threads = _threads(args)
    shell = RadialBump(width=s0 / 3.0, center=s0 / 2.0)
    budgets = {
        "trace": khm_budget(ensembles, TestTensor(omega1=RadialBump(s0)),
                            nu=nu, form="trace", dirs=dirs,
                            n_radial=ana["radial_nodes"], threads=threads),
        "longitudinal": khm_budget(ensembles, TestTensor(omega2=shell),
                                   nu=nu, form="longitudinal", dirs=dirs,
                                   n_radial=ana["radial_nodes"],
                                   threads=threads),
        "full": khm_budget(ensembles,
                           TestTensor(omega1=RadialBump(s0), omega2=shell),
                           nu=nu, form="full", dirs=dirs,
                           n_radial=ana["radial_nodes"], threads=threads),
    }
    doc = {name: b.to_json() for name, b in budgets.items()}
    doc["provenance"] = cfg.provenance()
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "khm.json")
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    for name, b in budgets.items():
        print(f"{name}: residual/scale = {b.relative:.3e}")
    print(f"wrote {path}")
    return 0


def cmd_vv(args) -> int:
    cfg = parse_config(args.config)
    sweep = cfg.data["sweep"]
    if sweep["nus"] is None:
        raise ConfigError(["sweep.nus is required for the vv command"])
    ana = cfg.data["analysis"]
    plan = SweepPlan(
        nus=tuple(sweep["nus"]),
        spec=cfg.measure_spec(),
        grid=cfg.grid(),
        members=cfg.data["ensemble"]["members"],
        t_end=cfg.data["solver"]["t_end"],
        sample_times=tuple(cfg.sample_times()),
        r_grid=tuple(cfg.r_grid()),
        dt=cfg.data["solver"]["dt"],
        cfl=cfg.data["solver"]["cfl"],
        n_dirs=min(ana["directions"], 32),
        n_radial=ana["radial_nodes"],
        tensor_s0=ana["tensor_s0"],
        window_power=ana["window_power"],
        fk_modes=tuple((tuple(k), c) for k, c in sweep["fk_modes"]),
        run_id=sweep["run_id"],
    )
    if args.plan_only:
        doc = {
            "nus": list(plan.nus), "members": plan.members,
            "grid": {"dim": plan.grid.dim, "n": plan.grid.n},
            "t_end": plan.t_end, "sample_times": list(plan.sample_times),
            "r_grid": list(plan.r_grid), "run_id": plan.run_id,
        }
        json.dump(doc, sys.stdout, indent=1, sort_keys=True)
        sys.stdout.write("\n")
        return 0
    report = run_sweep(plan, out_dir=args.out, threads=_threads(args))
    scaling = inviscid_residual_scaling(report, 1)
    print(f"sweep complete: {len(report.summaries)} rungs, "
          f"{len(report.failures)} failures")
    if scaling["slope"] is not None:
        print(f"inviscid residual slope vs nu: {scaling['slope']:.3f}")
    print(f"report under {os.path.join(args.out, plan.run_id)}")
    return 0


def cmd_schema(args) -> int:
    json.dump(CONFIG_SCHEMA, sys.stdout, indent=1, sort_keys=True)
    sys.stdout.write("\n")
    return 0


# ---------------------------------------------------------------------------
# Built-in verification suites
# ---------------------------------------------------------------------------

def _suite_leray(threads: int) -> list:
    checks = []
    worst = {"idempotence": 0.0, "self_adjoint": 0.0, "grad_annihilation": 0.0}
    start = time.time()
    for dim in (2, 3):
        grid = Grid(dim, 32)
        coords = grid.cached("coords")
        for trial in range(50):
            f = random_field(grid, seed=1000 * dim + trial)
            g = random_field(grid, seed=7000 * dim + trial)
            pf, pg = leray_project(f), leray_project(g)
            scale = np.abs(pf.components).max()
            ppf = leray_project(pf)
            worst["idempotence"] = max(
                worst["idempotence"],
                np.abs(ppf.components - pf.components).max() / scale)
            ipf = inner_product(pf, g)
            ifg = inner_product(f, pg)
            worst["self_adjoint"] = max(
                worst["self_adjoint"],
                abs(ipf - ifg) / max(abs(ipf), abs(ifg), 1e-30))
            psi = np.cos(coords[0]) + np.sin(2 * coords[1]) * np.cos(coords[dim - 1])
            psi_hat = np.fft.fftn(psi) / grid.n ** grid.dim
            kd = grid.cached("k_deriv")
            grad = np.stack([
                np.fft.ifftn(1j * kd[j] * psi_hat * grid.n ** grid.dim).real
                for j in range(dim)])
            gradf = VelocityField(grid, grad)
            val = abs(inner_product(pf, gradf))
            ref = np.sqrt(energy(pf).value * energy(gradf).value)
            worst["grad_annihilation"] = max(worst["grad_annihilation"],
                                             val / ref)
    elapsed = time.time() - start
    for name, val in worst.items():
        checks.append((f"leray {name} (100 fields)", val <= 1e-10,
                       f"worst {val:.2e} <= 1e-10"))
    checks.append(("leray runtime", elapsed < 10.0, f"{elapsed:.1f}s < 10s"))
    return checks


def _suite_energy(threads: int) -> list:
    checks = []
    grid = Grid(2, 64)
    tg = taylor_green(grid)
    cfg = SolverConfig(nu=0.01, t_end=0.25, dt=1e-3, snapshot_interval=0.25)
    traj = run(tg, cfg)
    exact = VelocityField(grid, np.exp(-2 * 0.01 * 0.25) * tg.components)
    err = l2_distance(traj.snapshots[-1], exact)
    checks.append(("taylor-green L2 error", err <= 1e-6, f"{err:.2e} <= 1e-6"))
    defect = energy_budget(traj)
    checks.append(("taylor-green energy budget", defect <= 1e-6,
                   f"{defect:.2e} <= 1e-6"))
    sh = shear_flow(grid)
    cfg2 = SolverConfig(nu=0.1, t_end=0.5, dt=1e-3, snapshot_interval=0.5)
    traj2 = run(sh, cfg2)
    defect2 = energy_budget(traj2)
    checks.append(("shear energy budget", defect2 <= 1e-8,
                   f"{defect2:.2e} <= 1e-8"))
    return checks


def _suite_anisotropy(threads: int) -> list:
    checks = []
    cases = [(2, 128, 3), (3, 32, 2)]
    for dim, n, n_fields in cases:
        grid = Grid(dim, n)
        dirs = direction_set(dim, 128)
        dirs2 = direction_set(dim, 256)
        for trial in range(n_fields):
            f = random_field(grid, seed=31 * dim + trial, band=(1, 8),
                             divergence_free=True)
            for r in (0.2, 0.5):
                res = weak_anisotropy_residual(f, r, dirs, 16)
                res_fine = weak_anisotropy_residual(f, r, dirs2, 32)
                ok = res <= 0.02 and res_fine <= res + 1e-12
                checks.append(
                    (f"weak anisotropy d={dim} field {trial} r={r}", ok,
                     f"residual {res:.2e} <= 2e-2, refined {res_fine:.2e}"))
    return checks


def _suite_taylor_green(threads: int) -> list:
    if not os.path.exists(GOLDEN_PATH):
        return [("taylor-green golden file", False,
                 f"missing {GOLDEN_PATH}; run `nse-stat check --bless`")]
    with open(GOLDEN_PATH) as fh:
        golden = json.load(fh)
    grid = Grid(2, golden["grid_n"])
    nu = golden["nu"]
    tg = taylor_green(grid)
    cfg = SolverConfig(nu=nu, t_end=golden["t_end"], dt=2e-3)
    traj = run(tg, cfg, snapshot_times=golden["times"])
    ensembles = [Ensemble([s]) for s in traj.snapshots]
    dirs = direction_set(2, 64)
    table = structure_functions(ensembles, np.array(golden["r_values"]),
                                dirs, with_correlations=False,
                                threads=threads)
    checks = []
    s2 = table.s_par[2]
    ref2 = np.array(golden["s2_par"])
    err2 = float(np.max(np.abs(s2 - ref2) / np.abs(ref2)))
    checks.append(("taylor-green S2_par vs golden", err2 <= 5e-3,
                   f"max rel err {err2:.2e} <= 5e-3"))
    ref3 = np.array(golden["s0_3"])
    scale3 = max(np.abs(ref3).max(), 2 * table.e0 * max(golden["r_values"]))
    err3 = float(np.max(np.abs(table.s0_3 - ref3)) / scale3)
    checks.append(("taylor-green S0_3 vs golden", err3 <= 5e-3,
                   f"scaled err {err3:.2e} <= 5e-3"))
    return checks


def _suite_khm_shear(threads: int) -> list:
    from .ensemble import evolve
    grid = Grid(2, 64)
    ens = Ensemble([shear_flow(grid)])
    cfg = SolverConfig(nu=0.05, t_end=0.5, dt=2e-3)
    enss = evolve(ens, cfg, list(np.linspace(0.0, 0.5, 21)))
    tensor = TestTensor(omega1=RadialBump(0.4))
    dirs = direction_set(2, 32)
    budget = khm_budget(enss, tensor, form="trace", dirs=dirs, n_radial=24,
                        threads=threads)
    alt_gap = (abs(budget.terms["viscous"] - budget.terms["viscous_alt"])
               / abs(budget.terms["viscous"]))
    return [
        ("khm shear trace residual", budget.relative <= 0.01,
         f"residual/scale {budget.relative:.2e} <= 1e-2"),
        ("khm viscous-term alternative", alt_gap <= 0.02,
         f"gap {alt_gap:.2e} <= 2e-2"),
    ]


def _suite_gradient_rep(threads: int) -> list:
    grid = Grid(2, 128)
    members = [random_field(grid, seed=s, band=(2, 8), divergence_free=True)
               for s in (5, 6)]
    ens = Ensemble(members)
    h_ladder = 2 * np.pi / grid.n * np.array([8.0, 4.0, 2.0, 1.0])
    g_vals = gradient_two_point(ens, h_ladder)
    h1 = mean_h1_seminorm_sq(ens)
    gaps = np.abs(g_vals - h1)
    decreasing = bool(np.all(np.diff(gaps) < 0))
    terminal = gaps[-1] / h1
    return [
        ("gradient representation monotone", decreasing,
         f"gaps {np.array2string(gaps, precision=3)} strictly decreasing"),
        ("gradient representation terminal", terminal <= 0.05,
         f"terminal gap {terminal:.2e} <= 5e-2"),
    ]


SUITES = {
    "leray": _suite_leray,
    "energy": _suite_energy,
    "anisotropy": _suite_anisotropy,
    "taylor-green": _suite_taylor_green,
    "khm-shear": _suite_khm_shear,
    "gradient-rep": _suite_gradient_rep,
}


def cmd_check(args) -> int:
    if args.bless:
        from .oracles import generate_golden_taylor_green
        os.makedirs(os.path.dirname(GOLDEN_PATH), exist_ok=True)
        doc = generate_golden_taylor_green()
        with open(GOLDEN_PATH, "w") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
            fh.write("\n")
        print(f"blessed golden file {GOLDEN_PATH}")
    names = [args.suite] if args.suite else list(SUITES)
    threads = _threads(args)
    all_ok = True
    for name in names:
        if name not in SUITES:
            print(f"unknown suite {name!r}; available: {', '.join(SUITES)}",
                  file=sys.stderr)
            return 2
        for label, ok, detail in SUITES[name](threads):
            all_ok &= ok
            print(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")
    return 0 if all_ok else 3


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nse-stat",
        description="Ensemble pseudo-spectral Navier-Stokes solver and "
                    "statistical-solution analysis toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads for member-parallel stages "
                             "(default: NSE_STAT_THREADS or 1)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="sample an initial ensemble")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--print-config", action="store_true",
                   help="echo the validated, defaults-filled config and exit")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("simulate", help="evolve an ensemble")
    p.add_argument("--config", required=True)
    p.add_argument("--ensemble", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("stats", help="structure functions, increment "
                                     "modulus and bound checks")
    p.add_argument("--config", required=True)
    p.add_argument("--run", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("khm", help="two-point budget, all three forms")
    p.add_argument("--config", required=True)
    p.add_argument("--run", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_khm)

    p = sub.add_parser("vv", help="viscosity-ladder diagnostics")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--plan-only", action="store_true",
                   help="print the ladder plan without computing")
    p.set_defaults(func=cmd_vv)

    p = sub.add_parser("check", help="built-in verification suites")
    p.add_argument("--suite", default=None,
                   help=f"one of: {', '.join(SUITES)} (default: all)")
    p.add_argument("--bless", action="store_true",
                   help="regenerate golden files with the brute-force "
                        "oracles before checking")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("schema", help="print the config JSON schema")
    p.set_defaults(func=cmd_schema)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        json.dump(exc.to_json(), sys.stderr, indent=1, sort_keys=True)
        sys.stderr.write("\n")
        return 2
    except (ConfigurationError,) as exc:
        json.dump({"error": "config", "violations": [str(exc)]}, sys.stderr,
                  indent=1, sort_keys=True)
        sys.stderr.write("\n")
        return 2
    except BlowUpError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1
    except (OSError, RuntimeError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
