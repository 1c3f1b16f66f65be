"""Command-line interface: ``flowdrop <subcommand> ...``.

Exit status: 0 on success, 1 on a domain error (the error class name goes to
stderr), 2 on a usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .allocation import allocate
from .ctmc import SimParams, drift_classify, simulate, simulate_scaled
from .errors import FlowdropError
from .fluid import integrate_bound, integrate_general, integrate_lln, integrate_quasi_stationary
from .quasistat import (
    EXACT,
    LIMIT,
    MONTE_CARLO,
    PhiBarTable,
    alpha_grid,
    envelope,
    phibar_exact_L2,
    phibar_limit,
    phibar_scaled_mc,
    phibar_table,
)
from .stability import classify_linear, tree_asymptotic_report
from .sweep import (
    SweepGrid,
    emit_csv,
    lln_tracking_gap,
    region_checks,
    run_sweep,
    saturated_scaled_mean,
)
from .topology import build_linear, linear_length, load_topology, validate_topology

METHODS = {"mc": MONTE_CARLO, "exact": EXACT, "limit": LIMIT}


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _grid(text: str) -> np.ndarray:
    try:
        start, stop, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected start:stop:step, got {text!r}") from None
    if step <= 0 or stop < start:
        raise argparse.ArgumentTypeError(f"empty grid {text!r}")
    return alpha_grid(step, start, stop)


def _dump(obj) -> None:
    json.dump(obj, sys.stdout, indent=2, default=_json_default)
    sys.stdout.write("\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Fraction):
        return str(o)
    raise TypeError(f"not serializable: {type(o).__name__}")


def _fmt_num(v) -> str:
    return str(v) if isinstance(v, Fraction) else repr(float(v))


# Subcommands


def cmd_alloc(args) -> int:
    top = load_topology(args.config)
    if (args.rates is None) == (args.counts is None):
        raise argparse.ArgumentTypeError("give exactly one of --rates and --counts")
    if args.rates is not None:
        try:
            x = [(Fraction if args.exact else float)(v) for v in args.rates.split(",") if v.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"--rates: expected comma-separated numbers, got {args.rates!r}") from None
    else:
        acc = [Fraction(c.access_rate) if args.exact else c.access_rate for c in top.classes]
        if len(args.counts) != len(acc):
            x = args.counts  # allocate reports the mismatch
        else:
            x = [a * n for a, n in zip(acc, args.counts)]
    table = allocate(top, x, exact=args.exact)
    out = sys.stdout
    out.write("class,hop,theta\n")
    for c, row in zip(top.classes, table.theta):
        for i, v in enumerate(row):
            out.write(f"{c.id},{i},{_fmt_num(v)}\n")
    out.write("psi," + ",".join(_fmt_num(v) for v in table.psi) + "\n")
    return 0


def cmd_simulate(args) -> int:
    top = load_topology(args.config)
    params = SimParams(horizon=args.horizon, seed=args.seed, stride=args.stride, beta=args.beta)
    run = simulate_scaled if args.beta != 1 else simulate
    traj = run(top, args.n0, params)
    traj.to_csv(args.out)
    summary = {"events": traj.events, "final_state": traj.states[-1].tolist(), "seed": args.seed}
    if args.stride == 1:
        res = drift_classify(traj, args.burn_in)
        summary["drift"] = {"verdict": res.verdict.value, "slope": res.slope, "slope_se": res.slope_se,
                            "returns": res.returns}
    _dump(summary)
    return 0


def _phibar(top, grid, method, beta, seed, horizon, workers) -> PhiBarTable:
    params = SimParams(horizon=horizon, seed=seed)
    return phibar_table(top, grid, METHODS[method], beta=beta, params=params, workers=workers)


def cmd_phibar(args) -> int:
    top = load_topology(args.config)
    table = _phibar(top, args.alpha_grid, args.method, args.beta, args.seed, args.horizon, args.workers)
    table.to_csv(args.out)
    return 0


def _load_or_build_phibar(args, top) -> PhiBarTable:
    if args.phibar:
        return PhiBarTable.from_csv(args.phibar)
    method = "exact" if linear_length(top) == 2 else "mc"
    return _phibar(top, alpha_grid(0.02), method, 1.0, args.seed, 2000.0, args.workers)


def cmd_fluid(args) -> int:
    top = load_topology(args.config)
    kw = {"record_every": args.record_every}
    if args.mode == "general":
        path = integrate_general(top, args.z0, args.T, args.step, **kw)
    elif args.mode == "lln":
        path = integrate_lln(top, args.z0, args.T, args.step, **kw)
    else:
        table = _load_or_build_phibar(args, top)
        if args.mode == "qs":
            path = integrate_quasi_stationary(top, args.z0, table, args.T, args.step, **kw)
        else:
            mode = "inf_upper" if args.mode == "boundF" else "sup_lower"
            env = envelope(table.alphas, table.values, mode)
            path = integrate_bound(top, args.z0, env, args.mode[-1], args.T, args.step, **kw)
    path.to_csv(args.out)
    _dump({"final_state": path.final_state.tolist(), "hit_zero_time": list(path.hit_zero_time), **path.info})
    return 0


def cmd_classify(args) -> int:
    top = load_topology(args.config)
    report = classify_linear(top, _load_or_build_phibar(args, top))
    _dump(report.to_dict())
    return 0


def cmd_tree(args) -> int:
    top = load_topology(args.config)
    _dump(tree_asymptotic_report(top).to_dict(top))
    return 0


def cmd_sweep(args) -> int:
    grid = SweepGrid.from_json(args.config)
    if args.seed is not None:
        grid = SweepGrid.from_dict({**grid.to_dict(), "seed": args.seed})
    emit_csv(run_sweep(grid, workers=args.workers), args.out)
    return 0


# Reproduction recipes

TWO_LEAF_TREE = {
    "links": [{"id": 1, "capacity": 1.0}, {"id": 2, "capacity": 1.0}, {"id": 3, "capacity": 1.0}],
    "classes": [
        {"id": "A", "route": [2, 1], "access_rate": 1.0, "lambda": 0.2, "mu": 1.0},
        {"id": "B", "route": [3, 1], "access_rate": 1.0, "lambda": 0.4, "mu": 1.0},
    ],
}


def _region(out: Path, rho_rest, seed, quick, workers) -> dict:
    grid = SweepGrid(
        rho_rest=tuple(rho_rest),
        seed=seed,
        rho0_step=0.15 if quick else 0.05,
        rho1_step=0.15 if quick else 0.05,
        replicas=4 if quick else 20,
        horizon=2000.0 if quick else 1e4,
    )
    result = run_sweep(grid, workers=workers)
    emit_csv(result, out / "region.csv")
    checks = region_checks(result, 1.0, min(grid.access_mults))
    return {"grid": grid.to_dict(), "files": ["region.csv"], "checks": checks}


def _beta_convergence(out: Path, seed, quick, workers) -> dict:
    rho2, a2 = 0.5, 1.0
    top = build_linear(2, 1.0, access_rates=a2, arrival_rates=[0.3, 0.3, rho2], service_rates=1.0)
    horizon = 2000.0 if quick else 2e4
    betas = [1, 4, 16, 64]
    rows = []
    for i, alpha in enumerate([0.2, 0.5, 0.8]):
        for j, beta in enumerate(betas):
            est = phibar_scaled_mc(top, alpha, beta, SimParams(horizon=horizon, seed=seed + 1000 * i + j))
            exact = phibar_exact_L2(rho2, a2 / beta, alpha, n_max=200_000)
            rows.append((alpha, beta, est.value, est.standard_error, exact.value, phibar_limit(alpha, [rho2])))
    with open(out / "phibar_beta.csv", "w") as fh:
        fh.write("alpha,beta,mc_value,mc_se,exact_value,limit_value\n")
        for r in rows:
            fh.write(",".join(repr(float(v)) for v in r) + "\n")
    lln = build_linear(2, 1.0, access_rates=1.0, arrival_rates=[0.2, 0.3, 0.3], service_rates=1.0)
    replicas = 5 if quick else 20
    with open(out / "lln_gap.csv", "w") as fh:
        fh.write("beta,median_path_gap,median_replica_gap\n")
        for beta in [10, 100, 1000]:
            g = lln_tracking_gap(lln, beta, replicas, seed=seed)
            fh.write(f"{beta},{g['median_path_gap']!r},{g['median_gap']!r}\n")
    return {"files": ["phibar_beta.csv", "lln_gap.csv"], "rho2": rho2, "a2": a2, "horizon": horizon,
            "betas": betas, "lln_rho": [0.2, 0.3, 0.3], "lln_replicas": replicas}


def _tree_demo(out: Path, seed, quick, workers) -> dict:
    top = validate_topology(TWO_LEAF_TREE)
    (out / "tree.json").write_text(json.dumps(TWO_LEAF_TREE, indent=2) + "\n")
    analysis = tree_asymptotic_report(top)
    (out / "tree_report.json").write_text(json.dumps(analysis.to_dict(top), indent=2, default=_json_default) + "\n")
    k0 = analysis.k0.index
    alpha1 = analysis.steps[0].alpha[k0]
    horizon = 200.0 if quick else 1000.0
    with open(out / "saturated.csv", "w") as fh:
        fh.write("beta,scaled_mean,alpha1\n")
        for i, beta in enumerate([1, 4, 16, 64]):
            m = saturated_scaled_mean(top, [k0], beta, horizon=horizon, seed=seed + i, start=[alpha1])
            fh.write(f"{beta},{float(m[0])!r},{alpha1!r}\n")
    return {"files": ["tree.json", "tree_report.json", "saturated.csv"], "horizon": horizon}


RECIPES = {
    "fig4": lambda out, seed, quick, workers: _region(out, [0.5], seed, quick, workers),
    "fig5": lambda out, seed, quick, workers: _region(out, [0.5, 0.5, 0.5], seed, quick, workers),
    "beta-convergence": _beta_convergence,
    "tree-demo": _tree_demo,
}


def cmd_reproduce(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    info = RECIPES[args.recipe](out, args.seed, args.quick, args.workers)
    manifest = {"recipe": args.recipe, "seed": args.seed, "quick": args.quick, "version": __version__, **info}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=_json_default) + "\n")
    return 0


def _common(seed: int | None = 0) -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    help_seed = "master seed (default: the config's seed)" if seed is None else f"master seed (default {seed})"
    common.add_argument("--seed", type=int, default=seed, help=help_seed)
    common.add_argument("--workers", type=int, default=None, help="worker processes (default: all CPUs)")
    return common


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flowdrop", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("alloc", parents=[_common()], help="tail-drop allocation for given rates or counts")
    s.add_argument("--config", required=True)
    s.add_argument("--rates", help="comma-separated input rates, one per class")
    s.add_argument("--counts", type=_ints, help="comma-separated flow counts (rates are counts times access rates)")
    s.add_argument("--exact", action="store_true", help="rational arithmetic")
    s.set_defaults(func=cmd_alloc)

    s = sub.add_parser("simulate", parents=[_common()], help="simulate the flow-count process")
    s.add_argument("--config", required=True)
    s.add_argument("--n0", type=_ints, required=True)
    s.add_argument("--horizon", type=float, required=True)
    s.add_argument("--stride", type=int, default=1)
    s.add_argument("--beta", type=float, default=1.0)
    s.add_argument("--burn-in", type=float, default=0.2)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("phibar", parents=[_common()], help="tabulate the quasi-stationary class-0 throughput")
    s.add_argument("--config", required=True)
    s.add_argument("--alpha-grid", type=_grid, default=alpha_grid(0.02))
    s.add_argument("--method", choices=sorted(METHODS), default="exact")
    s.add_argument("--beta", type=float, default=1.0)
    s.add_argument("--horizon", type=float, default=2000.0, help="Monte Carlo horizon per grid point")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_phibar)

    s = sub.add_parser("fluid", parents=[_common()], help="integrate a fluid ODE system")
    s.add_argument("--config", required=True)
    s.add_argument("--mode", choices=["general", "qs", "boundF", "boundG", "lln"], required=True)
    s.add_argument("--z0", type=_floats, required=True)
    s.add_argument("--T", type=float, required=True)
    s.add_argument("--step", type=float, default=1e-3)
    s.add_argument("--record-every", type=int, default=1)
    s.add_argument("--phibar", help="phibar CSV (default: computed)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fluid)

    s = sub.add_parser("classify", parents=[_common()], help="stability verdict for a linear network")
    s.add_argument("--config", required=True)
    s.add_argument("--phibar", help="phibar CSV (default: computed)")
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("tree", parents=[_common()], help="asymptotic analysis of an upstream tree")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_tree)

    s = sub.add_parser("sweep", parents=[_common(seed=None)], help="replicated stability-region sweep")
    s.add_argument("--config", required=True, help="sweep JSON with SweepGrid field names")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("reproduce", parents=[_common()], help="run a bundled experiment")
    s.add_argument("recipe", choices=sorted(RECIPES))
    s.add_argument("--out", default="results")
    s.add_argument("--quick", action="store_true", help="reduced settings for smoke runs")
    s.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except argparse.ArgumentTypeError as exc:
        parser.error(str(exc))
    except (FlowdropError, OSError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
