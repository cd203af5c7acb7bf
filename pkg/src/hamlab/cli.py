"""Command line interface for hamlab.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical
failure, 4 empty result (nothing found, or a budget that admits no
schedule).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, load_toml
from .errors import BudgetError, ContractError, EmptySurfaceError, HamlabError

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_EMPTY = 0, 2, 3, 4


class _EmptyResult(Exception):
    pass


def _json(obj):
    return json.dumps(obj, indent=2, default=lambda o: o.tolist() if hasattr(o, "tolist") else str(o))


def _system(args):
    from .phase_space import get_builtin, load_definition

    if getattr(args, "definition", None):
        return load_definition(args.definition)
    return get_builtin(args.system or "henon_heiles")


def _out_dir(args):
    if not args.output_dir:
        return None
    path = Path(args.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _start_point(args, system):
    if args.x0 is not None:
        return np.array(args.x0, dtype=float)
    raise ConfigError("give the initial point with --x0 q1 q2 p1 p2")


def _integrator(args):
    from .flow import IntegratorConfig

    return IntegratorConfig(scheme=args.scheme or "implicit-midpoint", step=args.step or 1e-3)


# ---------------------------------------------------------------------------
# subcommands


def cmd_integrate(args):
    from .flow import integrate, integrate_tangent, symplecticity_defect
    from .io import write_trajectory

    system = _system(args)
    x0 = _start_point(args, system)
    cfg = _integrator(args)
    if args.tangent:
        tt = integrate_tangent(system, x0, args.horizon, cfg)
        traj, jac = tt.base, tt.jacobians
    else:
        traj, jac = integrate(system, x0, args.horizon, cfg), None
    summary = {"system": system.name, "scheme": cfg.scheme, "step": traj.step, "horizon": args.horizon,
               "energy_drift": traj.energy_drift}
    if jac is not None:
        summary["symplecticity_defect"] = max(symplecticity_defect(d) for d in jac)
    out = _out_dir(args)
    if out:
        write_trajectory(out / "trajectory.csv", traj, jac)
    print(_json(summary))


def cmd_orbit(args):
    from .flow import IntegratorConfig, integrate
    from .orbits import RecurrenceCandidate, find_recurrences, refine_periodic

    system = _system(args)
    x0 = _start_point(args, system)
    if args.period is not None:
        cand = RecurrenceCandidate(x0, args.period, 0.0)
    else:
        traj = integrate(system, x0, args.horizon, IntegratorConfig(step=args.step or 1e-2))
        found = find_recurrences(traj, args.radius, args.min_period, 1, args.max_period)
        if not found:
            raise _EmptyResult(f"no recurrence within radius {args.radius:g} up to t = {args.horizon:g}")
        cand = found[0]
    orbit = refine_periodic(system, cand, IntegratorConfig(step=args.refine_step))
    rec = orbit.record()
    out = _out_dir(args)
    if out:
        (out / "orbit.json").write_text(_json(rec) + "\n")
    print(_json(rec))


def cmd_classify(args):
    from .orbits import classify, classify_trace

    if args.trace is not None:
        print(classify_trace(args.trace).value)
    elif args.matrix is not None:
        print(classify(np.array(args.matrix, dtype=float).reshape(2, 2)).value)
    else:
        raise ConfigError("classify needs --trace or --matrix")


def cmd_split(args):
    from .io import read_cocycle
    from .splitting import minimal_m

    coc = read_cocycle(args.cocycle)
    m_max = args.m_max or 64
    rep = minimal_m(coc, m_max, args.directions, periodic=args.periodic)
    rec = rep.record()
    print(f"dominated: {str(rep.dominated).lower()}")
    print(f"minimal_m: {rep.minimal_m if rep.minimal_m is not None else 'none'}")
    out = _out_dir(args)
    if out:
        (out / "splitting.json").write_text(_json(rec) + "\n")
    if args.verbose:
        print(_json(rec))


def cmd_lyap(args):
    from .lyapunov import bottom_exponent, oseledets_sandwich, top_exponent, zero_exponent_fraction

    out = _out_dir(args)
    if args.energy is not None:
        from .flow import IntegratorConfig

        system = _system(args)
        res = zero_exponent_fraction(system, args.energy, args.samples, args.threshold, args.horizon,
                                     args.seed, cfg=IntegratorConfig(step=args.step or 1e-2))
        rec = res.record()
        rec["exponents"] = [float(v) for v in res.exponents]
        print(_json(rec))
        if out:
            (out / "zero_exponent.json").write_text(_json(rec) + "\n")
        return
    if args.cocycle:
        from .io import read_cocycle

        coc = read_cocycle(args.cocycle)
    else:
        from .flow import IntegratorConfig, integrate_tangent
        from .transversal import transversal_cocycle

        system = _system(args)
        x0 = _start_point(args, system)
        tt = integrate_tangent(system, x0, args.horizon, IntegratorConfig(step=args.step or 1e-2))
        coc = transversal_cocycle(system, tt)
    top = top_exponent(coc, args.renorm_every)
    bottom = bottom_exponent(coc, args.renorm_every)
    rec = {"top": top.exponent, "bottom": bottom.exponent, "sum": top.exponent + bottom.exponent,
           "converged": top.converged}
    if args.delta is not None:
        tx = oseledets_sandwich(coc, args.delta)
        rec["sandwich_delta"] = args.delta
        rec["t_x"] = tx
    if out:
        from .io import write_series

        write_series(out / "exponent_series.csv", top.series[:, 0], top.series[:, 1], "exponent-series")
    print(_json(rec))


def _read_lab_cocycle(args):
    from .cocycle_lab import AbstractCocycle, conjugated_blocks
    from .io import read_cocycle

    if args.cocycle:
        return AbstractCocycle.coerce(read_cocycle(args.cocycle))
    if args.seed is not None:
        return conjugated_blocks(args.seed, args.length)
    raise ConfigError("give --cocycle FILE or --seed N for a generated test cocycle")


def cmd_lab(args):
    from . import cocycle_lab as lab

    out = _out_dir(args)
    sched = None
    if args.lab_op == "ellipticize":
        a = lab.ellipticize_by_rotation(np.array(args.matrix, float).reshape(2, 2), args.alpha_max)
        print(_json({"alpha": a}))
        if a is None:
            raise _EmptyResult("no rotation up to alpha_max makes the matrix elliptic")
    elif args.lab_op == "swap":
        coc = _read_lab_cocycle(args)
        sched = lab.swap_directions(coc, tuple(args.window), args.u, args.s, args.budget)
        print(_json({"steps": len(sched), "max_distance": sched.max_distance(),
                     "angle": next(iter(sched.rotations.values()))}))
    elif args.lab_op == "tame":
        coc = _read_lab_cocycle(args)
        res = lab.tame_to_elliptic(coc, args.theta_floor, args.budget, m=args.m)
        sched = res.schedule
        print(_json(res.record()))
    elif args.lab_op == "franks":
        m = lab.franks_step(np.array(args.step_matrix, float).reshape(2, 2),
                            np.array(args.target, float).reshape(2, 2), args.delta)
        print(_json({"realized": m}))
    if out and sched is not None:
        (out / "schedule.csv").write_text(sched.to_text())


def cmd_scan(args):
    from .scan import load_scan_config, scan, write_report

    if not args.config:
        raise ConfigError("scan needs --config FILE")
    cfg = load_scan_config(args.config)
    if args.workers:
        cfg.workers = args.workers
    if args.no_plots:
        cfg.plots = False
    base = Path(args.config).resolve().parent
    report = scan(cfg, cfg.resolve_system(base))
    out = Path(args.output_dir or cfg.output_dir)
    paths = write_report(report, out, cfg.plots)
    print(report.to_text())
    print("written: " + ", ".join(str(p) for p in paths.values()))
    if report.census["refined"] == 0:
        raise _EmptyResult("no closed orbit was refined")


# ---------------------------------------------------------------------------
# parser


def _common(p, system=True):
    p.add_argument("--config", help="TOML file whose keys provide defaults for the flags")
    p.add_argument("--output-dir", help="directory for CSV/JSON artifacts")
    if system:
        p.add_argument("--system", help="built-in system name (default henon_heiles)")
        p.add_argument("--definition", help="Hamiltonian definition file (TOML)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hamlab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"hamlab {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("integrate", help="integrate a trajectory (optionally with its tangent flow)")
    _common(p)
    p.add_argument("--x0", type=float, nargs=4, metavar=("Q1", "Q2", "P1", "P2"))
    p.add_argument("--horizon", type=float, default=100.0)
    p.add_argument("--step", type=float)
    p.add_argument("--scheme", choices=["implicit-midpoint", "leapfrog", "rk4-monitored"])
    p.add_argument("--tangent", action="store_true")
    p.set_defaults(func=cmd_integrate)

    p = sub.add_parser("orbit", help="refine a closed orbit from a point and period (or a recurrence search)")
    _common(p)
    p.add_argument("--x0", type=float, nargs=4, metavar=("Q1", "Q2", "P1", "P2"))
    p.add_argument("--period", type=float)
    p.add_argument("--horizon", type=float, default=200.0)
    p.add_argument("--step", type=float)
    p.add_argument("--radius", type=float, default=0.05)
    p.add_argument("--min-period", type=float, default=1.0)
    p.add_argument("--max-period", type=float, default=30.0)
    p.add_argument("--refine-step", type=float, default=1e-4)
    p.set_defaults(func=cmd_orbit)

    p = sub.add_parser("classify", help="classify a unit-determinant 2x2 matrix or a trace")
    _common(p, system=False)
    p.add_argument("--trace", type=float)
    p.add_argument("--matrix", type=float, nargs=4, metavar=("A", "B", "C", "D"))
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("split", help="m-domination test on a cocycle CSV")
    _common(p, system=False)
    p.add_argument("--cocycle", required=False)
    p.add_argument("--m-max", type=int)
    p.add_argument("--directions", choices=["svd", "eigenvectors"], default="svd")
    p.add_argument("--periodic", action="store_true")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("lyap", help="Lyapunov exponents, Oseledets sandwich, zero-exponent fraction")
    _common(p)
    p.add_argument("--cocycle")
    p.add_argument("--x0", type=float, nargs=4, metavar=("Q1", "Q2", "P1", "P2"))
    p.add_argument("--horizon", type=float, default=1000.0)
    p.add_argument("--step", type=float)
    p.add_argument("--renorm-every", type=int, default=10)
    p.add_argument("--delta", type=float)
    p.add_argument("--energy", type=float, help="estimate the zero-exponent fraction on this surface")
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--threshold", type=float, default=1e-2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_lyap)

    p = sub.add_parser("cocycle-lab", help="perturbation experiments on 2x2 cocycles")
    lab = p.add_subparsers(dest="lab_op", required=True)
    q = lab.add_parser("ellipticize")
    _common(q, system=False)
    q.add_argument("--matrix", type=float, nargs=4, required=True, metavar=("A", "B", "C", "D"))
    q.add_argument("--alpha-max", type=float, default=math.pi / 2)
    q = lab.add_parser("swap")
    _common(q, system=False)
    q.add_argument("--cocycle")
    q.add_argument("--seed", type=int)
    q.add_argument("--length", type=int, default=200)
    q.add_argument("--window", type=int, nargs=2, required=True, metavar=("START", "STOP"))
    q.add_argument("--u", type=float, nargs=2, required=True)
    q.add_argument("--s", type=float, nargs=2, required=True)
    q.add_argument("--budget", type=float, required=True)
    q = lab.add_parser("tame")
    _common(q, system=False)
    q.add_argument("--cocycle")
    q.add_argument("--seed", type=int)
    q.add_argument("--length", type=int, default=200)
    q.add_argument("--theta-floor", type=float, default=0.1)
    q.add_argument("--budget", type=float, default=0.05)
    q.add_argument("--m", type=int, default=8)
    q = lab.add_parser("franks")
    _common(q, system=False)
    q.add_argument("--step-matrix", type=float, nargs=4, required=True)
    q.add_argument("--target", type=float, nargs=4, required=True)
    q.add_argument("--delta", type=float, required=True)
    p.set_defaults(func=cmd_lab)

    p = sub.add_parser("scan", help="energy-surface dichotomy scan")
    _common(p, system=False)
    p.add_argument("--workers", type=int)
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_scan)
    return parser


def _apply_config(args, parser):
    """Fill flags left at their defaults from the ``--config`` TOML table."""
    if args.command == "scan" or not getattr(args, "config", None):
        return
    data = load_toml(args.config)
    known = vars(args)
    for key, value in data.items():
        dest = key.replace("-", "_")
        if dest not in known or dest in ("func", "command", "config", "lab_op"):
            raise ConfigError(f"{args.config}: unknown key '{key}' for '{args.command}'")
        if known[dest] == parser_default(parser, args, dest):
            setattr(args, dest, value)


def parser_default(parser, args, dest):
    sub = parser._subparsers._group_actions[0].choices[args.command]  # noqa: SLF001
    if args.command == "cocycle-lab":
        sub = sub._subparsers._group_actions[0].choices[args.lab_op]  # noqa: SLF001
    return sub.get_default(dest)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        _apply_config(args, parser)
        args.func(args)
    except (ConfigError, ContractError) as exc:
        print(f"hamlab: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (EmptySurfaceError, BudgetError, _EmptyResult) as exc:
        extra = ""
        if isinstance(exc, BudgetError) and exc.min_length is not None:
            extra = f" (minimal feasible length {exc.min_length})"
        print(f"hamlab: empty result: {exc}{extra}", file=sys.stderr)
        return EXIT_EMPTY
    except (HamlabError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"hamlab: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
