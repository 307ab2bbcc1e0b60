"""Command-line interface: ``python -m annealbounds <command> ...``.

Commands are ``model``, ``simulate``, ``bounds``, ``optimize`` and ``sweep``.
Exit status is 0 on success, 2 for unusable input (bad flags, unreadable or
malformed documents), 1 for any other package error and 3 when a simulated
trajectory breaks the certified bound hierarchy.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import tempfile
from pathlib import Path

from . import __version__
from .bounds import bound_report, check_hierarchy, report_to_dict
from .dynamics import StepPolicy, simulate, states_to_text, trajectory_from_csv, trajectory_to_csv
from .errors import AnnealError, ConfigParseError, HierarchyViolation
from .optimize import Family, minimal_time_search, optimize_fixed_tf, sweep
from .problems import (
    build_hamming_spike,
    build_pspin,
    build_random_klocal,
    build_search,
    problem_from_dict,
    problem_to_dict,
)
from .schedules import Schedule, parse_pi_rational

EXIT_OK, EXIT_ERROR, EXIT_PARSE, EXIT_HIERARCHY = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigParseError(message)


def write_atomic(path, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_default(obj):
    if hasattr(obj, "tolist"):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _dumps(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n"


def load_document(ref: str) -> dict:
    """Parse ``ref`` as inline JSON if it looks like an object, else as a file path."""
    try:
        if ref.lstrip().startswith("{"):
            return json.loads(ref)
        return json.loads(Path(ref).read_text())
    except FileNotFoundError as exc:
        raise ConfigParseError(f"no such file: {ref}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigParseError(f"{ref}: invalid JSON ({exc})") from exc


def config_hash(args: argparse.Namespace) -> str:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()


def _provenance(args) -> dict:
    return {"version": __version__, "config_hash": config_hash(args), "command": args.command}


def _float_list(text: str) -> list:
    return [parse_pi_rational(v) for v in text.split(",") if v.strip()]


def _int_list(text: str) -> list:
    return [int(v) for v in text.split(",") if v.strip()]


def _load_problem(ref):
    try:
        return problem_from_dict(load_document(ref))
    except (KeyError, TypeError) as exc:
        raise ConfigParseError(f"malformed problem document: {exc}") from exc


def _schedule_from_args(args) -> Schedule:
    loose = getattr(args, "allow_g_outside_unit", False)
    if args.schedule:
        doc = load_document(args.schedule)
        if loose:
            doc["allow_g_outside_unit"] = True
        try:
            return Schedule.from_dict(doc)
        except (KeyError, TypeError) as exc:
            raise ConfigParseError(f"malformed schedule document: {exc}") from exc
    if args.pulses:
        pulses = []
        for item in args.pulses.split(","):
            g, _, dur = item.partition(":")
            if not dur:
                raise ConfigParseError(f"pulse {item!r} is not of the form g:duration")
            pulses.append((g, dur))
        return Schedule.pulses(pulses, loose)
    if args.roland_cerf is not None:
        return Schedule.roland_cerf(int(args.d), args.roland_cerf)
    if args.linear is not None:
        return Schedule.linear(args.linear)
    raise ConfigParseError("give one of --schedule, --pulses, --linear or --roland-cerf")


def _policy(args) -> StepPolicy:
    return StepPolicy(dt=args.dt, max_phase=args.max_phase)


# -- commands ----------------------------------------------------------------------

def cmd_model(args) -> int:
    rep = args.representation
    if args.kind == "search":
        prob = build_search(args.d, rep or "search_2d")
    elif args.kind == "pspin":
        prob = build_pspin(args.n, args.p, rep or "symmetric_subspace")
    elif args.kind == "spike":
        prob = build_hamming_spike(args.n, args.alpha, args.beta, height=args.height,
                                   representation=rep or "symmetric_subspace")
    else:
        prob = build_random_klocal(args.n, args.k, args.terms, args.seed)
    doc = problem_to_dict(prob, include_matrices=args.include_matrices)
    doc["provenance"] = _provenance(args)
    write_atomic(args.out, _dumps(doc))
    return EXIT_OK


def _self_check(report) -> None:
    bad = check_hierarchy(report, certified=True)
    if bad:
        raise HierarchyViolation("; ".join(bad))
    loose = check_hierarchy(report)
    if loose:
        print("note: uncorrected tau1/tau2 exceed tf (" + "; ".join(loose) + ")", file=sys.stderr)


def cmd_simulate(args) -> int:
    prob = _load_problem(args.problem)
    sched = _schedule_from_args(args)
    traj = simulate(prob, sched, _policy(args), retain_states=args.retain_states,
                    want_exact_c1=args.exact_c1)
    report = bound_report(prob, traj, want_exact_c1=args.exact_c1)
    write_atomic(args.out, trajectory_to_csv(traj))
    if args.states_out:
        write_atomic(args.states_out, states_to_text(traj))
    if args.report:
        doc = report_to_dict(report)
        doc["provenance"] = _provenance(args)
        write_atomic(args.report, _dumps(doc))
    _self_check(report)
    print(f"final_fidelity={traj.final_fidelity!r} tf={traj.tf!r} tau3={report.tau3!r}")
    return EXIT_OK


def cmd_bounds(args) -> int:
    prob = _load_problem(args.problem)
    try:
        text = Path(args.traj).read_text()
        traj = trajectory_from_csv(text, counterdiabatic=args.counterdiabatic)
    except FileNotFoundError as exc:
        raise ConfigParseError(f"no such file: {args.traj}") from exc
    except (KeyError, ValueError, StopIteration) as exc:
        raise ConfigParseError(f"malformed trajectory CSV: {exc}") from exc
    sched = _schedule_from_args(args) if (args.schedule or args.pulses or args.linear is not None
                                          or args.roland_cerf is not None) else None
    report = bound_report(prob, traj, want_exact_c1=args.exact_c1, schedule=sched)
    doc = report_to_dict(report)
    doc["provenance"] = _provenance(args)
    write_atomic(args.out, _dumps(doc))
    _self_check(report)
    return EXIT_OK


def _family(args) -> Family:
    kind, _, size = args.family.partition(":")
    kind = {"pulses": "pulses", "piecewise": "piecewise_linear",
            "piecewise_linear": "piecewise_linear"}.get(kind)
    if kind is None or not size.isdigit():
        raise ConfigParseError("--family must be pulses:N or piecewise:N")
    fixed = _float_list(args.fixed_g) if args.fixed_g else None
    return Family(kind, int(size), None if fixed is None else tuple(fixed))


def cmd_optimize(args) -> int:
    prob = _load_problem(args.problem)
    fam = _family(args)
    if args.target is not None:
        bracket = _float_list(args.bracket) if args.bracket else None
        res = minimal_time_search(prob, fam, args.target, bracket, seed=args.seed,
                                  step_policy=_policy(args))
    elif args.tf is not None:
        res = optimize_fixed_tf(prob, fam, args.tf, budget=args.budget, seed=args.seed,
                                step_policy=_policy(args))
    else:
        raise ConfigParseError("optimize needs --tf or --target")
    doc = res.to_dict()
    doc["family"] = fam.to_dict()
    doc["provenance"] = _provenance(args)
    write_atomic(args.out, _dumps(doc))
    return EXIT_OK


def _grid(args) -> list:
    if args.model == "search":
        if not args.d:
            raise ConfigParseError("search sweep needs --d")
        return [{"d": d} for d in _int_list(args.d)]
    ns = _int_list(args.n or "")
    if not ns:
        raise ConfigParseError(f"{args.model} sweep needs --n")
    if args.model == "pspin":
        return [{"N": n, "p": p} for p in _int_list(args.p or "3") for n in ns]
    if args.model == "hamming_spike":
        return [{"N": n, "alpha": args.alpha, "beta": args.beta} for n in ns]
    return [{"N": n, "k": args.k, "terms": args.terms or n, "seed": args.seed} for n in ns]


def cmd_sweep(args) -> int:
    grid = _grid(args)
    if args.schedule == "roland-cerf":
        if args.model != "search":
            raise ConfigParseError("roland-cerf schedules apply to the search model only")
        spec = {"form": "roland_cerf", "epsilon": args.epsilon}
    else:
        if args.tf is None:
            raise ConfigParseError("linear sweep needs --tf")
        spec = {"form": "linear", "tf": args.tf}
    outputs = None if args.outputs is None else [c for c in args.outputs.split(",") if c]
    res = sweep(args.model, grid, spec, outputs, _policy(args), max_workers=args.workers)
    write_atomic(args.out, res.to_csv())
    if args.manifest:
        man = dict(res.manifest)
        man["provenance"] = _provenance(args)
        write_atomic(args.manifest, _dumps(man))
    failed = [r for r in res.rows if r["status"] != "ok"]
    for r in failed:
        print(f"row {r['index']}: {r['status']}", file=sys.stderr)
    return EXIT_OK


# -- parser ------------------------------------------------------------------------

def _add_policy(p):
    p.add_argument("--dt", type=parse_pi_rational, default=None, help="fixed step size")
    p.add_argument("--max-phase", type=float, default=0.05,
                   help="largest phase per step when --dt is not given")


def _add_schedule(p, required=False):
    p.add_argument("--schedule", help="schedule document (inline JSON or path)")
    p.add_argument("--linear", type=parse_pi_rational, metavar="TF", help="linear ramp of duration TF")
    p.add_argument("--pulses", help='comma list of g:duration, e.g. "1:pi/4,0:pi/2"')
    p.add_argument("--roland-cerf", type=float, metavar="EPS", help="local adiabatic search schedule")
    p.add_argument("--d", type=int, help="search dimension for --roland-cerf")
    p.add_argument("--allow-g-outside-unit", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="annealbounds", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"annealbounds {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("model", help="build a model and write its problem document")
    p.add_argument("kind", choices=["search", "pspin", "spike", "klocal"])
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--p", type=int, default=3)
    p.add_argument("--alpha", type=float, default=0.4)
    p.add_argument("--beta", type=float, default=0.3)
    p.add_argument("--height", type=float, default=None)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--terms", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--representation", default=None)
    p.add_argument("--include-matrices", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_model)

    p = sub.add_parser("simulate", help="simulate a schedule and write the trajectory CSV")
    p.add_argument("--problem", required=True)
    _add_schedule(p)
    _add_policy(p)
    p.add_argument("--retain-states", action="store_true")
    p.add_argument("--exact-c1", action="store_true")
    p.add_argument("--states-out")
    p.add_argument("--report", help="also write the bound report here")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bounds", help="evaluate bounds on a trajectory CSV")
    p.add_argument("--problem", required=True)
    p.add_argument("--traj", required=True)
    _add_schedule(p)
    p.add_argument("--exact-c1", action="store_true")
    p.add_argument("--counterdiabatic", action="store_true",
                   help="the trajectory was driven with a counterdiabatic term")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("optimize", help="optimize a schedule family")
    p.add_argument("--problem", required=True)
    p.add_argument("--family", default="pulses:2", help="pulses:N or piecewise:N")
    p.add_argument("--fixed-g", help="comma list pinning the pulse g-values")
    p.add_argument("--tf", type=parse_pi_rational)
    p.add_argument("--target", type=float, help="fidelity target for a minimal-time search")
    p.add_argument("--bracket", help="lo,hi for the minimal-time search")
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    _add_policy(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("sweep", help="bound summary over a parameter grid")
    p.add_argument("--model", required=True, choices=["search", "pspin", "hamming_spike", "random_klocal"])
    p.add_argument("--d", help="comma list of search dimensions")
    p.add_argument("--n", help="comma list of qubit counts")
    p.add_argument("--p", help="comma list of p values")
    p.add_argument("--alpha", type=float, default=0.4)
    p.add_argument("--beta", type=float, default=0.3)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--terms", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--schedule", choices=["roland-cerf", "linear"], default="linear")
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--tf", type=parse_pi_rational)
    p.add_argument("--outputs", default=None, help="comma list of result columns")
    p.add_argument("--workers", type=int, default=None)
    _add_policy(p)
    p.add_argument("--manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except HierarchyViolation as exc:
        print(f"HierarchyViolation: {exc}", file=sys.stderr)
        return EXIT_HIERARCHY
    except ConfigParseError as exc:
        print(f"ConfigParseError: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except AnnealError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (ValueError, OSError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
