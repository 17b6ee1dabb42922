"""Command-line interface.

Subcommands: ``calibrate`` (write a threshold table), ``apply`` (decisions
for a CSV of p-value families), ``simulate`` (FWER/TPR sweeps), ``region``
(rejection-region lattice export), ``exact`` (exact piecewise-constant
evaluation), ``solve-theta`` (regime solver).

Every output file embeds the tool version, the full argument list, and the
seed, so rerunning the recorded command reproduces the file byte for byte.
Files are written atomically (temp file + rename).  Exit codes: 0 success,
2 usage or configuration error, 3 I/O failure, 4 internal invariant
violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import tempfile

import numpy as np

from . import __version__
from .bottomup import (
    CalibrationInfeasibleError,
    ThresholdTable,
    apply_bu_batch,
    calibrate,
)
from .classical import ImprovedProcedure, simes_suite
from .distributions import AlternativeDensity, RegimeSpec, solve_theta
from .evaluation import (
    K1Setting,
    Procedure,
    PiecewiseSetup,
    SimulationConfig,
    build_procedure,
    compare_table,
    exact_power_piecewise,
    region_csv_rows,
    region_grid,
    run_simulation,
    tri_level_setup,
    simulation_csv_rows,
)
from .objectives import ObjectiveSpec

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_INTERNAL = 4

PLAIN_PROCEDURES = ("bonferroni", "holm", "hommel", "gou")


class UsageError(Exception):
    pass


def _header_line(args_record: str, seed) -> str:
    return f"# bufwer {__version__} | seed={seed} | args: {args_record}"


def _atomic_write(path: str, text: str):
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".bufwer-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _objective_from_args(args) -> ObjectiveSpec:
    kind = {"avg": "average", "1": "single"}.get(args.objective, args.objective)
    if getattr(args, "piecewise", None):
        try:
            breaks_s, vals_s = args.piecewise.split(":")
            density = AlternativeDensity.piecewise_constant(
                [float(x) for x in breaks_s.split(",")],
                [float(x) for x in vals_s.split(",")],
            )
        except ValueError as e:
            raise UsageError(f"bad --piecewise value: {e}")
        return ObjectiveSpec.exchangeable(kind, density)
    if getattr(args, "theta", None) is None:
        raise UsageError("an objective needs --theta or --piecewise")
    return ObjectiveSpec.exchangeable(kind, AlternativeDensity.normal_shift(args.theta))


def _load_config(path: str) -> dict:
    """Flat key=value file; keys are long flag names without the dashes."""
    out = {}
    try:
        with open(path) as fh:
            for raw in fh:
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise UsageError(f"bad config line {raw.rstrip()!r}")
                key, value = (part.strip() for part in line.split("=", 1))
                out[key.replace("-", "_")] = value
    except OSError as e:
        raise UsageError(f"cannot read config file: {e}")
    return out


def cmd_calibrate(args, args_record: str) -> int:
    if args.b < 1000:
        raise UsageError("--b must be at least 1000")
    obj = _objective_from_args(args)
    try:
        tt = calibrate(obj, args.k, args.alpha, args.b, args.seed, workers=args.workers)
    except CalibrationInfeasibleError as e:
        raise UsageError(str(e))
    body = tt.to_json()
    meta = json.dumps({"tool": f"bufwer {__version__}", "seed": args.seed, "args": args_record})
    text = body[:-1] + f', "_meta": {meta}}}\n'
    _atomic_write(args.output, text)
    return EXIT_OK


def _read_pvalue_table(path: str):
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if not header or header[0] != "family_id":
                raise UsageError("input CSV must have header family_id,p1,...,pK")
            K = len(header) - 1
            ids, rows = [], []
            for lineno, row in enumerate(reader, start=2):
                if len(row) != K + 1:
                    raise UsageError(f"ragged row at line {lineno}")
                ids.append(row[0])
                try:
                    vals = [float(x) for x in row[1:]]
                except ValueError:
                    raise UsageError(f"non-numeric p-value at line {lineno}")
                if any(not 0.0 <= v <= 1.0 for v in vals):
                    raise UsageError(f"p-value outside [0, 1] at line {lineno}")
                rows.append(vals)
    except OSError as e:
        raise UsageError(f"cannot read input: {e}")
    return ids, np.asarray(rows, dtype=float), K


def procedure_from_table(tt: ThresholdTable) -> Procedure:
    obj = ObjectiveSpec.from_config(tt.objective)
    if tt.suite == "bu":
        return Procedure(
            name=f"bu[{tt.fingerprint}]",
            apply_batch=lambda P, tt=tt, obj=obj: apply_bu_batch(P, tt, obj),
        )
    if tt.suite == "simes":
        proc = ImprovedProcedure(
            suite=simes_suite(), obj=obj, alpha=tt.alpha, K=tt.K,
            B=tt.B, seed=tt.seed, t_K=tt.thresholds[0],
        )
        return Procedure(name=f"ih[{tt.fingerprint}]", apply_batch=proc.apply_batch)
    raise UsageError(f"unknown suite {tt.suite!r} in threshold table")


def cmd_apply(args, args_record: str) -> int:
    ids, P, K = _read_pvalue_table(args.input)
    n_boundary = int(np.count_nonzero((P == 0.0) | (P == 1.0)))
    if n_boundary:
        print(
            f"bufwer: warning: {n_boundary} p-value(s) at exactly 0 or 1 are "
            "clamped into the open interval before density evaluation",
            file=sys.stderr,
        )
    if args.thresholds:
        try:
            with open(args.thresholds) as fh:
                tt = ThresholdTable.from_json(fh.read())
        except OSError as e:
            raise UsageError(f"cannot read thresholds: {e}")
        if tt.K != K:
            raise UsageError(f"threshold table K={tt.K} does not match input K={K}")
        proc = procedure_from_table(tt)
        alpha = tt.alpha
    elif args.procedure:
        if args.procedure not in PLAIN_PROCEDURES:
            raise UsageError(
                f"--procedure must be one of {PLAIN_PROCEDURES}; calibrated "
                "procedures are applied via --thresholds"
            )
        if args.alpha is None:
            raise UsageError("--alpha is required with --procedure")
        alpha = args.alpha
        proc = build_procedure(args.procedure, K, alpha)
    else:
        raise UsageError("apply needs either --thresholds or --procedure")

    D = np.asarray(proc.apply_batch(P), dtype=int)
    lines = [_header_line(args_record, args.seed)]
    lines.append("family_id," + ",".join(f"d{i+1}" for i in range(K)) + ",n_discoveries")
    for fam, drow in zip(ids, D):
        lines.append(fam + "," + ",".join(str(int(v)) for v in drow) + f",{int(drow.sum())}")
    _atomic_write(args.output, "\n".join(lines) + "\n")

    if args.summary:
        res = compare_table(P, [proc])
        print(f"procedure: {proc.name}")
        print(f"families: {len(ids)}  K: {K}  alpha: {alpha}")
        print(f"average discoveries: {res.avg_discoveries[proc.name]:.6g}")
        print(f"fraction with >=1 discovery: {res.frac_any_discovery[proc.name]:.6g}")
    return EXIT_OK


def _parse_k1_list(text: str, K: int):
    settings = []
    for part in text.split(","):
        part = part.strip()
        if part.startswith("mix"):
            prob = float(part.split(":")[1]) if ":" in part else 0.5
            settings.append(K1Setting.mix(prob))
        elif ".." in part:
            lo, hi = part.split("..")
            for k1 in range(int(lo), int(hi) + 1):
                settings.append(K1Setting.fixed(k1))
        else:
            settings.append(K1Setting.fixed(int(part)))
    for s in settings:
        if s.kind == "fixed" and not 0 <= s.k1 <= K:
            raise UsageError(f"k1={s.k1} outside 0..{K}")
    return tuple(settings)


def cmd_simulate(args, args_record: str) -> int:
    procs = tuple(
        build_procedure(d.strip(), args.k, args.alpha, args.b, args.seed, args.workers)
        for d in args.procedures.split(",")
    )
    cfg = SimulationConfig(
        K=args.k, alpha=args.alpha, theta_true=args.theta_true,
        settings=_parse_k1_list(args.k1, args.k), reps=args.reps,
        seed=args.seed, procedures=procs, workers=args.workers,
    )
    rows = run_simulation(cfg)
    lines = [_header_line(args_record, args.seed)] + simulation_csv_rows(rows)
    _atomic_write(args.output, "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_region(args, args_record: str) -> int:
    if args.res < 2:
        raise UsageError("--res must be at least 2")
    proc = build_procedure(args.procedure, args.k, args.alpha, args.b, args.seed)
    fixed = None
    if args.fix:
        try:
            axis, value = args.fix.split("=")
            fixed = (axis.strip(), float(value))
        except ValueError:
            raise UsageError("--fix expects e.g. p3=0.03")
    lo, hi = (float(x) for x in args.window.split(","))
    records = region_grid(proc, K=args.k, fixed=fixed, resolution=args.res, window=(lo, hi))
    lines = [_header_line(args_record, args.seed)] + region_csv_rows(records, K=args.k)
    _atomic_write(args.output, "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_exact(args, args_record: str) -> int:
    if args.preset == "tri-level":
        setup = tri_level_setup(args.alpha)
    else:
        if not (args.breakpoints and args.values):
            raise UsageError("exact needs --preset tri-level or --breakpoints/--values")
        density = AlternativeDensity.piecewise_constant(
            [float(x) for x in args.breakpoints.split(",")],
            [float(x) for x in args.values.split(",")],
        )
        kind = {"avg": "average", "1": "single"}.get(args.objective, args.objective)
        setup = PiecewiseSetup(K=args.k, alpha=args.alpha, density=density, objective_kind=kind)
    out = {"alpha": setup.alpha, "K": setup.K, "objective": setup.objective_kind}
    wanted = ("bu", "ih") if args.procedure == "both" else (args.procedure,)
    for name in wanted:
        res = exact_power_piecewise(setup, name)
        out[name] = {
            "pair_threshold": res.pair_threshold,
            "pair_boundary": res.pair_boundary,
            "top_threshold": res.top_threshold,
            "top_boundary": res.top_boundary,
            "null_measure": res.top_null_measure,
            "tpr": res.tpr,
        }
    out["_meta"] = {"tool": f"bufwer {__version__}", "seed": None, "args": args_record}
    text = json.dumps(out, indent=2) + "\n"
    if args.output:
        _atomic_write(args.output, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_solve_theta(args, args_record: str) -> int:
    theta = solve_theta(RegimeSpec(args.alpha, args.k, args.power))
    print(f"{theta:.6f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bufwer",
        description="Bottom-up consonant closed testing with FWER control",
    )
    parser.add_argument("--version", action="version", version=f"bufwer {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, *, seed=True, workers=False, b=False):
        p.add_argument("--config", help="flat key=value file; flags override it")
        if seed:
            p.add_argument("--seed", type=int, default=0)
        if workers:
            p.add_argument("--workers", type=int, default=1,
                           help="wall time only; never changes results")
        if b:
            p.add_argument("--b", type=int, default=100_000,
                           help="Monte Carlo calibration sample count")

    p = sub.add_parser("calibrate", help="calibrate bottom-up thresholds")
    p.add_argument("--objective", required=True, choices=["single", "1", "mix", "avg", "average"])
    p.add_argument("--theta", type=float)
    p.add_argument("--piecewise", help="breakpoints:values, comma separated")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("-o", "--output", required=True)
    add_common(p, workers=True, b=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("apply", help="apply a procedure to a p-value table")
    p.add_argument("--input", required=True, help="CSV with header family_id,p1,...,pK")
    p.add_argument("--thresholds", help="threshold-table JSON from calibrate")
    p.add_argument("--procedure", help="|".join(PLAIN_PROCEDURES))
    p.add_argument("--alpha", type=float)
    p.add_argument("--summary", action="store_true", help="print a discovery summary")
    p.add_argument("-o", "--output", required=True)
    add_common(p)
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("simulate", help="FWER/TPR simulation sweep")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--theta-true", type=float, required=True)
    p.add_argument("--k1", required=True, help="e.g. 0..10,mix or 1,5,mix:0.3")
    p.add_argument("--reps", type=int, required=True)
    p.add_argument("--procedures", required=True,
                   help="comma list, e.g. hommel,gou,bu-mix:-3.10,ih-single:-2.05")
    p.add_argument("-o", "--output", required=True)
    add_common(p, workers=True, b=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("region", help="rejection-region lattice export")
    p.add_argument("--procedure", required=True)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--fix", help="pin one axis, e.g. p3=0.03")
    p.add_argument("--res", type=int, default=200)
    p.add_argument("--window", default="0,0.5")
    p.add_argument("-o", "--output", required=True)
    add_common(p, b=True)
    p.set_defaults(func=cmd_region)

    p = sub.add_parser("exact", help="exact piecewise-constant evaluation (K <= 3)")
    p.add_argument("--preset", choices=["tri-level"])
    p.add_argument("--breakpoints")
    p.add_argument("--values")
    p.add_argument("--objective", default="single",
                   choices=["single", "1", "mix", "avg", "average"])
    p.add_argument("--procedure", default="both", choices=["bu", "ih", "both"])
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("-o", "--output")
    add_common(p, seed=False)
    p.set_defaults(func=cmd_exact)

    p = sub.add_parser("solve-theta", help="shift giving a target Bonferroni power")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--power", type=float, required=True)
    add_common(p, seed=False)
    p.set_defaults(func=cmd_solve_theta)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    # config file values act as defaults; explicit flags override them
    if "--config" in argv:
        cfg_path = argv[argv.index("--config") + 1]
        try:
            file_values = _load_config(cfg_path)
        except UsageError as e:
            print(f"bufwer: {e}", file=sys.stderr)
            return EXIT_USAGE
        merged = []
        seen = set(a.split("=")[0].lstrip("-").replace("-", "_") for a in argv if a.startswith("--"))
        for key, value in file_values.items():
            if key not in seen:
                merged += [f"--{key.replace('_', '-')}", value]
        argv = argv[:1] + merged + argv[1:]
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    args_record = " ".join(argv)
    try:
        return args.func(args, args_record)
    except UsageError as e:
        print(f"bufwer: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, CalibrationInfeasibleError) as e:
        print(f"bufwer: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"bufwer: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except AssertionError as e:
        print(f"bufwer: internal invariant violation: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
