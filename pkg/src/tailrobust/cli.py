"""Command-line front end.

Exit status: 0 on success, 2 for user errors (bad flags, unreadable or
malformed input), 3 when an estimator or solver fails numerically.

Settings come from command-line flags, then from a flat ``key=value``
config file given with ``--config``, then from built-in defaults. Keys in
the file use the long flag names with dashes or underscores
(``reps = 20``, ``z-grid = 1,2,3``).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .exceptions import ConfigurationError, ConvergenceError, NoSolutionError, TailRobustError

logger = logging.getLogger("tailrobust")

EXIT_OK, EXIT_USER, EXIT_NUMERIC = 0, 2, 3

ESTIMATE_METHODS = (
    "sample",
    "elementwise_truncated",
    "adaptive_truncated",
    "spectral_truncated",
    "elementwise_huber",
    "adaptive_huber",
    "spectral_huber",
    "mom",
)
TUNE_METHODS = ("adaptive_truncated", "adaptive_huber", "spectral_truncated", "elementwise_huber")
TABLE_STRUCTURES = {1: "diagonal", 2: "equal_corr", 3: "power_decay"}
TABLE_SCENARIOS = ((50, 100), (50, 200), (100, 200))
TABLE_MODELS = ("normal", "student_t3", "pareto3", "lognormal")


class UserError(Exception):
    """Problem with the invocation or the input files; maps to exit status 2."""


# -- input / output ----------------------------------------------------------


def read_matrix(path: str, header: bool = False) -> np.ndarray:
    """Read a numeric CSV (rows are observations); errors name the offending line."""
    try:
        fh = sys.stdin if path == "-" else open(path, newline="")
    except OSError as exc:
        raise UserError(f"cannot open {path}: {exc.strerror}") from None
    rows, width = [], None
    with fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if header and lineno == 1:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            try:
                vals = [float(c) for c in row]
            except ValueError:
                bad = next(c for c in row if not _is_float(c))
                raise UserError(f"{path}: line {lineno}: cannot parse {bad.strip()!r} as a number") from None
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise UserError(f"{path}: line {lineno}: expected {width} fields, found {len(vals)}")
            if not all(np.isfinite(vals)):
                raise UserError(f"{path}: line {lineno}: non-finite value")
            rows.append(vals)
    if not rows:
        raise UserError(f"{path}: no data rows")
    return np.array(rows, dtype=np.float64)


def _is_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def format_matrix(M: np.ndarray) -> str:
    M = np.atleast_2d(M)
    return "".join(",".join(format(float(v), ".17g") for v in row) + "\n" for row in M)


def _emit(text: str, path: str | None) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _write_result(args, matrix, meta: dict) -> None:
    if args.format == "json":
        payload = dict(meta, matrix=np.atleast_2d(matrix).tolist())
        _emit(json.dumps(payload, indent=2) + "\n", args.output)
        return
    _emit(format_matrix(matrix), args.output)
    sidecar = args.sidecar or (args.output + ".json" if args.output not in (None, "-") else None)
    if sidecar:
        Path(sidecar).write_text(json.dumps(meta, indent=2) + "\n")


# -- argument helpers --------------------------------------------------------


def _tau(s: str):
    s = s.strip().lower()
    if s in ("cv", "adaptive"):
        return s
    try:
        v = float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"tau must be a positive number, 'inf', 'cv' or 'adaptive', got {s!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError("tau must be positive")
    return v


def _int_list(s: str) -> list[int]:
    try:
        return [int(v) for v in s.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from None


def _float_list(s: str) -> list[float]:
    try:
        return [float(v) for v in s.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}") from None


def _name_list(s: str) -> list[str]:
    return [v.strip() for v in s.split(",") if v.strip()]


def _check_names(kind: str, names, valid) -> None:
    bad = [v for v in names if v not in valid]
    if bad:
        raise UserError(f"invalid {kind} {', '.join(bad)}; valid {kind}s: {', '.join(valid)}")


def read_config(path: str) -> dict:
    """Parse a flat ``key=value`` file; ``#`` starts a comment."""
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UserError(f"cannot read config {path}: {exc.strerror}") from None
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UserError(f"{path}: line {lineno}: expected key=value")
        key, val = (p.strip() for p in line.split("=", 1))
        out[key.replace("-", "_")] = val
    return out


def _apply_config(parser: argparse.ArgumentParser, sub: argparse.ArgumentParser, cfg: dict) -> None:
    known = {a.dest: a for a in sub._actions} | {a.dest: a for a in parser._actions}
    unknown = sorted(set(cfg) - set(known) - {"config"})
    if unknown:
        raise UserError(f"unknown config key(s): {', '.join(unknown)}")
    defaults = {}
    for key, val in cfg.items():
        if key == "config":
            continue
        action = known[key]
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            low = val.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise UserError(f"config key {key}: expected a boolean, got {val!r}")
            defaults[key] = low in ("true", "1", "yes")
        else:
            # string defaults are run through the action's type by argparse
            defaults[key] = val
    sub.set_defaults(**defaults)
    parser.set_defaults(**{k: v for k, v in defaults.items() if k in {a.dest for a in parser._actions}})


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value file supplying defaults for any flag")
    common.add_argument("--seed", type=int, help="seed for all randomness (drawn from entropy and printed if omitted)")
    common.add_argument("--threads", type=int, help="worker threads for compiled kernels (env TAILROBUST_THREADS)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    io = argparse.ArgumentParser(add_help=False)
    io.add_argument("input", help="CSV file, rows are observations ('-' for stdin)")
    io.add_argument("--header", action="store_true", help="skip the first input line")
    io.add_argument("-o", "--output", help="output path (default stdout)")
    io.add_argument("--format", choices=("csv", "json"), default="csv")
    io.add_argument("--sidecar", help="path of the JSON metadata file (default OUTPUT.json)")

    parser = argparse.ArgumentParser(prog="tailrobust", description="Tail-robust covariance estimation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("estimate", parents=[common, io], help="estimate a covariance matrix from a CSV file")
    p.add_argument("-m", "--method", choices=ESTIMATE_METHODS, default="adaptive_huber")
    p.add_argument("--tau", type=_tau, help="robustification level: number, inf, cv or adaptive")
    p.add_argument("--t", type=float, help="confidence parameter of the adaptive rules (default log n)")
    p.add_argument("--groups", type=int, help="number of groups for mom")
    p.add_argument("--max-pairs", type=int, help="pair subsample size for spectral_huber")

    p = subs.add_parser("tune", parents=[common, io], help="compute data-driven robustification levels")
    p.add_argument("-m", "--method", choices=TUNE_METHODS, default="adaptive_truncated")
    p.add_argument("--select", choices=("adaptive", "cv"), default=None,
                   help="selection rule for the scalar-level methods")
    p.add_argument("--t", type=float)
    p.add_argument("--folds", type=int, default=5)

    bench = argparse.ArgumentParser(add_help=False)
    bench.add_argument("-o", "--output", help="report prefix; writes PREFIX.csv and PREFIX.json")
    bench.add_argument("--resume", action="store_true", help="continue from PREFIX.json, skipping finished cells")
    bench.add_argument("--reps", type=int)
    bench.add_argument("--jobs", type=int, default=1, help="worker processes over replications")

    p = subs.add_parser("benchmark", parents=[common, bench], help="relative mean error tables")
    p.add_argument("--quick", action="store_true", help="5 replications of one t3 scenario at n=50, d=100")
    p.add_argument("--reproduce-table", type=int, choices=sorted(TABLE_STRUCTURES))
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--d", type=int, default=100)
    p.add_argument("--models", type=_name_list, default="student_t3")
    p.add_argument("--structures", type=_name_list, default="diagonal")
    p.add_argument("--methods", type=_name_list, default="huber_cv,adaptive_huber,adaptive_truncated,spectral_cv")
    p.add_argument("--literal-scaling", action="store_true")

    p = subs.add_parser("sweep", parents=[common, bench], help="max-norm error against dimension")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--d-list", type=_int_list, default="50,100,150,200,250,300,350,400,450,500")
    p.add_argument("--methods", type=_name_list, default="sample,adaptive_truncated,spectral_cv")

    p = subs.add_parser("fdp", parents=[common, io], help="factor-adjusted false discovery proportion curve")
    p.add_argument("--r", type=int, required=False, help="number of factors (default: eigenvalue ratio)")
    p.add_argument("--z-grid", type=_float_list, default="1,1.5,2,2.5,3,3.5,4")
    p.add_argument("--pilot", choices=("adaptive_huber", "adaptive_truncated"), default="adaptive_huber")
    return parser


def _configure_threads(n: int | None) -> None:
    if n is None:
        env = os.environ.get("TAILROBUST_THREADS")
        if not env:
            return
        try:
            n = int(env)
        except ValueError:
            raise UserError(f"TAILROBUST_THREADS must be an integer, got {env!r}") from None
    import numba

    if not 1 <= n <= numba.config.NUMBA_NUM_THREADS:
        raise UserError(f"threads must be between 1 and {numba.config.NUMBA_NUM_THREADS}")
    numba.set_num_threads(n)


def _resolve_seed(seed: int | None) -> int:
    if seed is None:
        seed = int(np.random.SeedSequence().entropy % (2**63))
        print(f"seed: {seed}", file=sys.stderr)
    return seed


# -- subcommands -------------------------------------------------------------


def _make_estimator(args, seed):
    from . import estimators as E

    m, tau = args.method, args.tau
    if m == "sample":
        return E.SampleCovariance()
    if m == "mom":
        return E.MedianOfMeansCovariance(n_groups=args.groups)
    if m == "adaptive_huber":
        return E.AdaptiveHuberCovariance(t=args.t)
    if m == "adaptive_truncated":
        return E.ElementwiseTruncatedCovariance(tau="adaptive", t=args.t)
    if m == "elementwise_truncated":
        if tau == "cv":
            raise UserError("elementwise_truncated supports --tau adaptive or a number")
        return E.ElementwiseTruncatedCovariance(tau=tau or "adaptive", t=args.t)
    if m == "spectral_truncated":
        return E.SpectrumTruncatedCovariance(tau=tau or "cv", t=args.t, random_state=seed)
    if m == "elementwise_huber":
        if tau == "adaptive":
            raise UserError("use method adaptive_huber for the adaptive Huber levels")
        return E.ElementwiseHuberCovariance(tau=tau or "cv", random_state=seed)
    if isinstance(tau, str):
        raise UserError("spectral_huber needs a numeric --tau")
    return E.SpectralHuberCovariance(tau=tau or 1.0, max_pairs=args.max_pairs, random_state=seed)


def _tau_meta(tau):
    if tau is None:
        return None
    arr = np.asarray(tau, dtype=np.float64)
    if arr.ndim == 0:
        return float(arr) if np.isfinite(arr) else str(float(arr))
    return "matrix"


def cmd_estimate(args) -> int:
    X = read_matrix(args.input, args.header)
    seed = _resolve_seed(args.seed) if args.method in ("spectral_truncated", "elementwise_huber", "spectral_huber") else args.seed
    t0 = time.perf_counter()
    est = _make_estimator(args, seed).fit(X)
    elapsed = time.perf_counter() - t0
    diag = getattr(est, "diagnostics_", None)
    meta = {
        "method": args.method,
        "n": int(X.shape[0]),
        "d": int(X.shape[1]),
        "elapsed": elapsed,
        "tau": _tau_meta(getattr(est, "tau_", None)),
        "seed": seed,
        "diagnostics": diag.to_dict() if diag is not None else None,
    }
    _write_result(args, est.covariance_, meta)
    return EXIT_OK


def cmd_tune(args) -> int:
    from . import tuning

    X = read_matrix(args.input, args.header)
    t0 = time.perf_counter()
    diag, seed = None, args.seed
    if args.method == "adaptive_truncated":
        _, out, diag = tuning.adaptive_elementwise_truncated(X, args.t, return_details=True)
    elif args.method == "adaptive_huber":
        _, out, diag = tuning.adaptive_huber_covariance(X, args.t, return_details=True)
    else:
        select = args.select or ("cv" if args.method == "elementwise_huber" else "adaptive")
        if select == "adaptive":
            if args.method != "spectral_truncated":
                raise UserError("adaptive selection of a scalar level is only defined for spectral_truncated")
            out = tuning.solve_spectral_tau(X, args.t).tau
        else:
            seed = _resolve_seed(args.seed)
            grid = tuning.CvGrid(tuple(tuning.default_tau_grid(X, args.method, args.t)), folds=args.folds)
            out = tuning.cross_validate_tau(X, args.method, grid, seed=seed)
    meta = {
        "method": args.method,
        "n": int(X.shape[0]),
        "d": int(X.shape[1]),
        "elapsed": time.perf_counter() - t0,
        "seed": seed,
        "diagnostics": diag.to_dict() if diag is not None else None,
    }
    _write_result(args, out, meta)
    return EXIT_OK


def _report_paths(args):
    if not args.output:
        if args.resume:
            raise UserError("--resume needs --output")
        return None, None
    return args.output + ".csv", args.output + ".json"


def _progress(msg):
    print(msg, file=sys.stderr)


def cmd_benchmark(args) -> int:
    from . import simulation as S

    if args.quick and args.reproduce_table:
        raise UserError("--quick and --reproduce-table are mutually exclusive")
    if args.reproduce_table:
        scenarios, models = TABLE_SCENARIOS, TABLE_MODELS
        structures = (TABLE_STRUCTURES[args.reproduce_table],)
        methods = S.TABLE_METHODS
        reps = args.reps or 50
    elif args.quick:
        scenarios, models, structures = ((50, 100),), ("student_t3",), ("diagonal",)
        methods, reps = args.methods, args.reps or 5
    else:
        scenarios, models, structures = ((args.n, args.d),), args.models, args.structures
        methods, reps = args.methods, args.reps or 50
    _check_names("method", methods, tuple(S.METHODS))
    _check_names("model", models, S.MODELS)
    _check_names("structure", structures, S.STRUCTURES)
    seed = _resolve_seed(args.seed)
    csv_path, json_path = _report_paths(args)
    if json_path and os.path.exists(json_path) and not args.resume:
        os.remove(json_path)
    report = S.run_table(
        scenarios, models, structures, methods, reps, seed,
        checkpoint=json_path, n_jobs=args.jobs, literal_scaling=getattr(args, "literal_scaling", False),
        progress=_progress if args.verbose else None,
    )
    if csv_path:
        report.to_csv(csv_path)
    print(report.summary())
    return EXIT_OK


def cmd_sweep(args) -> int:
    from . import simulation as S

    _check_names("method", args.methods, tuple(S.METHODS))
    seed = _resolve_seed(args.seed)
    csv_path, json_path = _report_paths(args)
    if json_path and os.path.exists(json_path) and not args.resume:
        os.remove(json_path)
    report = S.run_dimension_sweep(
        args.n, args.d_list, args.reps or 50, seed, args.methods,
        n_jobs=args.jobs, checkpoint=json_path, progress=_progress if args.verbose else None,
    )
    if csv_path:
        report.to_csv(csv_path)
    print(f"{'d':>5} {'method':<20} {'mean':>10} {'sd':>10}")
    for c in sorted(report.cells, key=lambda c: (c.d, c.method)):
        print(f"{c.d:>5} {c.method:<20} {c.mean_error:>10.4f} {c.sd_error:>10.4f}")
    return EXIT_OK


def cmd_fdp(args) -> int:
    from . import factor
    from .tuning import adaptive_elementwise_truncated, adaptive_huber_covariance

    X = read_matrix(args.input, args.header)
    t0 = time.perf_counter()
    pilot = (adaptive_huber_covariance if args.pilot == "adaptive_huber" else adaptive_elementwise_truncated)(X)
    r = args.r if args.r is not None else factor.factor_count_ratio(pilot)
    curve = factor.estimate_fdp(X, r, args.z_grid, pilot=pilot)
    meta = {
        "method": "fdp",
        "pilot": args.pilot,
        "r": int(r),
        "n": int(X.shape[0]),
        "d": int(X.shape[1]),
        "elapsed": time.perf_counter() - t0,
        "floored": curve.floored.tolist(),
    }
    if args.format == "json":
        payload = dict(meta, z=curve.z_grid.tolist(), R=curve.R.tolist(), fdp_hat=curve.fdp_hat.tolist())
        _emit(json.dumps(payload, indent=2) + "\n", args.output)
    else:
        _emit(curve.to_csv(), args.output)
        sidecar = args.sidecar or (args.output + ".json" if args.output not in (None, "-") else None)
        if sidecar:
            Path(sidecar).write_text(json.dumps(meta, indent=2) + "\n")
    return EXIT_OK


COMMANDS = {
    "estimate": cmd_estimate,
    "tune": cmd_tune,
    "benchmark": cmd_benchmark,
    "sweep": cmd_sweep,
    "fdp": cmd_fdp,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
        if args.config:
            sub = parser._subparsers._group_actions[0].choices[args.command]
            _apply_config(parser, sub, read_config(args.config))
            args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
        )
        _configure_threads(args.threads)
        return COMMANDS[args.command](args)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except (NoSolutionError, ConvergenceError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigurationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except TailRobustError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
