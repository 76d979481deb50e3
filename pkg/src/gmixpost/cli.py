"""Command-line experiment runner.

Subcommands: ``run`` (execute a pipeline and persist artifacts),
``summarize`` (recompute a report from persisted chains), ``compare``
(tabulate two runs against each other) and ``diagnose`` (estimate the
coordinate-selection diagnostic and emit the bound curve).  Exit codes:
0 success, 2 configuration error, 3 numerical failure, 4 I/O failure.
"""

import argparse
import sys
from pathlib import Path

from .errors import (
    ArgError,
    DivergenceError,
    DomainError,
    FeasibilityError,
    FormatError,
    InitError,
    NumericalError,
    OptimError,
    ShapeError,
    SupportError,
)
from .runner import RunConfig, compare, diagnose_curve, run, summarize

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

_PRESETS = {
    "deblur-small": ("deblur1d", "small"),
    "deblur-full": ("deblur1d", "full"),
    "storm-small": ("storm2d", "small"),
    "storm-full": ("storm2d", "full"),
    "toy": ("toy", "full"),
}

_NUMERIC_ERRORS = (
    NumericalError,
    OptimError,
    DivergenceError,
    InitError,
    FeasibilityError,
    DomainError,
    SupportError,
    ShapeError,
)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gmixpost",
        description="Gaussian-mixture posterior sampling for linear inverse problems",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute a pipeline and persist artifacts")
    _add_config_flags(run_p, need_method=True)
    run_p.add_argument("--out", type=Path, help="output directory for artifacts")

    sum_p = sub.add_parser("summarize", help="recompute a report from persisted chains")
    sum_p.add_argument("--chains", type=Path, required=True)
    sum_p.add_argument("--out", type=Path, help="write report CSV here (default stdout)")

    cmp_p = sub.add_parser("compare", help="compare two run directories")
    cmp_p.add_argument("--a", type=Path, required=True)
    cmp_p.add_argument("--b", type=Path, required=True)
    cmp_p.add_argument("--out", type=Path, help="write comparison CSV here (default stdout)")

    diag_p = sub.add_parser("diagnose", help="estimate the diagnostic and bound curve")
    _add_config_flags(diag_p, need_method=False)
    diag_p.add_argument(
        "--space", choices=("w", "x"), default="w",
        help="diagnostic over the mixing variable (w) or the parameters (x)",
    )
    diag_p.add_argument("--out", type=Path, help="write the eps(r) curve CSV here")
    return parser


def _add_config_flags(parser, need_method):
    parser.add_argument("--config", type=Path, help="JSON config file (flags override)")
    parser.add_argument("--experiment", choices=("toy", "deblur1d", "storm2d"))
    parser.add_argument("--preset", choices=sorted(_PRESETS))
    if need_method:
        parser.add_argument(
            "--method", choices=("reference", "ccs-w", "ccs-x", "map-w", "map-x")
        )
    parser.add_argument("--seed", type=int, help="root seed (mandatory, no default)")
    parser.add_argument("--n-samples", type=int, dest="n_samples")
    parser.add_argument("--n-chains", type=int, dest="n_chains")
    parser.add_argument("--burn-in", type=float, dest="burn_in")
    parser.add_argument("--r", type=int)
    parser.add_argument("--tau", type=float)
    parser.add_argument("--r-max", type=int, dest="r_max")
    parser.add_argument("--scale", choices=("full", "small"))
    parser.add_argument("--n-diagnostic", type=int, dest="n_diagnostic")
    parser.add_argument(
        "--diagnostic-source", choices=("prior", "map"), dest="diagnostic_source"
    )
    parser.add_argument("--workers", type=int)


def _config_from_args(args, default_method=None):
    payload = {}
    if args.config is not None:
        try:
            text = args.config.read_text()
        except OSError as exc:
            raise FormatError(f"cannot read config file: {exc}") from exc
        payload.update(RunConfig.from_json(text).__dict__)
    if args.preset is not None:
        experiment, scale = _PRESETS[args.preset]
        payload["experiment"] = experiment
        payload["scale"] = scale
    for name in (
        "experiment", "method", "seed", "n_samples", "n_chains", "burn_in",
        "r", "tau", "r_max", "scale", "n_diagnostic", "diagnostic_source", "workers",
    ):
        value = getattr(args, name, None)
        if value is not None:
            payload[name] = value
    payload.setdefault("method", default_method)
    if payload.get("experiment") is None:
        raise ArgError("an experiment (or preset) is required")
    if payload.get("method") is None:
        raise ArgError("a method is required")
    if payload.get("seed") is None:
        raise ArgError("--seed is mandatory and has no default")
    return RunConfig(**{k: v for k, v in payload.items() if k in RunConfig.__dataclass_fields__}).validate()


def _cmd_run(args):
    config = _config_from_args(args)
    report = run(config, output_dir=args.out)
    for key, value in report.scalar_metadata().items():
        print(f"{key}: {value}")
    for stage, seconds in report.timings.items():
        print(f"time_{stage}: {seconds:.2f}s")
    if args.out is not None:
        print(f"artifacts: {args.out}")
    return EXIT_OK


def _cmd_summarize(args):
    report = summarize(args.chains)
    text = report.to_csv()
    if args.out is not None:
        args.out.write_text(text)
        print(f"report: {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_compare(args):
    text = compare(summarize(args.a), summarize(args.b))
    if args.out is not None:
        args.out.write_text(text)
        print(f"comparison: {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_diagnose(args):
    args.method = "ccs-x" if args.space == "x" else "ccs-w"
    if args.r is None and args.tau is None:
        args.r = 1  # selection size is irrelevant for the curve
    config = _config_from_args(args, default_method=args.method)
    diagnostic, curve = diagnose_curve(config)
    lines = ["r,eps"] + [f"{i + 1},{v:.17g}" for i, v in enumerate(curve)]
    text = "\n".join(lines) + "\n"
    if args.out is not None:
        args.out.write_text(text)
        print(f"curve: {args.out}")
    else:
        sys.stdout.write(text)
    top = min(10, diagnostic.h.size)
    order = diagnostic.h.argsort()[::-1][:top]
    print(f"top-{top} coordinates by diagnostic: {order.tolist()}")
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on bad flags, which matches the config code
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "summarize":
            return _cmd_summarize(args)
        if args.command == "compare":
            return _cmd_compare(args)
        return _cmd_diagnose(args)
    except ArgError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FormatError as exc:
        offset = f" (byte offset {exc.offset})" if exc.offset is not None else ""
        print(f"format error: {exc}{offset}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except _NUMERIC_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
