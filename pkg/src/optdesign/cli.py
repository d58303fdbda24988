"""Command-line interface: ``optdesign {solve,fit,robustness,simulate,curve}``.

Results go to stdout (JSON or CSV), diagnostics to stderr. Exit codes:
0 ok, 2 usage or validation error, 3 numerical failure, 4 I/O error.

A ``--config FILE`` of ``key = value`` lines supplies defaults for the
chosen subcommand; flags on the command line take precedence.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

import numpy as np

from . import glmfit, links, robustness, simulation, solver
from .design import as_weights
from .exceptions import NumericalError, OptDesignError, ValidationError

log = logging.getLogger("optdesign")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
OUT_DIR_ENV = "OPTDESIGN_OUT"
JSON_DIGITS = 12


def _floats(text, count=None, name="value"):
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"{name} must be comma-separated numbers, got {text!r}")
    if count is not None and len(vals) != count:
        raise argparse.ArgumentTypeError(f"{name} needs {count} numbers, got {len(vals)}")
    return vals


def _weights_arg(text):
    return _floats(text, 4, "weights")


def _beta_arg(text):
    return _floats(text, 3, "beta")


def _percentiles_arg(text):
    return tuple(_floats(text, None, "percentiles"))


def _link_arg(text):
    try:
        return links.Link.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _rounded(obj):
    if isinstance(obj, dict):
        return {k: _rounded(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_rounded(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _rounded(obj.tolist())
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
        return float(f"{x:.{JSON_DIGITS}g}")
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _emit_json(payload):
    sys.stdout.write(json.dumps(_rounded(payload), indent=2) + "\n")


def _weights_from_args(args):
    if args.w is not None:
        return as_weights(args.w)
    return as_weights(links.weights_from_beta(args.link, args.beta))


def cmd_solve(args):
    w = _weights_from_args(args)
    v = 1.0 / w
    cfg = solver.SolverConfig(max_iter=args.max_iter)
    res = solver.solve(v, cfg)
    out = res.to_dict()
    out["w"] = w.tolist()
    if args.n is not None:
        out["allocation"] = solver.allocate(res.p, args.n)
    _emit_json(out)


def cmd_fit(args):
    table = glmfit.read_table_csv(args.data)
    _emit_json(glmfit.analyze(table, args.link).to_dict())


def cmd_robustness(args):
    v = 1.0 / _weights_from_args(args)
    res = solver.solve(v)
    if args.unbounded:
        a = args.vlow if args.vlow is not None else float(v.min())
        rng = robustness.RangeSpec(a, math.inf, allow_unbounded=True)
    else:
        if args.vlow is None or args.vhigh is None:
            raise ValidationError("give --vlow and --vhigh, or --unbounded")
        rng = robustness.RangeSpec(args.vlow, args.vhigh)
    report = robustness.r_max(res.p, v, rng)
    out = report.to_dict()
    out["p_c"] = res.p.tolist()
    _emit_json(out)


def cmd_simulate(args):
    out_dir = args.out or os.environ.get(OUT_DIR_ENV)
    if not out_dir:
        raise ValidationError(f"no output directory: pass --out or set {OUT_DIR_ENV}")
    kwargs = dict(link=args.link, n_samples=args.n, seed=args.seed, w_low=args.wlow, w_high=args.whigh)
    if args.percentiles is not None:
        kwargs["percentiles"] = args.percentiles
    cfg = simulation.StudyConfig(**kwargs)
    result = simulation.run_study(cfg, workers=args.workers, keep_matrix=args.full)
    paths = simulation.export_study(result, out_dir, full=args.full)
    r99 = result.percentile_column(99) if 99.0 in cfg.percentiles else None
    payload = {
        "link": cfg.link.value,
        "n_samples": cfg.n_samples,
        "seed": cfg.seed,
        "saturated_fraction": result.saturated_fraction,
        "failures": len(result.failures),
        "files": paths,
    }
    if r99 is not None:
        payload["R_99_range"] = [float(r99.min()), float(r99.max())]
    _emit_json(payload)


def cmd_curve(args):
    if args.steps < 1:
        raise ValidationError("--steps must be >= 1")
    grid = np.linspace(args.start, args.stop, args.steps + 1)
    rows = links.weight_curve(args.link, grid)
    if args.format == "json":
        _emit_json([{"eta": e, "mu": m, "w": w} for e, m, w in rows])
    elif args.out:
        try:
            with open(args.out, "w", newline="") as fh:
                links.write_curve_csv(rows, fh)
        except OSError as exc:
            raise OSError(f"cannot write {args.out}: {exc.strerror or exc}") from exc
    else:
        links.write_curve_csv(rows, sys.stdout)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="optdesign",
        description="Locally D-optimal 2x2 designs for binary response and their robustness.",
    )
    parser.add_argument("--config", metavar="FILE", help="key = value defaults for the subcommand")
    parser.add_argument("-v", "--verbose", action="store_true", help="log diagnostics to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def weights_group(p, required):
        g = p.add_mutually_exclusive_group(required=required)
        g.add_argument("--w", type=_weights_arg, metavar="W1,W2,W3,W4",
                       help="GLM weights at (+,+), (+,-), (-,+), (-,-)")
        g.add_argument("--beta", type=_beta_arg, metavar="B0,B1,B2",
                       help="assumed parameters; weights follow from --link")
        p.add_argument("--link", type=_link_arg, default=links.Link.LOGIT,
                       help="logit, probit, loglog or cloglog (default: logit)")

    p = sub.add_parser("solve", help="optimal design for given weights or parameters")
    weights_group(p, required=True)
    p.add_argument("--n", type=int, help="also round the design to N experimental units")
    p.add_argument("--max-iter", type=int, default=10000, help="iteration cap for the general solver")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("fit", help="fit a 2x2 binomial GLM and analyse the design")
    p.add_argument("--data", required=True, metavar="FILE", help="CSV with x1,x2,successes,trials")
    p.add_argument("--link", type=_link_arg, default=links.Link.LOGIT,
                   help="logit, probit, loglog or cloglog (default: logit)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("robustness", help="worst-case efficiency loss over a variance range")
    weights_group(p, required=True)
    p.add_argument("--vlow", type=float, help="lower bound a on the variances 1/w")
    p.add_argument("--vhigh", type=float, help="upper bound b on the variances 1/w")
    p.add_argument("--unbounded", action="store_true", help="no upper bound on the variances")
    p.set_defaults(func=cmd_robustness)

    p = sub.add_parser("simulate", help="Monte Carlo robustness study, written as CSV")
    p.add_argument("--link", type=_link_arg, default=links.Link.LOGIT,
                   help="sets the default weight range (default: logit)")
    p.add_argument("--n", type=int, default=1000, help="number of sampled weight vectors")
    p.add_argument("--seed", type=int, default=0, help="random seed (64-bit)")
    p.add_argument("--wlow", type=float, default=0.05, help="lower weight bound (default 0.05)")
    p.add_argument("--whigh", type=float, default=None,
                   help="upper weight bound (default 0.25 for logit, 0.65 otherwise)")
    p.add_argument("--percentiles", type=_percentiles_arg, default=None,
                   help="comma-separated percentiles (default 25,50,75,95,99)")
    p.add_argument("--workers", type=int, default=1, help="threads for the pairwise losses")
    p.add_argument("--out", metavar="DIR", help=f"output directory (default: ${OUT_DIR_ENV})")
    p.add_argument("--full", action="store_true", help="also write the full loss matrix")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("curve", help="weight and mean versus the linear predictor")
    p.add_argument("--link", type=_link_arg, default=links.Link.LOGIT,
                   help="logit, probit, loglog or cloglog (default: logit)")
    p.add_argument("--from", dest="start", type=float, default=-6.0, help="first eta (default -6)")
    p.add_argument("--to", dest="stop", type=float, default=6.0, help="last eta (default 6)")
    p.add_argument("--steps", type=int, default=120, help="number of intervals; steps+1 points")
    p.add_argument("--format", choices=("csv", "json"), default="csv", help="output format")
    p.add_argument("--out", metavar="FILE", help="write the CSV here instead of stdout")
    p.set_defaults(func=cmd_curve)
    return parser


def _read_config(path):
    values = {}
    try:
        with open(path) as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line or line.startswith("["):
                    continue
                key, sep, value = line.partition("=")
                if not sep:
                    raise ValidationError(f"{path}:{lineno}: expected key = value")
                values[key.strip().replace("-", "_")] = value.strip().strip("\"'")
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    return values


def _apply_config(parser, argv):
    """Set subcommand defaults from ``--config`` before the real parse."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    if not known.config:
        return
    command = next((a for a in rest if not a.startswith("-")), None)
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    if command not in subparsers.choices:
        return
    sp = subparsers.choices[command]
    actions = {a.dest: a for a in sp._actions if a.dest != "help"}
    defaults = {}
    for key, raw in _read_config(known.config).items():
        if key not in actions:
            raise ValidationError(f"{known.config}: unknown key {key!r} for '{command}'")
        action = actions[key]
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
            continue
        try:
            defaults[key] = action.type(raw) if action.type else raw
        except (argparse.ArgumentTypeError, ValueError) as exc:
            raise ValidationError(f"{known.config}: bad value for {key!r}: {exc}") from None
    # A weight source given on the command line replaces one from the file.
    if {"w", "beta"} & defaults.keys() and ({"--w", "--beta"} & set(rest)):
        defaults.pop("w", None)
        defaults.pop("beta", None)
    for group in sp._mutually_exclusive_groups:
        if any(a.dest in defaults for a in group._group_actions):
            group.required = False
    sp.set_defaults(**defaults)


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except ValidationError as exc:
        print(f"optdesign: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"optdesign: error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if getattr(args, "w", None) is not None and getattr(args, "beta", None) is not None:
        print("optdesign: error: --w and --beta are mutually exclusive", file=sys.stderr)
        return EXIT_USAGE
    try:
        args.func(args)
    except NumericalError as exc:
        print(f"optdesign: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValidationError, ValueError) as exc:
        print(f"optdesign: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"optdesign: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OptDesignError as exc:
        print(f"optdesign: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
