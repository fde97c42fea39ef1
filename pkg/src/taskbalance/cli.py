"""``bench`` command line: run grids, validate transforms, evaluate bounds, plot."""

from __future__ import annotations

import argparse
import logging
import sys

from .bench import dumps, load_config, run_benchmark
from .bounds import BoundInputs, linear_model_bound
from .errors import TaskBalanceError
from .transforms import TransformSpec, validate_transform

_TRANSFORM_ALIASES = {
    "exp": "exponential",
    "exponential": "exponential",
    "identity": "identity",
    "poly": "polynomial",
    "polynomial": "polynomial",
}


def _transform_from_args(args) -> TransformSpec:
    kind = _TRANSFORM_ALIASES[args.transform]
    if kind == "exponential":
        return TransformSpec.exponential(args.T)
    if kind == "polynomial":
        if not args.coeffs:
            raise TaskBalanceError("--coeffs is required for a polynomial transform")
        return TransformSpec.polynomial([float(c) for c in args.coeffs.split(",")])
    return TransformSpec.identity()


def cmd_run(args) -> int:
    cfg = load_config(args.config, args.set)
    if args.figures:
        cfg["figures"] = True
    code, rows = run_benchmark(cfg, parallel=args.parallel)
    ok = sum(r["status"] == "ok" for r in rows)
    print(f"{ok}/{len(rows)} cells completed; results in {cfg['output_dir']}")
    return code


def cmd_validate_transform(args) -> int:
    spec = _transform_from_args(args)
    report = validate_transform(spec, args.grid_max, args.grid_points)
    doc = {"transform": spec.to_dict(), "grid_max": args.grid_max,
           "grid_points": args.grid_points, **report.to_dict()}
    print(dumps(doc))
    return 0 if report.satisfied else 1


def cmd_bound(args) -> int:
    inputs = BoundInputs(args.T, args.m, args.n0, args.rho, args.beta, args.delta, args.empirical_rh)
    out = linear_model_bound(inputs).to_dict()
    out["inputs"] = {"T": args.T, "m": args.m, "n0": args.n0, "rho": args.rho,
                     "beta": args.beta, "delta": args.delta, "empirical_Rh": args.empirical_rh}
    out["rho_note"] = "rho defaults to 1, a conventional placeholder rather than a derived Lipschitz constant"
    print(dumps(out))
    return 0


def cmd_plot(args) -> int:
    from .report import render_run

    for path in render_run(args.run_dir):
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bench", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a strategy x proportion x seed grid")
    run.add_argument("--config", required=True, help="JSON run configuration")
    run.add_argument("--parallel", type=int, default=1, help="cells to run concurrently")
    run.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="override a config entry by dotted path; VALUE is parsed as JSON when possible")
    run.add_argument("--figures", action="store_true", help="also render PNG figures")
    run.set_defaults(func=cmd_run)

    vt = sub.add_parser("validate-transform", help="grid-check a loss transform")
    vt.add_argument("--transform", required=True, choices=sorted(_TRANSFORM_ALIASES))
    vt.add_argument("--T", type=float, default=50.0)
    vt.add_argument("--coeffs", help="comma-separated polynomial coefficients a_0,a_1,...")
    vt.add_argument("--grid-max", type=float, default=100.0)
    vt.add_argument("--grid-points", type=int, default=1001)
    vt.set_defaults(func=cmd_validate_transform)

    bd = sub.add_parser("bound", help="evaluate the linear-model generalization bound")
    bd.add_argument("--T", type=float, default=50.0)
    bd.add_argument("--m", type=int, required=True)
    bd.add_argument("--n0", type=int, required=True)
    bd.add_argument("--rho", type=float, default=1.0)
    bd.add_argument("--beta", type=float, default=1.0)
    bd.add_argument("--delta", type=float, default=0.05)
    bd.add_argument("--empirical-rh", type=float, default=1.0)
    bd.set_defaults(func=cmd_bound)

    pl = sub.add_parser("plot", help="render figures for an existing run directory")
    pl.add_argument("run_dir")
    pl.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (TaskBalanceError, ValueError, OverflowError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
