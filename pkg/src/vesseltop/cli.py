"""Command-line interface: metrics reports, phantoms, experiments, gradcheck.

Exit codes: 0 success, 2 validation error, 3 internal error. Identical
inputs and flags produce byte-identical outputs (fixed field order, floats
at 6 significant digits).
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import grid, metrics, phantoms, softloss

SCHEMA = "vesseltop/1"


class CliError(Exception):
    """Validation problem surfaced to the user with exit code 2."""


def _round6(obj):
    if isinstance(obj, float):
        return float(f"{obj:.6g}")
    if isinstance(obj, dict):
        return {k: _round6(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round6(v) for v in obj]
    return obj


def _emit(text, out_path):
    if out_path:
        with open(out_path, "w", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _load_labels(path):
    try:
        if str(path).lower().endswith(".pgm"):
            mask = grid.read_pgm(path)
            return grid.LabelGrid(mask.shape, mask.values, class_count=2)
        obj = grid.read_vgrid(path)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}")
    if isinstance(obj, grid.ScalarField):
        raise CliError(f"{path}: scalar fields cannot be evaluated as labels")
    return obj


def _parse_groups(items):
    groups = {}
    for item in items or []:
        for chunk in item.split(";"):
            if not chunk:
                continue
            if ":" not in chunk:
                raise CliError(f"bad group spec {chunk!r}, expected name:id,id")
            name, ids = chunk.split(":", 1)
            try:
                groups[name] = [int(v) for v in ids.split(",") if v]
            except ValueError:
                raise CliError(f"bad class ids in group {chunk!r}")
    return groups or None


def cmd_metrics(args):
    pred = _load_labels(args.pred)
    ref = _load_labels(args.ref)
    variants = [v for v in args.variants.split(",") if v]
    groups = _parse_groups(args.groups)
    report = metrics.evaluate(pred, ref, variants, tol=args.tol,
                              class_subsets=groups)
    payload = {"schema": SCHEMA, **report.to_dict()}
    if args.format == "json":
        text = json.dumps(_round6(payload), indent=2, sort_keys=True) + "\n"
    else:
        lines = ["class,metric,value"]
        for class_id in sorted(report.per_class):
            for metric, value in report.per_class[class_id].items():
                lines.append(f"{class_id},{metric},{value:.6g}")
        for metric, value in report.aggregate.items():
            lines.append(f"mean,{metric},{value:.6g}")
        for name in sorted(report.groups):
            for metric, value in report.groups[name].items():
                lines.append(f"group:{name},{metric},{value:.6g}")
        text = "\n".join(lines) + "\n"
    _emit(text, args.out)
    return 0


def cmd_phantom(args):
    dims = tuple(int(v) for v in args.dims.lower().split("x"))
    spec = phantoms.PhantomSpec(
        kind=args.kind, dims=dims,
        radii=tuple(float(v) for v in args.radii.split(",")),
        lengths=tuple(float(v) for v in args.lengths.split(",")),
        orientation=args.orientation, seed=args.seed)
    mask = phantoms.generate(spec)
    grid.write_vgrid(args.out, grid.LabelGrid(mask.shape, mask.values,
                                              class_count=2))
    return 0


def cmd_experiment(args):
    rows = phantoms.sweep(args.name)
    lines = ["param,metric,value"]
    lines += [f"{p},{m},{v:.6g}" for p, m, v in rows]
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def _gradcheck_instance(dim, seed, shape2d=(12, 12), shape3d=(8, 8, 8)):
    rng = np.random.default_rng(seed)
    dims = shape2d if dim == 2 else shape3d
    shape = grid.GridShape(dims)
    # probabilities kept away from the 0.5 threshold and from {0,1}
    vals = rng.uniform(0.05, 0.45, size=shape.array_shape)
    flip = rng.random(shape.array_shape) < 0.4
    vals[flip] = rng.uniform(0.55, 0.95, size=int(flip.sum()))
    p = softloss.ProbField(shape, vals)
    ref_vals = (rng.random(shape.array_shape) < 0.45).astype(np.uint8)
    if not ref_vals.any():
        ref_vals.flat[0] = 1
    ref = grid.BinaryField(shape, ref_vals)
    return p, ref


def cmd_gradcheck(args):
    p, ref = _gradcheck_instance(args.dim, args.seed)
    name = args.loss
    if name == "dice":
        def loss(arr):
            return softloss.soft_dice_loss(
                softloss.ProbField(p.shape, arr), ref, return_grad=True)
    elif name == "combined":
        spec = softloss.CombinedLossSpec(alpha=args.alpha, beta=args.beta,
                                         variant=args.variant)
        def loss(arr):
            return softloss.combined_loss(
                spec, softloss.ProbField(p.shape, arr), ref, return_grad=True)
    else:
        vspec = metrics.VariantSpec(name, args.dim)
        def loss(arr):
            return softloss.soft_cl_x_loss(
                vspec, softloss.ProbField(p.shape, arr), ref, return_grad=True)
    err = softloss.grad_check(loss, p, eps=args.eps,
                              num_probes=args.probes, seed=args.seed)
    payload = {"schema": SCHEMA, "loss": name, "dim": args.dim,
               "eps": args.eps, "seed": args.seed,
               "max_rel_err": err, "pass": bool(err < 1e-3)}
    _emit(json.dumps(_round6(payload), indent=2, sort_keys=True) + "\n",
          args.out)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="vesseltop",
        description="Centerline-boundary Dice metrics and experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    m = sub.add_parser("metrics", help="evaluate a prediction against a reference")
    m.add_argument("--pred", required=True)
    m.add_argument("--ref", required=True)
    m.add_argument("--variants", default="clDice,cbDice")
    m.add_argument("--tol", type=float, default=1.0)
    m.add_argument("--groups", action="append", default=None,
                   help="named class groups, e.g. L:1,2;S:3")
    m.add_argument("--out", default=None)
    m.add_argument("--format", choices=("json", "csv"), default="json")
    m.set_defaults(func=cmd_metrics)

    ph = sub.add_parser("phantom", help="rasterize a synthetic phantom")
    ph.add_argument("--kind", required=True,
                    choices=("tube", "ybranch", "ring", "multi_tube"))
    ph.add_argument("--dims", required=True, help="e.g. 48x24 or 32x32x32")
    ph.add_argument("--radii", default="3", help="comma-separated radii")
    ph.add_argument("--radius", dest="radii", help="alias for --radii")
    ph.add_argument("--lengths", default="16")
    ph.add_argument("--length", dest="lengths", help="alias for --lengths")
    ph.add_argument("--orientation", type=int, default=0)
    ph.add_argument("--seed", type=int, default=0)
    ph.add_argument("--out", required=True)
    ph.set_defaults(func=cmd_phantom)

    ex = sub.add_parser("experiment", help="run a named sensitivity sweep")
    ex.add_argument("--name", required=True, choices=phantoms.EXPERIMENTS)
    ex.add_argument("--out", default=None)
    ex.set_defaults(func=cmd_experiment)

    gc = sub.add_parser("gradcheck", help="verify analytic gradients")
    gc.add_argument("--loss", default="cbDice",
                    help="dice, combined, or a cl-X-Dice variant name")
    gc.add_argument("--variant", default="cbDice",
                    help="variant for the combined loss")
    gc.add_argument("--alpha", type=float, default=1.0)
    gc.add_argument("--beta", type=float, default=1.0)
    gc.add_argument("--eps", type=float, default=1e-4)
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--dim", type=int, choices=(2, 3), default=2)
    gc.add_argument("--probes", type=int, default=24)
    gc.add_argument("--out", default=None)
    gc.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, grid.GridError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - map anything else to exit 3
        print(f"internal error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
