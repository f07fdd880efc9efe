"""Deterministic synthetic vessel phantoms and perturbation sweeps.

Rasterization rule: an element belongs to a tube when its center lies at
Euclidean distance strictly less than the radius from the centerline
segment (capsule test). For an axis-aligned tube with integer radius r the
clamped distance map then peaks at exactly r on the centerline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import BinaryField, GridError, GridShape
from .metrics import VariantSpec, cl_dice, cl_x_dice, dice
from .morphology import build_joint_bundles

MARGIN = 2  # background voxels required around every phantom


class PhantomError(GridError):
    """Invalid phantom specification or a phantom exceeding its grid."""


@dataclass(frozen=True)
class PhantomSpec:
    """Geometry of one synthetic phantom.

    kind:        tube | ybranch | ring | multi_tube
    dims:        grid dims (w, h[, d])
    radii:       per-branch radii; ring uses (inner, outer)
    lengths:     centerline lengths; ybranch uses (trunk, arm)
    orientation: axis index of the tube direction (0 = x)
    seed:        reserved for jittered variants
    """

    kind: str
    dims: tuple
    radii: tuple = (3.0,)
    lengths: tuple = (16.0,)
    orientation: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("tube", "ybranch", "ring", "multi_tube"):
            raise PhantomError(f"unknown phantom kind {self.kind!r}")
        object.__setattr__(self, "dims", tuple(int(v) for v in self.dims))
        object.__setattr__(self, "radii", tuple(float(r) for r in self.radii))
        object.__setattr__(self, "lengths", tuple(float(v) for v in self.lengths))
        if any(r <= 0 for r in self.radii):
            raise PhantomError("radii must be positive")
        if not 0 <= self.orientation < len(self.dims):
            raise PhantomError(f"orientation {self.orientation} out of range")
        if self.kind in ("ybranch", "ring") and len(self.dims) != 2:
            raise PhantomError(f"{self.kind} phantoms are 2D")
        if self.kind == "ybranch" and len(self.radii) < 2:
            raise PhantomError("ybranch needs two arm radii")

    @property
    def shape(self):
        return GridShape(self.dims)


def _center(dims):
    return np.array([(n - 1) / 2.0 for n in dims])


def _segments(spec: PhantomSpec):
    """Centerline segments as (p0, p1, radius) in (x, y[, z]) coordinates."""
    dims = np.array(spec.dims, dtype=float)
    c = _center(spec.dims)
    axis = spec.orientation
    if spec.kind == "tube":
        half = spec.lengths[0] / 2.0
        p0, p1 = c.copy(), c.copy()
        p0[axis] -= half
        p1[axis] += half
        return [(p0, p1, spec.radii[0])]
    if spec.kind == "multi_tube":
        n = len(spec.radii)
        perp = (axis + 1) % len(spec.dims)
        offsets = (np.arange(n) - (n - 1) / 2.0) * (dims[perp] / n)
        segs = []
        for i, (r, off) in enumerate(zip(spec.radii, offsets)):
            half = spec.lengths[i if i < len(spec.lengths) else -1] / 2.0
            p0, p1 = c.copy(), c.copy()
            p0[axis] -= half
            p1[axis] += half
            p0[perp] += off
            p1[perp] += off
            segs.append((p0, p1, r))
        return segs
    if spec.kind == "ybranch":
        if len(spec.dims) != 2:
            raise PhantomError("ybranch phantoms are 2D")
        if len(spec.radii) < 2:
            raise PhantomError("ybranch needs two arm radii")
        r1, r2 = spec.radii[0], spec.radii[1]
        trunk_r = 0.5 * max(r1, r2)
        trunk_len = spec.lengths[0]
        arm_len = spec.lengths[min(len(spec.lengths) - 1, 1)]
        junction = c.copy()
        foot = junction + np.array([0.0, trunk_len])
        # arms fork at 30 degrees from the trunk axis
        ax, ay = arm_len * 0.5, arm_len * (np.sqrt(3.0) / 2.0)
        arm1 = junction + np.array([-ax, -ay])
        arm2 = junction + np.array([ax, -ay])
        return [(foot, junction, trunk_r),
                (junction, arm1, r1),
                (junction, arm2, r2)]
    raise PhantomError(f"kind {spec.kind!r} has no centerline segments")


def _dist_to_segment(coords, p0, p1):
    """Per-voxel Euclidean distance from element centers to a segment."""
    d = p1 - p0
    dd = float(d @ d)
    diff = coords - p0
    if dd == 0.0:
        return np.sqrt((diff ** 2).sum(axis=-1))
    t = np.clip((diff @ d) / dd, 0.0, 1.0)
    proj = p0 + t[..., None] * d
    return np.sqrt(((coords - proj) ** 2).sum(axis=-1))


def _voxel_centers(dims):
    """(…, ndim) array of element centers in (x, y[, z]) order."""
    grids = np.indices(tuple(reversed(dims)), dtype=float)
    return np.stack(list(reversed(grids)), axis=-1)


def _check_margin(fg, dims):
    if not fg.any():
        return
    idx = np.nonzero(fg)
    for axis_rev, coords in enumerate(idx):
        n = fg.shape[axis_rev]
        if coords.min() < MARGIN or coords.max() > n - 1 - MARGIN:
            raise PhantomError(
                f"phantom does not fit in dims {dims} with a {MARGIN}-voxel margin")


def generate(spec: PhantomSpec) -> BinaryField:
    """Rasterize a phantom mask; deterministic for a given spec."""
    coords = _voxel_centers(spec.dims)
    if spec.kind == "ring":
        if len(spec.dims) != 2:
            raise PhantomError("ring phantoms are 2D")
        inner, outer = spec.radii[0], spec.radii[-1]
        if inner >= outer:
            raise PhantomError("ring needs inner radius < outer radius")
        d = np.sqrt(((coords - _center(spec.dims)) ** 2).sum(axis=-1))
        fg = (d < outer) & ~(d < inner)
    else:
        fg = np.zeros(tuple(reversed(spec.dims)), dtype=bool)
        for p0, p1, r in _segments(spec):
            fg |= _dist_to_segment(coords, p0, p1) < r
    _check_margin(fg, spec.dims)
    return BinaryField(spec.shape, fg.astype(np.uint8))


def centerline(spec: PhantomSpec, branch_id: int = None) -> BinaryField:
    """Rasterized centerline voxels (all branches, or one branch)."""
    segs = _segments(spec)
    if branch_id is not None:
        if not 0 <= branch_id < len(segs):
            raise PhantomError(f"unknown branch id {branch_id}")
        segs = [segs[branch_id]]
    fg = np.zeros(tuple(reversed(spec.dims)), dtype=bool)
    for p0, p1, _ in segs:
        steps = max(1, int(np.ceil(np.abs(p1 - p0).max() * 2)))
        for t in np.linspace(0.0, 1.0, steps + 1):
            pt = np.rint(p0 + t * (p1 - p0)).astype(int)
            fg[tuple(reversed(pt))] = True
    return BinaryField(spec.shape, fg.astype(np.uint8))


def translate(mask: BinaryField, offset_voxels) -> BinaryField:
    """Lattice shift with zero fill; foreground must stay inside the grid."""
    offset = tuple(int(v) for v in offset_voxels)
    if len(offset) != mask.shape.ndim:
        raise PhantomError(f"offset {offset} has wrong dimensionality")
    fg = mask.values.astype(bool)
    out = np.zeros_like(fg)
    src = []
    dst = []
    for axis_rev, n in enumerate(fg.shape):
        shift = offset[mask.shape.ndim - 1 - axis_rev]
        src.append(slice(max(0, -shift), min(n, n - shift)))
        dst.append(slice(max(0, shift), min(n, n + shift)))
    out[tuple(dst)] = fg[tuple(src)]
    if out.sum() != fg.sum():
        raise PhantomError(f"translation {offset} pushes foreground off-grid")
    return BinaryField(mask.shape, out.astype(np.uint8))


def scale(mask: BinaryField, factor: float) -> BinaryField:
    """Nearest-neighbor rescaling about the grid center; keeps masks binary."""
    if factor <= 0:
        raise PhantomError(f"scale factor must be > 0, got {factor}")
    fg = mask.values.astype(bool)
    out = np.zeros_like(fg)
    centers = [(n - 1) / 2.0 for n in fg.shape]
    grids = np.indices(fg.shape, dtype=float)
    src_idx = []
    valid = np.ones(fg.shape, dtype=bool)
    for axis, (idx, c) in enumerate(zip(grids, centers)):
        src = np.floor(c + (idx - c) / factor + 0.5).astype(int)
        valid &= (src >= 0) & (src < fg.shape[axis])
        src_idx.append(np.clip(src, 0, fg.shape[axis] - 1))
    out[valid] = fg[tuple(src_idx)][valid]
    return BinaryField(mask.shape, out.astype(np.uint8))


def delete_branch(spec: PhantomSpec, mask: BinaryField, branch_id: int) -> BinaryField:
    """Mask minus the named branch's rasterization; the junction is kept."""
    segs = _segments(spec)
    if not 0 <= branch_id < len(segs):
        raise PhantomError(f"unknown branch id {branch_id}")
    coords = _voxel_centers(spec.dims)
    keep = np.zeros(tuple(reversed(spec.dims)), dtype=bool)
    for i, (p0, p1, r) in enumerate(segs):
        if i != branch_id:
            keep |= _dist_to_segment(coords, p0, p1) < r
    return BinaryField(mask.shape, (mask.values.astype(bool) & keep).astype(np.uint8))


EXPERIMENTS = ("translation", "scaling", "imbalance")
SCALING_FACTORS = (0.5, 0.75, 1.0, 1.25, 1.5)


def _scores(pred: BinaryField, ref: BinaryField):
    """Dice, clDice, cl-M-D, cbDice, and the two paired scores."""
    bund_p, bund_l = build_joint_bundles(pred, ref)
    dim = ref.shape.ndim
    out = {
        "dice": dice(pred, ref),
        "clDice": cl_dice(bund_p, bund_l),
        "cl-M-D": cl_x_dice(VariantSpec("cl-M-D", dim), bund_p, bund_l),
        "cbDice": cl_x_dice(VariantSpec("cbDice", dim), bund_p, bund_l),
    }
    out["dice_clDice_pair"] = 0.5 * out["dice"] + 0.5 * out["clDice"]
    out["dice_cbDice_pair"] = 0.5 * out["dice"] + 0.5 * out["cbDice"]
    return out


def translation_phantom() -> PhantomSpec:
    return PhantomSpec("tube", dims=(48, 24), radii=(4.0,), lengths=(28.0,))


def imbalance_phantom() -> PhantomSpec:
    return PhantomSpec("ybranch", dims=(81, 97), radii=(1.0, 4.0),
                       lengths=(20.0, 18.0))


def sweep(experiment: str):
    """Rows (param, metric, value) for one named sensitivity sweep."""
    rows = []
    if experiment == "translation":
        spec = translation_phantom()
        ref = generate(spec)
        for t in range(int(spec.radii[0])):
            pred = translate(ref, (0, t))
            for metric, value in _scores(pred, ref).items():
                rows.append((str(t), metric, value))
    elif experiment == "scaling":
        spec = translation_phantom()
        ref = generate(spec)
        for f in SCALING_FACTORS:
            pred = scale(ref, f)
            for metric, value in _scores(pred, ref).items():
                rows.append((f"{f:g}", metric, value))
    elif experiment == "imbalance":
        spec = imbalance_phantom()
        ref = generate(spec)
        thin, thick = (1, 2) if spec.radii[0] <= spec.radii[1] else (2, 1)
        cases = [("full", ref),
                 ("del_thin", delete_branch(spec, ref, thin)),
                 ("del_thick", delete_branch(spec, ref, thick))]
        for param, pred in cases:
            for metric, value in _scores(pred, ref).items():
                rows.append((param, metric, value))
    else:
        raise PhantomError(f"unknown experiment {experiment!r}")
    return rows


def write_sweep_csv(rows, path) -> None:
    """CSV with header param,metric,value, LF endings, 6 significant digits."""
    with open(path, "w", newline="\n") as fh:
        fh.write("param,metric,value\n")
        for param, metric, value in rows:
            fh.write(f"{param},{metric},{value:.6g}\n")
