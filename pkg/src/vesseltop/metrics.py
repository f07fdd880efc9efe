"""Hard evaluation metrics: Dice, the cl-X-Dice family, Betti errors, NSD.

Set intersections over mixed binary/scalar fields are realized as grid sums
of elementwise products; the all-ones field U is the constant 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .grid import BinaryField, GridError, LabelGrid, binarize, same_shape
from .morphology import SkeletonBundle, build_joint_bundles, normalized_fields

# Q-field recipes, one column per variant. Each slot names a field and
# whether the skeleton-weight exponent (1 in 2D, 2 in 3D) applies to it.
# Slots: sl/sp are the skeleton weights, vl/vp the volume fields, and
# slvl/spvp the products of skeleton and volume fields on each side.
_RECIPES = {
    "cl-D":    {"sl": "S",   "sp": "S",   "vl": "V",   "vp": "V",   "slvl": "S",   "spvp": "S"},
    "cl-S-D":  {"sl": "R^e", "sp": "R^e", "vl": "V",   "vp": "V",   "slvl": "S",   "spvp": "S"},
    "cl-M-D":  {"sl": "S",   "sp": "S",   "vl": "D",   "vp": "D",   "slvl": "R",   "spvp": "R"},
    "cl-MS-D": {"sl": "R^e", "sp": "R^e", "vl": "D",   "vp": "D",   "slvl": "R",   "spvp": "R"},
    "cl-MI-D": {"sl": "I^e", "sp": "I^e", "vl": "D",   "vp": "D",   "slvl": "R",   "spvp": "R"},
    "cl-MSN-D": {"sl": "RN^e", "sp": "RN^e", "vl": "DN", "vp": "DN", "slvl": "RN", "spvp": "RN"},
    "cl-MIN-D": {"sl": "IN^e", "sp": "IN^e", "vl": "DN", "vp": "DN", "slvl": "RN", "spvp": "RN"},
}

VARIANT_ALIASES = {"cbDice": "cl-MIN-D", "cb-D": "cl-MIN-D", "clDice": "cl-D"}
VARIANT_NAMES = tuple(_RECIPES)

_NORMALIZED_FIELDS = {"RN", "IN", "DN"}


@dataclass(frozen=True)
class VariantSpec:
    """One cl-X-Dice recipe: six Q-field selectors for a name and dimension."""

    name: str
    dim: int
    recipe: dict = field(default=None)

    def __post_init__(self):
        canonical = VARIANT_ALIASES.get(self.name, self.name)
        if canonical not in _RECIPES:
            raise GridError(f"unknown variant {self.name!r}")
        if self.dim not in (2, 3):
            raise GridError(f"dim must be 2 or 3, got {self.dim}")
        exponent = 1 if self.dim == 2 else 2
        recipe = {}
        for slot, token in _RECIPES[canonical].items():
            if token.endswith("^e"):
                recipe[slot] = (token[:-2], exponent)
            else:
                recipe[slot] = (token, 1)
        object.__setattr__(self, "recipe", recipe)

    @property
    def canonical_name(self):
        return VARIANT_ALIASES.get(self.name, self.name)

    @property
    def uses_normalized(self):
        return any(f in _NORMALIZED_FIELDS for f, _ in self.recipe.values())


def _bundle_field(bundle: SkeletonBundle, name: str, exponent: int):
    if name == "S":
        arr = bundle.skeleton.values.astype(np.float64)
    elif name == "V":
        arr = bundle.mask.values.astype(np.float64)
    elif name == "D":
        arr = bundle.dist.values
    elif name == "R":
        arr = bundle.radius.values
    elif name == "I":
        arr = bundle.inv_radius.values
    else:
        r_n, i_n, d_n = normalized_fields(bundle)
        arr = {"RN": r_n, "IN": i_n, "DN": d_n}[name].values
    return arr if exponent == 1 else arr ** exponent


def _ratio(num: float, den: float) -> float:
    """0/0 is vacuously 1; x/0 with x > 0 is capped to 0."""
    if den == 0.0:
        return 1.0 if num == 0.0 else 0.0
    return num / den


def _harmonic(tprec: float, tsens: float) -> float:
    if tprec + tsens == 0.0:
        return 0.0
    return 2.0 * tprec * tsens / (tprec + tsens)


def dice(pred: BinaryField, ref: BinaryField) -> float:
    """Classical Dice overlap; 1 when both masks are empty."""
    same_shape(pred, ref)
    p = pred.values.astype(bool)
    l = ref.values.astype(bool)
    total = int(p.sum()) + int(l.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((p & l).sum()) / total


def _empty_convention(pred_mask, ref_mask):
    """Shared convention: an empty side scores 0 unless both are empty."""
    pe = not pred_mask.values.any()
    le = not ref_mask.values.any()
    if pe or le:
        return 1.0 if (pe and le) else 0.0
    return None


def cl_dice(pred_bundle: SkeletonBundle, ref_bundle: SkeletonBundle) -> float:
    """Harmonic mean of topology precision and sensitivity."""
    same_shape(pred_bundle.mask, ref_bundle.mask)
    fixed = _empty_convention(pred_bundle.mask, ref_bundle.mask)
    if fixed is not None:
        return fixed
    s_p = pred_bundle.skeleton.values.astype(bool)
    s_l = ref_bundle.skeleton.values.astype(bool)
    v_p = pred_bundle.mask.values.astype(bool)
    v_l = ref_bundle.mask.values.astype(bool)
    tprec = _ratio(int((s_p & v_l).sum()), int(s_p.sum()))
    tsens = _ratio(int((s_l & v_p).sum()), int(s_l.sum()))
    return _harmonic(tprec, tsens)


def cl_x_dice(spec: VariantSpec, pred_bundle: SkeletonBundle,
              ref_bundle: SkeletonBundle) -> float:
    """Generalized cl-X-Dice via the six Q-field recipe."""
    same_shape(pred_bundle.mask, ref_bundle.mask)
    if spec.dim != pred_bundle.mask.shape.ndim:
        raise GridError(
            f"variant built for {spec.dim}D applied to "
            f"{pred_bundle.mask.shape.ndim}D fields")
    if spec.uses_normalized and pred_bundle.r_max != ref_bundle.r_max:
        raise GridError(
            "normalized variant requires bundles built with a shared r_max "
            f"(got {pred_bundle.r_max} vs {ref_bundle.r_max})")
    fixed = _empty_convention(pred_bundle.mask, ref_bundle.mask)
    if fixed is not None:
        return fixed

    def side(bundle, slot):
        return _bundle_field(bundle, *spec.recipe[slot])

    q_sp = side(pred_bundle, "sp")
    q_sl = side(ref_bundle, "sl")
    q_vl = side(ref_bundle, "vl")
    q_vp = side(pred_bundle, "vp")
    q_slvl = side(ref_bundle, "slvl")
    q_spvp = side(pred_bundle, "spvp")
    not_s_l = 1.0 - ref_bundle.skeleton.values
    not_s_p = 1.0 - pred_bundle.skeleton.values

    tprec = _ratio(float((q_sp * q_vl).sum()),
                   float((q_sp * q_spvp * not_s_l).sum())
                   + float((q_sp * q_slvl).sum()))
    tsens = _ratio(float((q_sl * q_vp).sum()),
                   float((q_sl * q_slvl * not_s_p).sum())
                   + float((q_sl * q_spvp).sum()))
    return _harmonic(tprec, tsens)


def _euler_characteristic(fg: np.ndarray) -> int:
    """Euler characteristic of the closed cubical complex of a voxel set."""
    counts = []
    ndim = fg.ndim
    for cell_axes in range(1 << ndim):
        # cell spans axis i iff bit i is set; incident voxels are reached by
        # an OR over the non-spanned axes.
        arr = fg
        for axis in range(ndim):
            if not cell_axes & (1 << axis):
                pad = [(0, 0)] * ndim
                pad[axis] = (1, 1)
                padded = np.pad(arr, pad, constant_values=False)
                lo = [slice(None)] * ndim
                hi = [slice(None)] * ndim
                lo[axis] = slice(0, padded.shape[axis] - 1)
                hi[axis] = slice(1, padded.shape[axis])
                arr = padded[tuple(lo)] | padded[tuple(hi)]
        span = bin(cell_axes).count("1")
        counts.append((-1) ** span * int(arr.sum()))
    # span 0 cells are vertices, span = ndim are the voxels themselves
    return sum(counts)


def betti_numbers(mask: BinaryField):
    """(b0, b1) in 2D or (b0, b1, b2) in 3D for the foreground.

    Foreground uses 8/26-connectivity, background 4/6-connectivity; 3D b1
    comes from the Euler characteristic of the cubical complex.
    """
    fg = mask.values.astype(bool)
    ndim = fg.ndim
    full = ndimage.generate_binary_structure(ndim, ndim)
    cross = ndimage.generate_binary_structure(ndim, 1)
    _, b0 = ndimage.label(fg, structure=full)
    bg = np.pad(~fg, 1, constant_values=True)
    _, n_bg = ndimage.label(bg, structure=cross)
    bounded_bg = n_bg - 1  # one component touches the outside
    if ndim == 2:
        return (b0, bounded_bg)
    chi = _euler_characteristic(fg)
    b2 = bounded_bg
    b1 = b0 + b2 - chi
    return (b0, b1, b2)


def betti_err(pred: BinaryField, ref: BinaryField) -> int:
    """Summed absolute Betti number differences."""
    same_shape(pred, ref)
    bp = betti_numbers(pred)
    bl = betti_numbers(ref)
    return int(sum(abs(a - b) for a, b in zip(bp, bl)))


def _boundary(fg: np.ndarray) -> np.ndarray:
    """Foreground elements with a face-adjacent background (grid edge counts)."""
    padded = np.pad(fg, 1, constant_values=False)
    interior = np.ones_like(fg)
    for axis in range(fg.ndim):
        for shift in (-1, 1):
            interior &= np.roll(padded, shift, axis=axis)[
                tuple(slice(1, -1) for _ in range(fg.ndim))]
    return fg & ~interior


def nsd(pred: BinaryField, ref: BinaryField, tol_physical: float = 1.0) -> float:
    """Normalized surface distance at a physical tolerance."""
    same_shape(pred, ref)
    if tol_physical <= 0:
        raise GridError(f"tolerance must be positive, got {tol_physical}")
    fg_p = pred.values.astype(bool)
    fg_l = ref.values.astype(bool)
    bp = _boundary(fg_p)
    bl = _boundary(fg_l)
    n_p, n_l = int(bp.sum()), int(bl.sum())
    if n_p + n_l == 0:
        return 1.0
    spacing = pred.shape.array_spacing
    near = 0
    if n_l:
        d_to_l = ndimage.distance_transform_edt(~bl, sampling=spacing)
        near += int((d_to_l[bp] <= tol_physical).sum())
    if n_p:
        d_to_p = ndimage.distance_transform_edt(~bp, sampling=spacing)
        near += int((d_to_p[bl] <= tol_physical).sum())
    return near / (n_p + n_l)


@dataclass(frozen=True)
class MetricReport:
    """Per-class and aggregated metric values."""

    per_class: dict
    aggregate: dict
    groups: dict
    metadata: dict

    def to_dict(self):
        return {
            "per_class": {str(k): dict(v) for k, v in self.per_class.items()},
            "aggregate": dict(self.aggregate),
            "groups": {k: dict(v) for k, v in self.groups.items()},
            "metadata": dict(self.metadata),
        }


def evaluate(pred: LabelGrid, ref: LabelGrid, variants,
             tol: float = 1.0, class_subsets: dict = None) -> MetricReport:
    """Per-class metrics with joint r_max normalization and group means."""
    same_shape(pred, ref)
    if pred.class_count != ref.class_count:
        raise GridError(
            f"class vocabularies differ: {pred.class_count} vs {ref.class_count}")
    specs = []
    for v in variants:
        if isinstance(v, VariantSpec):
            specs.append(v)
        else:
            specs.append(VariantSpec(v, pred.shape.ndim))
    per_class = {}
    r_max_used = {}
    for class_id in range(1, pred.class_count):
        mask_p = binarize(pred, class_id)
        mask_l = binarize(ref, class_id)
        bund_p, bund_l = build_joint_bundles(mask_p, mask_l)
        row = {"dice": dice(mask_p, mask_l), "clDice": cl_dice(bund_p, bund_l)}
        for spec in specs:
            row[spec.name] = cl_x_dice(spec, bund_p, bund_l)
        row["betti_err"] = betti_err(mask_p, mask_l)
        row["nsd"] = nsd(mask_p, mask_l, tol)
        per_class[class_id] = row
        r_max_used[class_id] = bund_p.r_max
    metric_names = next(iter(per_class.values())).keys() if per_class else []

    def mean_over(ids):
        return {m: float(np.mean([per_class[c][m] for c in ids]))
                for m in metric_names}

    aggregate = mean_over(list(per_class)) if per_class else {}
    groups = {}
    for name, ids in (class_subsets or {}).items():
        unknown = [c for c in ids if c not in per_class]
        if unknown:
            raise GridError(f"group {name!r} names unknown classes {unknown}")
        groups[name] = mean_over(list(ids))
    metadata = {
        "dims": list(pred.shape.dims),
        "spacing": list(pred.shape.spacing),
        "tol": tol,
        "r_max": {str(k): v for k, v in r_max_used.items()},
    }
    return MetricReport(per_class, aggregate, groups, metadata)
