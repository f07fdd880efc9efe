"""Skeletons, exact Euclidean distance transforms, and radius fields.

Distances are measured in voxel units (spacing is ignored here): a
foreground element adjacent to background has distance exactly 1, so the
clamped distance map ranges over [1, r_max] on the foreground.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage.morphology import skeletonize as _sk_skeletonize

from .grid import BinaryField, GridError, ScalarField


def edt(mask: BinaryField) -> ScalarField:
    """Exact Euclidean distance to the nearest background element.

    Background elements are 0. A grid with no background at all measures
    distance to the virtual background just outside the grid.
    """
    fg = mask.values.astype(bool)
    if not fg.any():
        return ScalarField(mask.shape, np.zeros_like(fg, dtype=np.float64))
    if fg.all():
        grids = np.indices(fg.shape)
        dist = np.full(fg.shape, np.inf)
        for axis, idx in enumerate(grids):
            n = fg.shape[axis]
            dist = np.minimum(dist, np.minimum(idx + 1, n - idx))
        return ScalarField(mask.shape, dist)
    return ScalarField(mask.shape, ndimage.distance_transform_edt(fg))


def skeletonize(mask: BinaryField) -> BinaryField:
    """Topology-preserving thinning to a 1-element-wide skeleton."""
    fg = mask.values.astype(bool)
    if not fg.any():
        return BinaryField(mask.shape, np.zeros_like(mask.values))
    return BinaryField(mask.shape, _sk_skeletonize(fg).astype(np.uint8))


@dataclass(frozen=True)
class SkeletonBundle:
    """A mask with its skeleton and derived distance/radius fields.

    dist is the clamped distance map on the mask, radius its restriction to
    the skeleton, inv_radius the elementwise reciprocal on the skeleton.
    """

    mask: BinaryField
    skeleton: BinaryField
    dist: ScalarField
    radius: ScalarField
    inv_radius: ScalarField
    r_max: float
    i_min: float


def build_bundle(mask: BinaryField, r_max_override: float = None,
                 skeleton: BinaryField = None) -> SkeletonBundle:
    """Derive skeleton and radius fields from a mask.

    r_max defaults to the maximum skeletal radius; pass ``r_max_override``
    to normalize prediction and reference on one joint scale. A precomputed
    ``skeleton`` (e.g. an analytically known centerline) may be supplied;
    it must be a subset of the mask.
    """
    d = edt(mask).values
    if skeleton is None:
        skeleton = skeletonize(mask)
    else:
        if (skeleton.values & ~mask.values & 1).any():
            raise GridError("supplied skeleton is not a subset of the mask")
    skel = skeleton.values.astype(bool)
    raw_radius = np.where(skel, d, 0.0)
    if r_max_override is not None:
        if r_max_override <= 0:
            raise GridError("r_max_override must be positive")
        r_max = float(r_max_override)
    elif skel.any():
        r_max = float(raw_radius.max())
    else:
        r_max = 1.0  # empty skeleton: derived fields are empty anyway
    dist = np.minimum(d, r_max)
    radius = np.where(skel, dist, 0.0)
    with np.errstate(divide="ignore"):
        inv_radius = np.where(skel, 1.0 / np.maximum(radius, 1e-300), 0.0)
    return SkeletonBundle(
        mask=mask,
        skeleton=skeleton,
        dist=ScalarField(mask.shape, dist),
        radius=ScalarField(mask.shape, radius),
        inv_radius=ScalarField(mask.shape, inv_radius),
        r_max=r_max,
        i_min=1.0 / r_max,
    )


def normalized_fields(bundle: SkeletonBundle):
    """(R_N, I_N, D_N): radius, inverse radius, and distances on a unit scale."""
    shape = bundle.mask.shape
    r_n = ScalarField(shape, bundle.radius.values / bundle.r_max)
    i_n = ScalarField(shape, bundle.inv_radius.values / bundle.i_min)
    d_n = ScalarField(shape, bundle.dist.values / bundle.r_max)
    return r_n, i_n, d_n


def build_joint_bundles(pred_mask: BinaryField, ref_mask: BinaryField,
                        pred_skeleton: BinaryField = None,
                        ref_skeleton: BinaryField = None):
    """Build prediction and reference bundles sharing one r_max scale."""
    raw_p = build_bundle(pred_mask, skeleton=pred_skeleton)
    raw_l = build_bundle(ref_mask, skeleton=ref_skeleton)
    r_max = max(raw_p.r_max, raw_l.r_max)
    pred = build_bundle(pred_mask, r_max_override=r_max,
                        skeleton=raw_p.skeleton)
    ref = build_bundle(ref_mask, r_max_override=r_max,
                       skeleton=raw_l.skeleton)
    return pred, ref
