"""Differentiable losses: soft skeletonization, soft cl-X-Dice, combined loss.

The prediction-side skeleton is the iterative min/max-pooling soft skeleton;
distance and radius values for the prediction come from the 0.5-thresholded
probabilities and are treated as per-step constants (the exact EDT is not
differentiable). Gradients are exact with respect to the probability field
through the soft skeleton and the probability terms, computed with torch
autograd in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .grid import BinaryField, GridError, GridShape, same_shape
from .morphology import SkeletonBundle, build_bundle, normalized_fields
from .metrics import VariantSpec

CE_CLAMP = 1e-7


@dataclass(frozen=True)
class ProbField:
    """Per-class foreground probabilities in [0,1] on a grid."""

    shape: GridShape
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape == (self.shape.size,):
            values = values.reshape(self.shape.array_shape)
        if values.shape != self.shape.array_shape:
            raise GridError(
                f"values shape {values.shape} does not match grid "
                f"{self.shape.array_shape}")
        values = np.clip(values, 0.0, 1.0)
        values = np.ascontiguousarray(values)
        values.flags.writeable = False
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class CombinedLossSpec:
    """Weights and variant for the combined CE + Dice + cl-X-Dice loss."""

    alpha: float = 1.0
    beta: float = 1.0
    variant: str = "cbDice"
    soft_skel_iters: int = 0  # 0: default to ceil(reference r_max)

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise GridError("alpha and beta must be nonnegative")
        if self.variant == "none" and self.beta > 0:
            raise GridError("beta > 0 requires a cl-X-Dice variant")


def _pool(x, kernel):
    pad = tuple(k // 2 for k in kernel)
    if x.ndim == 4:
        return F.max_pool2d(F.pad(x, (pad[1], pad[1], pad[0], pad[0])),
                            kernel, stride=1)
    return F.max_pool3d(
        F.pad(x, (pad[2], pad[2], pad[1], pad[1], pad[0], pad[0])),
        kernel, stride=1)


def _soft_erode(x):
    """Min over the face-adjacent (plus-shaped) neighborhood; outside is 0."""
    parts = []
    nd = x.ndim - 2
    for axis in range(nd):
        kernel = [1] * nd
        kernel[axis] = 3
        parts.append(-_pool(-x, tuple(kernel)))
    out = parts[0]
    for p in parts[1:]:
        out = torch.minimum(out, p)
    return out


def _soft_dilate(x):
    """Max over the full (box) neighborhood; outside is 0."""
    nd = x.ndim - 2
    return _pool(x, (3,) * nd)


def _soft_open(x):
    return _soft_dilate(_soft_erode(x))


def _soft_skeleton_t(x, iters):
    skel = F.relu(x - _soft_open(x))
    img = x
    for _ in range(iters):
        img = _soft_erode(img)
        delta = F.relu(img - _soft_open(img))
        skel = skel + F.relu(delta - skel * delta)
    return skel


def _as_tensor(values, requires_grad=False):
    t = torch.tensor(np.asarray(values, dtype=np.float64))
    t = t.reshape((1, 1) + t.shape)
    if requires_grad:
        t.requires_grad_(True)
    return t


def _from_tensor(t):
    return t.detach().numpy().reshape(t.shape[2:])


def soft_skeleton(p: ProbField, iters: int) -> ProbField:
    """Differentiable medial-axis field via iterated soft erosion/opening."""
    if iters < 1:
        raise GridError(f"iters must be positive, got {iters}")
    t = _as_tensor(p.values)
    return ProbField(p.shape, _from_tensor(_soft_skeleton_t(t, iters)))


def _soft_dice_t(pt, gt):
    total = pt.sum() + gt.sum()
    if total.item() == 0.0:
        return pt.sum() * 0.0  # both empty: perfect agreement
    return 1.0 - 2.0 * (pt * gt).sum() / total


def _run(loss_builder, p: ProbField, return_grad):
    pt = _as_tensor(p.values, requires_grad=return_grad)
    loss = loss_builder(pt)
    if not return_grad:
        return float(loss.item())
    if loss.requires_grad:
        loss.backward()
        grad = _from_tensor(pt.grad)
    else:
        grad = np.zeros(p.shape.array_shape)
    return float(loss.item()), grad


def soft_dice_loss(p: ProbField, ref: BinaryField, return_grad=False):
    """1 - soft Dice overlap; 0 iff p equals ref elementwise."""
    same_shape(p, ref)
    gt = _as_tensor(ref.values)
    return _run(lambda pt: _soft_dice_t(pt, gt), p, return_grad)


def _prediction_weight(name, exponent, dist_t, r_max):
    """Skeleton/volume weight from the constant clamped distance map."""
    support = dist_t > 0
    safe = torch.where(support, dist_t, torch.ones_like(dist_t))
    if name == "S":
        return torch.ones_like(dist_t)
    if name == "R":
        w = safe
    elif name == "I":
        w = 1.0 / safe
    elif name == "RN":
        w = safe / r_max
    elif name == "IN":
        w = r_max / safe
    elif name == "D":
        w = safe
    elif name == "DN":
        w = safe / r_max
    else:  # V
        return torch.ones_like(dist_t)
    w = torch.where(support, w, torch.zeros_like(w))
    return w ** exponent if exponent != 1 else w


def _ref_field(bundle, name, exponent):
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
    return _as_tensor(arr if exponent == 1 else arr ** exponent)


def _ratio_t(num, den):
    if den.item() == 0.0:
        return num * 0.0 + (1.0 if num.item() == 0.0 else 0.0)
    return num / den


def _soft_cl_x_t(spec, pt, pred_bundle, ref_bundle, iters):
    """1 - soft cl-X-Dice given constant bundles and a differentiable p."""
    s_soft = _soft_skeleton_t(pt, iters)
    dist_p = _as_tensor(pred_bundle.dist.values)
    r_max = pred_bundle.r_max

    def pred_side(slot):
        name, exponent = spec.recipe[slot]
        w = _prediction_weight(name, exponent, dist_p, r_max)
        if name in ("V", "D", "DN"):
            return w * pt  # volume fields ride on p itself
        return w * s_soft  # skeleton fields ride on the soft skeleton

    q_sp = pred_side("sp")
    q_vp = pred_side("vp")
    q_spvp = pred_side("spvp")
    q_sl = _ref_field(ref_bundle, *spec.recipe["sl"])
    q_vl = _ref_field(ref_bundle, *spec.recipe["vl"])
    q_slvl = _ref_field(ref_bundle, *spec.recipe["slvl"])
    not_s_l = _as_tensor(1.0 - ref_bundle.skeleton.values.astype(np.float64))

    tprec = _ratio_t((q_sp * q_vl).sum(),
                     (q_sp * q_spvp * not_s_l).sum() + (q_sp * q_slvl).sum())
    tsens = _ratio_t((q_sl * q_vp).sum(),
                     (q_sl * q_slvl * (1.0 - s_soft)).sum()
                     + (q_sl * q_spvp).sum())
    if (tprec + tsens).item() == 0.0:
        return 1.0 + tprec * 0.0
    return 1.0 - 2.0 * tprec * tsens / (tprec + tsens)


def _prepare_bundles(spec, p, ref, ref_bundle):
    """Threshold p at 0.5 and put both bundles on a joint r_max scale."""
    hard = BinaryField(p.shape, (p.values >= 0.5).astype(np.uint8))
    raw_p = build_bundle(hard)
    ref_skel = ref_bundle.skeleton if ref_bundle is not None else None
    raw_l = build_bundle(ref, skeleton=ref_skel)
    r_max = max(raw_p.r_max, raw_l.r_max)
    pred_b = build_bundle(hard, r_max_override=r_max, skeleton=raw_p.skeleton)
    ref_b = build_bundle(ref, r_max_override=r_max, skeleton=raw_l.skeleton)
    return hard, pred_b, ref_b


def soft_cl_x_loss(spec: VariantSpec, p: ProbField, ref: BinaryField,
                   ref_bundle: SkeletonBundle = None, iters: int = 0,
                   return_grad=False):
    """1 - soft cl-X-Dice, differentiable with respect to p."""
    same_shape(p, ref)
    if spec.dim != p.shape.ndim:
        raise GridError(f"variant built for {spec.dim}D applied to "
                        f"{p.shape.ndim}D fields")
    hard, pred_b, ref_b = _prepare_bundles(spec, p, ref, ref_bundle)
    pred_empty = not hard.values.any()
    ref_empty = not ref.values.any()
    if pred_empty or ref_empty:
        value = 0.0 if (pred_empty and ref_empty) else 1.0
        if return_grad:
            return value, np.zeros(p.shape.array_shape)
        return value
    if iters < 1:
        iters = max(1, math.ceil(ref_b.r_max))
    return _run(lambda pt: _soft_cl_x_t(spec, pt, pred_b, ref_b, iters),
                p, return_grad)


def _ce_t(pt, gt):
    q = torch.clamp(pt, CE_CLAMP, 1.0 - CE_CLAMP)
    return -(gt * torch.log(q) + (1.0 - gt) * torch.log(1.0 - q)).mean()


def cross_entropy(p: ProbField, ref: BinaryField, return_grad=False):
    """Binary cross-entropy with probabilities clamped away from {0,1}."""
    same_shape(p, ref)
    gt = _as_tensor(ref.values)
    return _run(lambda pt: _ce_t(pt, gt), p, return_grad)


def combined_loss(spec: CombinedLossSpec, p: ProbField, ref: BinaryField,
                  return_grad=False):
    """0.5*CE + a/(2(a+b))*softDice + b/(2(a+b))*softX; pure CE when a=b=0."""
    same_shape(p, ref)
    gt = _as_tensor(ref.values)
    total = spec.alpha + spec.beta
    w_dice = spec.alpha / (2.0 * total) if total > 0 else 0.0
    w_x = spec.beta / (2.0 * total) if total > 0 else 0.0

    use_x = w_x > 0 and spec.variant != "none"
    if use_x:
        vspec = VariantSpec(spec.variant, p.shape.ndim)
        hard, pred_b, ref_b = _prepare_bundles(vspec, p, ref, None)
        pred_empty = not hard.values.any()
        ref_empty = not ref.values.any()
        iters = spec.soft_skel_iters or max(1, math.ceil(ref_b.r_max))

    def build(pt):
        loss = 0.5 * _ce_t(pt, gt)
        if w_dice > 0:
            loss = loss + w_dice * _soft_dice_t(pt, gt)
        if use_x:
            if pred_empty or ref_empty:
                x_term = 0.0 if (pred_empty and ref_empty) else 1.0
                loss = loss + w_x * x_term
            else:
                loss = loss + w_x * _soft_cl_x_t(vspec, pt, pred_b, ref_b, iters)
        return loss

    return _run(build, p, return_grad)


def grad_check(loss, p: ProbField, eps: float = 1e-4,
               num_probes: int = 32, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss`` maps a probability array to (value, gradient). Probes are drawn
    at elements strictly inside (0,1) so central differences stay in-domain.
    The losses are piecewise smooth (relu/min/max kinks in the soft
    skeleton), so a probe whose difference quotient is not stable under
    halving eps straddles a kink and is discarded; for smooth stretches the
    two quotients agree to O(eps^2), far below the rejection threshold.
    """
    base = np.array(p.values)
    _, grad = loss(base)
    interior = np.argwhere((base > eps) & (base < 1.0 - eps))
    if interior.size == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    if len(interior) > num_probes:
        interior = interior[rng.choice(len(interior), num_probes, replace=False)]

    def central_diff(idx, step):
        plus = np.array(base)
        plus[idx] += step
        minus = np.array(base)
        minus[idx] -= step
        f_plus, _ = loss(plus)
        f_minus, _ = loss(minus)
        return (f_plus - f_minus) / (2.0 * step)

    worst = 0.0
    for idx in interior:
        idx = tuple(idx)
        cd = central_diff(idx, eps)
        cd_half = central_diff(idx, eps / 2.0)
        if abs(cd - cd_half) > 1e-4 * max(abs(cd), abs(cd_half), 1.0):
            continue  # nondifferentiable within the probe window
        an = grad[idx]
        rel = abs(an - cd) / max(abs(an), abs(cd), 1e-8)
        worst = max(worst, rel)
    return worst
