"""Centerline-boundary Dice metrics, differentiable losses, and phantoms."""

from .grid import (
    BinaryField,
    GridError,
    GridShape,
    LabelGrid,
    ScalarField,
    binarize,
    read_pgm,
    read_vgrid,
    write_vgrid,
)
from .morphology import (
    SkeletonBundle,
    build_bundle,
    build_joint_bundles,
    edt,
    normalized_fields,
    skeletonize,
)
from .metrics import (
    MetricReport,
    VariantSpec,
    betti_err,
    betti_numbers,
    cl_dice,
    cl_x_dice,
    dice,
    evaluate,
    nsd,
)
from .softloss import (
    CombinedLossSpec,
    ProbField,
    combined_loss,
    cross_entropy,
    grad_check,
    soft_cl_x_loss,
    soft_dice_loss,
    soft_skeleton,
)
from .phantoms import PhantomSpec, delete_branch, generate, scale, sweep, translate

__version__ = "0.1.0"
