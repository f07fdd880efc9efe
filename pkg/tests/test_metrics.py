import numpy as np
import pytest

from vesseltop.grid import BinaryField, GridError, GridShape, LabelGrid
from vesseltop.metrics import (
    VARIANT_NAMES,
    VariantSpec,
    betti_err,
    betti_numbers,
    cl_dice,
    cl_x_dice,
    dice,
    evaluate,
    nsd,
)
from vesseltop.morphology import build_bundle, build_joint_bundles
from vesseltop.phantoms import PhantomSpec, generate, translate

from oracles import betti_oracle, nsd_oracle, random_blob


def _mask(arr):
    arr = np.asarray(arr, dtype=np.uint8)
    return BinaryField(GridShape(tuple(reversed(arr.shape))), arr)


def _empty(dims=(6, 6)):
    return BinaryField(GridShape(dims), np.zeros(tuple(reversed(dims)), np.uint8))


def test_variant_spec_validation():
    with pytest.raises(GridError):
        VariantSpec("cl-Z-D", 2)
    with pytest.raises(GridError):
        VariantSpec("cl-D", 4)
    spec2 = VariantSpec("cl-MIN-D", 2)
    spec3 = VariantSpec("cl-MIN-D", 3)
    assert spec2.recipe["sl"] == ("IN", 1)
    assert spec3.recipe["sl"] == ("IN", 2)
    assert spec3.recipe["vl"] == ("DN", 1)  # exponent only on skeleton weights
    assert VariantSpec("cbDice", 2).canonical_name == "cl-MIN-D"


def test_dice_basics():
    a = np.zeros((5, 5), dtype=np.uint8)
    a[1:4, 1:4] = 1
    b = np.zeros_like(a)
    b[2:5, 2:5] = 1
    assert dice(_mask(a), _mask(a)) == 1.0
    assert dice(_mask(a), _mask(b)) == pytest.approx(2 * 4 / 18)
    assert dice(_empty(), _empty()) == 1.0
    disjoint = np.zeros_like(a)
    disjoint[0, 0] = 1
    other = np.zeros_like(a)
    other[4, 4] = 1
    assert dice(_mask(disjoint), _mask(other)) == 0.0


def test_empty_conventions():
    tube = generate(PhantomSpec("tube", (33, 17), radii=(3.0,), lengths=(16.0,)))
    empty = _empty((33, 17))
    for pred, ref, expected in [(empty, tube, 0.0), (tube, empty, 0.0),
                                (empty, empty, 1.0)]:
        bp, bl = build_joint_bundles(pred, ref)
        assert cl_dice(bp, bl) == expected
        for name in VARIANT_NAMES:
            assert cl_x_dice(VariantSpec(name, 2), bp, bl) == expected


def test_identity_all_variants():
    specs = [
        PhantomSpec("tube", (41, 21), radii=(3.0,), lengths=(20.0,)),
        PhantomSpec("ring", (33, 33), radii=(5.0, 8.0)),
        PhantomSpec("tube", (25, 15, 15), radii=(3.0,), lengths=(12.0,)),
    ]
    for spec in specs:
        mask = generate(spec)
        bp, bl = build_joint_bundles(mask, mask)
        dim = mask.shape.ndim
        assert cl_dice(bp, bl) == 1.0
        for name in VARIANT_NAMES:
            assert cl_x_dice(VariantSpec(name, dim), bp, bl) == pytest.approx(1.0)


def test_range_property():
    rng = np.random.default_rng(5)
    for _ in range(25):
        shape = (int(rng.integers(4, 14)), int(rng.integers(4, 14)))
        pred = _mask(random_blob(rng, shape))
        ref = _mask(random_blob(rng, shape))
        bp, bl = build_joint_bundles(pred, ref)
        for name in VARIANT_NAMES:
            v = cl_x_dice(VariantSpec(name, 2), bp, bl)
            assert 0.0 <= v <= 1.0


def test_cl_d_reduces_to_cl_dice():
    rng = np.random.default_rng(7)
    for _ in range(30):
        shape = (int(rng.integers(4, 16)), int(rng.integers(4, 16)))
        pred = _mask(random_blob(rng, shape))
        ref = _mask(random_blob(rng, shape))
        bp, bl = build_joint_bundles(pred, ref)
        assert cl_x_dice(VariantSpec("cl-D", 2), bp, bl) == pytest.approx(
            cl_dice(bp, bl), abs=1e-12)


def test_normalized_variant_requires_shared_r_max():
    thin = generate(PhantomSpec("tube", (41, 21), radii=(2.0,), lengths=(20.0,)))
    thick = generate(PhantomSpec("tube", (41, 21), radii=(4.0,), lengths=(20.0,)))
    bp = build_bundle(thin)
    bl = build_bundle(thick)
    with pytest.raises(GridError):
        cl_x_dice(VariantSpec("cl-MIN-D", 2), bp, bl)
    # unnormalized variants do not care
    cl_x_dice(VariantSpec("cl-M-D", 2), bp, bl)


def test_dim_mismatch_rejected():
    tube = generate(PhantomSpec("tube", (33, 17), radii=(3.0,), lengths=(16.0,)))
    bp, bl = build_joint_bundles(tube, tube)
    with pytest.raises(GridError):
        cl_x_dice(VariantSpec("cl-D", 3), bp, bl)


def test_betti_disk_annulus():
    disk = np.zeros((15, 15), dtype=np.uint8)
    yy, xx = np.indices(disk.shape)
    disk[(yy - 7) ** 2 + (xx - 7) ** 2 < 25] = 1
    assert betti_numbers(_mask(disk)) == (1, 0)
    assert betti_numbers(_mask(disk)) == betti_oracle(disk)

    annulus = generate(PhantomSpec("ring", (21, 21), radii=(3.0, 7.0)))
    assert betti_numbers(annulus) == (1, 1)
    assert betti_numbers(annulus) == betti_oracle(annulus.values)


def test_betti_two_components_and_shell():
    two = np.zeros((9, 9), dtype=np.uint8)
    two[1:3, 1:3] = 1
    two[6:8, 5:8] = 1
    assert betti_numbers(_mask(two)) == (2, 0)
    assert betti_numbers(_mask(two)) == betti_oracle(two)

    shell = np.zeros((9, 9, 9), dtype=np.uint8)
    shell[1:8, 1:8, 1:8] = 1
    shell[2:7, 2:7, 2:7] = 0
    assert betti_numbers(_mask(shell)) == (1, 0, 1)
    assert betti_numbers(_mask(shell)) == betti_oracle(shell)


def test_betti_solid_torus():
    # a square loop of solid 3x3 cross-section
    torus = np.zeros((11, 11, 5), dtype=np.uint8)
    torus[1:10, 1:10, 1:4] = 1
    torus[4:7, 4:7, :] = 0
    assert betti_numbers(_mask(torus)) == (1, 1, 0)
    assert betti_numbers(_mask(torus)) == betti_oracle(torus)


def test_betti_random_matches_oracle():
    rng = np.random.default_rng(23)
    for _ in range(30):
        ndim = int(rng.integers(2, 4))
        shape = tuple(int(rng.integers(2, 7)) for _ in range(ndim))
        arr = random_blob(rng, shape, density=float(rng.uniform(0.2, 0.8)))
        assert betti_numbers(_mask(arr)) == betti_oracle(arr)


def test_betti_err():
    ring = generate(PhantomSpec("ring", (21, 21), radii=(3.0, 7.0)))
    disk = np.zeros((21, 21), dtype=np.uint8)
    yy, xx = np.indices(disk.shape)
    disk[(yy - 10) ** 2 + (xx - 10) ** 2 < 49] = 1
    assert betti_err(ring, ring) == 0
    assert betti_err(_mask(disk), ring) == 1  # loop lost


def test_nsd_identical_and_shifted():
    tube = generate(PhantomSpec("tube", (33, 17), radii=(3.0,), lengths=(16.0,)))
    assert nsd(tube, tube, 1.0) == 1.0
    shifted = translate(tube, (0, 2))
    close = nsd(tube, shifted, 2.0)
    far = nsd(tube, shifted, 1.0)
    assert far < close == 1.0


def test_nsd_matches_oracle():
    rng = np.random.default_rng(9)
    for spacing in [(1.0, 1.0), (0.5, 2.0)]:
        shape = GridShape((9, 7), spacing)
        for _ in range(6):
            pred = BinaryField(shape, random_blob(rng, shape.array_shape))
            ref = BinaryField(shape, random_blob(rng, shape.array_shape))
            for tol in (0.9, 1.5):
                got = nsd(pred, ref, tol)
                want = nsd_oracle(pred.values, ref.values, spacing, tol)
                assert got == pytest.approx(want, abs=1e-12)


def test_nsd_tolerance_validation():
    tube = generate(PhantomSpec("tube", (33, 17), radii=(3.0,), lengths=(16.0,)))
    with pytest.raises(GridError):
        nsd(tube, tube, 0.0)


def _two_class_grids():
    shape = GridShape((41, 21))
    thin = generate(PhantomSpec("tube", (41, 21), radii=(2.0,), lengths=(20.0,)))
    labels_ref = thin.values.astype(np.uint8) * 1
    thick = np.zeros_like(labels_ref)
    thick[2:6, 4:18] = 1
    labels_ref[thick > 0] = 2
    labels_pred = labels_ref.copy()
    labels_pred[:, -4:] = 0  # clip part of class 1
    ref = LabelGrid(shape, labels_ref, class_count=3)
    pred = LabelGrid(shape, labels_pred, class_count=3)
    return pred, ref


def test_evaluate_per_class_and_aggregate():
    pred, ref = _two_class_grids()
    report = evaluate(pred, ref, ["clDice", "cbDice"], tol=1.0)
    assert set(report.per_class) == {1, 2}
    row = report.per_class[1]
    assert set(row) == {"dice", "clDice", "cbDice", "betti_err", "nsd"}
    assert report.per_class[2]["dice"] == 1.0
    for metric in row:
        assert report.aggregate[metric] == pytest.approx(
            np.mean([report.per_class[c][metric] for c in (1, 2)]))
    assert report.metadata["dims"] == [41, 21]
    assert set(report.metadata["r_max"]) == {"1", "2"}


def test_evaluate_groups():
    pred, ref = _two_class_grids()
    report = evaluate(pred, ref, ["cbDice"], class_subsets={"thin": [1]})
    assert report.groups["thin"]["dice"] == report.per_class[1]["dice"]
    with pytest.raises(GridError):
        evaluate(pred, ref, ["cbDice"], class_subsets={"bad": [7]})


def test_evaluate_class_vocabulary_mismatch():
    pred, ref = _two_class_grids()
    other = LabelGrid(ref.shape, (ref.labels > 0).astype(np.uint8), class_count=2)
    with pytest.raises(GridError):
        evaluate(pred, other, ["cbDice"])
