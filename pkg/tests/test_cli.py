import json

import numpy as np
import pytest

from vesseltop.cli import main
from vesseltop.grid import GridShape, LabelGrid, ScalarField, read_vgrid, write_vgrid


def _run(argv):
    return main(argv)


def _make_phantom(tmp_path, name, kind="tube", dims="41x21", radii="3",
                  lengths="20"):
    out = tmp_path / name
    rc = _run(["phantom", "--kind", kind, "--dims", dims, "--radii", radii,
               "--lengths", lengths, "--out", str(out)])
    assert rc == 0
    return out


def test_phantom_roundtrip(tmp_path):
    out = _make_phantom(tmp_path, "tube.vgrid")
    grid = read_vgrid(out)
    assert isinstance(grid, LabelGrid)
    assert grid.shape.dims == (41, 21)
    assert grid.labels.any()


def test_metrics_json_schema_and_values(tmp_path, capsys):
    ref = _make_phantom(tmp_path, "ref.vgrid")
    rc = _run(["metrics", "--pred", str(ref), "--ref", str(ref),
               "--variants", "clDice,cbDice"])
    assert rc == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["schema"] == "vesseltop/1"
    row = payload["per_class"]["1"]
    assert row["dice"] == 1 and row["cbDice"] == 1
    assert row["betti_err"] == 0 and row["nsd"] == 1


def test_metrics_csv_and_groups(tmp_path):
    ref = _make_phantom(tmp_path, "ref.vgrid")
    pred = _make_phantom(tmp_path, "pred.vgrid", radii="2")
    out = tmp_path / "report.csv"
    rc = _run(["metrics", "--pred", str(pred), "--ref", str(ref),
               "--variants", "cbDice", "--format", "csv",
               "--groups", "all:1", "--out", str(out)])
    assert rc == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "class,metric,value"
    assert any(line.startswith("group:all,") for line in lines)
    assert any(line.startswith("mean,") for line in lines)


def test_metrics_reads_pgm(tmp_path, capsys):
    pgm = tmp_path / "mask.pgm"
    arr = np.zeros((9, 13), dtype=np.uint8)
    arr[3:6, 2:11] = 255
    pgm.write_bytes(b"P5\n13 9\n255\n" + arr.tobytes())
    rc = _run(["metrics", "--pred", str(pgm), "--ref", str(pgm),
               "--variants", "clDice"])
    assert rc == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["per_class"]["1"]["dice"] == 1


def test_metrics_determinism(tmp_path):
    ref = _make_phantom(tmp_path, "ref.vgrid")
    pred = _make_phantom(tmp_path, "pred.vgrid", radii="2")
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for out in (a, b):
        rc = _run(["metrics", "--pred", str(pred), "--ref", str(ref),
                   "--out", str(out)])
        assert rc == 0
    assert a.read_bytes() == b.read_bytes()


def test_experiment_csv(tmp_path):
    out = tmp_path / "sweep.csv"
    rc = _run(["experiment", "--name", "translation", "--out", str(out)])
    assert rc == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "param,metric,value"
    assert len(lines) > 10


def test_experiment_determinism(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for out in (a, b):
        assert _run(["experiment", "--name", "imbalance", "--out", str(out)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_gradcheck_command(tmp_path):
    out = tmp_path / "gc.json"
    rc = _run(["gradcheck", "--loss", "cbDice", "--dim", "2", "--probes", "8",
               "--out", str(out)])
    assert rc == 0
    payload = json.loads(out.read_text())
    assert payload["pass"] is True
    assert payload["max_rel_err"] < 1e-3


def test_exit_code_validation_errors(tmp_path, capsys):
    # missing file
    assert _run(["metrics", "--pred", "nope.vgrid", "--ref", "nope.vgrid"]) == 2
    # scalar field rejected as labels
    sf = tmp_path / "field.vgrid"
    write_vgrid(sf, ScalarField(GridShape((3, 3)), np.ones((3, 3))))
    assert _run(["metrics", "--pred", str(sf), "--ref", str(sf)]) == 2
    # shape mismatch between pred and ref
    a = _make_phantom(tmp_path, "a.vgrid", dims="41x21")
    b = _make_phantom(tmp_path, "b.vgrid", dims="33x17", lengths="16")
    assert _run(["metrics", "--pred", str(a), "--ref", str(b)]) == 2
    # malformed group spec
    assert _run(["metrics", "--pred", str(a), "--ref", str(a),
                 "--groups", "oops"]) == 2
    # unknown variant
    assert _run(["metrics", "--pred", str(a), "--ref", str(a),
                 "--variants", "cl-Z-D"]) == 2
    capsys.readouterr()


def test_phantom_validation_exit_code(tmp_path, capsys):
    out = tmp_path / "bad.vgrid"
    rc = _run(["phantom", "--kind", "tube", "--dims", "10x10",
               "--radii", "6", "--lengths", "8", "--out", str(out)])
    assert rc == 2
    capsys.readouterr()


def test_six_significant_digits(tmp_path):
    ref = _make_phantom(tmp_path, "ref.vgrid")
    pred = _make_phantom(tmp_path, "pred.vgrid", radii="2")
    out = tmp_path / "report.csv"
    assert _run(["metrics", "--pred", str(pred), "--ref", str(ref),
                 "--format", "csv", "--out", str(out)]) == 0
    for line in out.read_text().splitlines()[1:]:
        value = line.split(",")[2]
        digits = value.replace(".", "").replace("-", "").lstrip("0")
        mantissa = digits.split("e")[0] if "e" in digits else digits
        assert len(mantissa) <= 6
