"""Grid and field containers plus bit-exact VGRID file I/O.

Element order is row-major with x fastest: flat index = x + w*(y + h*z).
Arrays are therefore stored C-ordered with numpy shape (h, w) in 2D and
(d, h, w) in 3D, while ``GridShape.dims`` keeps the (w, h[, d]) convention.
All containers are immutable after construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


class GridError(ValueError):
    """Base class for grid/field validation failures."""


class ShapeMismatchError(GridError):
    """Two fields that must share a grid shape do not."""


class UnknownClassError(GridError):
    """A class id outside the declared class vocabulary."""


class VgridError(GridError):
    """Base class for VGRID file problems."""


class MalformedHeaderError(VgridError):
    """The VGRID header line is missing, not JSON, or inconsistent."""


class SpacingMismatchError(VgridError):
    """dims and spacing in a header have different lengths."""


class TruncatedPayloadError(VgridError):
    """The payload does not contain exactly N elements."""


@dataclass(frozen=True)
class GridShape:
    """Voxel grid geometry: dims (w, h[, d]) and physical spacing per axis."""

    dims: tuple
    spacing: tuple = None

    def __post_init__(self):
        dims = tuple(int(v) for v in self.dims)
        if not 2 <= len(dims) <= 3:
            raise GridError(f"dims must have 2 or 3 entries, got {len(dims)}")
        if any(v < 1 for v in dims):
            raise GridError(f"all dims must be >= 1, got {dims}")
        spacing = self.spacing
        if spacing is None:
            spacing = (1.0,) * len(dims)
        spacing = tuple(float(v) for v in spacing)
        if len(spacing) != len(dims):
            raise SpacingMismatchError(
                f"spacing has {len(spacing)} entries for {len(dims)} dims")
        if any(v <= 0 for v in spacing):
            raise GridError(f"all spacing values must be > 0, got {spacing}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)

    @property
    def ndim(self):
        return len(self.dims)

    @property
    def size(self):
        return int(np.prod(self.dims))

    @property
    def array_shape(self):
        """numpy shape with x fastest in memory: (h, w) or (d, h, w)."""
        return tuple(reversed(self.dims))

    @property
    def array_spacing(self):
        """spacing reordered to match ``array_shape`` axes."""
        return tuple(reversed(self.spacing))


def _frozen(arr):
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


def _check_values_shape(shape, values):
    values = np.asarray(values)
    if values.shape == (shape.size,):
        values = values.reshape(shape.array_shape)
    if values.shape != shape.array_shape:
        raise GridError(
            f"values shape {values.shape} does not match grid {shape.array_shape}")
    return values


@dataclass(frozen=True)
class LabelGrid:
    """Integer class labels on a grid; 0 is background."""

    shape: GridShape
    labels: np.ndarray
    class_count: int = 0

    def __post_init__(self):
        labels = _check_values_shape(self.shape, self.labels)
        if labels.dtype.kind not in "ui":
            raise GridError(f"labels must be unsigned integers, got {labels.dtype}")
        if labels.size and labels.min() < 0:
            raise GridError("labels must be nonnegative")
        count = self.class_count
        if count <= 0:
            count = int(labels.max()) + 1 if labels.size else 1
        elif labels.size and int(labels.max()) >= count:
            raise GridError(
                f"label value {int(labels.max())} >= class count {count}")
        dtype = np.uint8 if count <= 256 else np.uint16
        object.__setattr__(self, "labels", _frozen(labels.astype(dtype)))
        object.__setattr__(self, "class_count", int(count))


@dataclass(frozen=True)
class BinaryField:
    """{0,1}-valued field on a grid."""

    shape: GridShape
    values: np.ndarray

    def __post_init__(self):
        values = _check_values_shape(self.shape, self.values)
        values = values.astype(np.uint8)
        if values.size and not np.isin(values, (0, 1)).all():
            raise GridError("binary field values must be exactly 0 or 1")
        object.__setattr__(self, "values", _frozen(values))

    @property
    def count(self):
        """Number of foreground elements."""
        return int(self.values.sum())


@dataclass(frozen=True)
class ScalarField:
    """Nonnegative real-valued field on a grid."""

    shape: GridShape
    values: np.ndarray

    def __post_init__(self):
        values = _check_values_shape(self.shape, self.values).astype(np.float64)
        if values.size and values.min() < 0:
            raise GridError("scalar field values must be >= 0")
        object.__setattr__(self, "values", _frozen(values))


def same_shape(a, b):
    """Raise ShapeMismatchError unless a and b live on identical grids."""
    if a.shape.dims != b.shape.dims:
        raise ShapeMismatchError(
            f"grid dims differ: {a.shape.dims} vs {b.shape.dims}")


def binarize(grid: LabelGrid, class_id: int) -> BinaryField:
    """One-hot mask of a single class."""
    if not 1 <= class_id < grid.class_count:
        raise UnknownClassError(
            f"class id {class_id} outside vocabulary [1, {grid.class_count - 1}]")
    return BinaryField(grid.shape, (grid.labels == class_id).astype(np.uint8))


_DTYPES = {"u8": np.dtype("<u1"), "u16": np.dtype("<u2"), "f32": np.dtype("<f4")}


def write_vgrid(path, obj) -> None:
    """Write a LabelGrid, BinaryField, or ScalarField as a VGRID file."""
    if isinstance(obj, LabelGrid):
        dtype = "u8" if obj.class_count <= 256 else "u16"
        payload = obj.labels
    elif isinstance(obj, BinaryField):
        dtype = "u8"
        payload = obj.values
    elif isinstance(obj, ScalarField):
        dtype = "f32"
        payload = obj.values
    else:
        raise GridError(f"cannot write object of type {type(obj).__name__}")
    header = {
        "dims": list(obj.shape.dims),
        "spacing": list(obj.shape.spacing),
        "dtype": dtype,
        "order": "x-fastest",
    }
    raw = np.ascontiguousarray(payload, dtype=_DTYPES[dtype]).tobytes()
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, separators=(",", ":")).encode("utf-8"))
        fh.write(b"\n")
        fh.write(raw)


def read_vgrid(path):
    """Read a VGRID file; u8/u16 payloads become LabelGrids, f32 ScalarFields."""
    with open(path, "rb") as fh:
        line = fh.readline()
        rest = fh.read()
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedHeaderError(f"{path}: header is not a JSON line: {exc}")
    if not isinstance(header, dict) or "dims" not in header or "dtype" not in header:
        raise MalformedHeaderError(f"{path}: header missing dims/dtype")
    if header.get("order", "x-fastest") != "x-fastest":
        raise MalformedHeaderError(f"{path}: unsupported order {header.get('order')}")
    dtype_name = header["dtype"]
    if dtype_name not in _DTYPES:
        raise MalformedHeaderError(f"{path}: unknown dtype {dtype_name!r}")
    try:
        shape = GridShape(tuple(header["dims"]), header.get("spacing"))
    except SpacingMismatchError:
        raise
    except GridError as exc:
        raise MalformedHeaderError(f"{path}: {exc}")
    dtype = _DTYPES[dtype_name]
    expected = shape.size * dtype.itemsize
    if len(rest) != expected:
        raise TruncatedPayloadError(
            f"{path}: payload is {len(rest)} bytes, expected {expected}")
    values = np.frombuffer(rest, dtype=dtype).reshape(shape.array_shape)
    if dtype_name == "f32":
        return ScalarField(shape, values)
    return LabelGrid(shape, values)


def read_pgm(path) -> BinaryField:
    """Read a binary (P5, maxval<=255) PGM as a mask thresholded at 128."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    i = 0
    while len(tokens) < 4 and i < len(data):
        if data[i:i + 1] == b"#":  # comment to end of line
            while i < len(data) and data[i] not in b"\r\n":
                i += 1
        elif data[i:i + 1].isspace():
            i += 1
        else:
            j = i
            while j < len(data) and not data[j:j + 1].isspace():
                j += 1
            tokens.append(data[i:j])
            i = j
    if len(tokens) < 4 or tokens[0] != b"P5":
        raise MalformedHeaderError(f"{path}: not a binary (P5) PGM")
    try:
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError:
        raise MalformedHeaderError(f"{path}: non-numeric PGM header fields")
    if maxval > 255:
        raise MalformedHeaderError(f"{path}: PGM maxval {maxval} > 255 unsupported")
    payload = data[i + 1:]
    if len(payload) != w * h:
        raise TruncatedPayloadError(
            f"{path}: payload is {len(payload)} bytes, expected {w * h}")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(h, w)
    return BinaryField(GridShape((w, h)), (pixels >= 128).astype(np.uint8))
