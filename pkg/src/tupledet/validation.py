"""Input validation helpers.

All numeric state in this package is float64 numpy arrays. These helpers
coerce list-like input, pin the dtype, and reject NaN/Inf and shape
mismatches up front so the math modules can assume clean inputs.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidBoxError, ShapeError

Box = tuple[float, float, float, float]


def as_vector(x, dim: int | None = None, name: str = "vector") -> np.ndarray:
    """Coerce to a finite 1-D float64 array, optionally of a fixed length."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise ShapeError(f"{name} has dim {arr.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise ShapeError(f"{name} contains non-finite entries")
    return arr


def as_matrix(x, rows: int | None = None, cols: int | None = None,
              name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-D float64 array, optionally of fixed shape."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if rows is not None and arr.shape[0] != rows:
        raise ShapeError(f"{name} has {arr.shape[0]} rows, expected {rows}")
    if cols is not None and arr.shape[1] != cols:
        raise ShapeError(f"{name} has {arr.shape[1]} cols, expected {cols}")
    if not np.all(np.isfinite(arr)):
        raise ShapeError(f"{name} contains non-finite entries")
    return arr


def check_positive_dims(layer_dims, name: str = "layer_dims") -> list[int]:
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2:
        raise ShapeError(f"{name} needs at least 2 entries, got {dims}")
    if any(d <= 0 for d in dims):
        raise ShapeError(f"{name} entries must be positive, got {dims}")
    return dims


def check_box(box, name: str = "box") -> Box:
    """Validate an (x1, y1, x2, y2) box with positive width and height."""
    if len(box) != 4:
        raise InvalidBoxError(f"{name} must have 4 coordinates, got {box!r}")
    x1, y1, x2, y2 = (float(v) for v in box)
    if not all(np.isfinite(v) for v in (x1, y1, x2, y2)):
        raise InvalidBoxError(f"{name} has non-finite coordinates: {box!r}")
    if x2 <= x1 or y2 <= y1:
        raise InvalidBoxError(f"{name} is degenerate: {box!r}")
    return (x1, y1, x2, y2)
