"""Input validation helpers."""

import numpy as np

from .exceptions import ShapeError


def as_matrix(a, name="a", finite=True):
    """Return ``a`` as a C-contiguous 2-D float64 array.

    Raises
    ------
    ShapeError
        If ``a`` is not two-dimensional.
    ValueError
        If ``finite`` is set and ``a`` holds NaN or Inf.
    """
    arr = np.ascontiguousarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if finite and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_fraction(value, name, low=0.0, high=1.0, low_open=True, high_open=True):
    from .exceptions import ConfigError

    v = float(value)
    ok_low = v > low if low_open else v >= low
    ok_high = v < high if high_open else v <= high
    if not (ok_low and ok_high):
        lb = "(" if low_open else "["
        rb = ")" if high_open else "]"
        raise ConfigError(f"{name} must lie in {lb}{low}, {high}{rb}, got {value!r}")
    return v
