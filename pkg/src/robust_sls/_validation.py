"""Input validation helpers shared by the public entry points."""

import numbers

import numpy as np


def check_matrix(value, name="matrix", shape=None, allow_empty=True):
    """Return ``value`` as a finite 2-D float array.

    ``shape`` may contain ``None`` for dimensions that are not constrained.
    """
    arr = np.array(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if not allow_empty and arr.size == 0:
        raise ValueError(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    if shape is not None:
        for axis, (got, want) in enumerate(zip(arr.shape, shape)):
            if want is not None and got != want:
                raise ValueError(
                    f"{name} has shape {arr.shape}, expected {tuple(shape)} "
                    f"(mismatch on axis {axis})"
                )
    return arr


def check_signal(value, dim=None, horizon=None, name="signal"):
    """Return ``value`` as a finite ``(horizon, dim)`` array.

    A 1-D input is read as a scalar channel.
    """
    arr = np.array(value, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"{name} must have shape (horizon, dim), got {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    if dim is not None and arr.shape[1] != dim:
        raise ValueError(f"{name} has dimension {arr.shape[1]}, expected {dim}")
    if horizon is not None and arr.shape[0] != horizon:
        raise ValueError(f"{name} has horizon {arr.shape[0]}, expected {horizon}")
    return arr


def check_count(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_nonnegative(value, name):
    value = float(value)
    if not np.isfinite(value) or value < 0:
        raise ValueError(f"{name} must be a finite nonnegative number, got {value}")
    return value
