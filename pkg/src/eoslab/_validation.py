"""Small input-validation helpers shared across modules."""

import numbers

import numpy as np


class NonFiniteError(FloatingPointError):
    """Raised when a run produces NaN/inf; carries the offending step."""

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


def as_vector(x, dim=None, name="x"):
    """Return ``x`` as a 1-D float array, checking length when ``dim`` is given."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {x.shape}")
    if dim is not None and x.shape[0] != dim:
        raise ValueError(f"{name} must have length {dim}, got {x.shape[0]}")
    return x


def check_positive(value, name, strict=True):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ValueError(f"{name} must be a finite real number, got {value!r}")
    if strict and value <= 0:
        raise ValueError(f"{name} must be > 0, got {value}")
    if not strict and value < 0:
        raise ValueError(f"{name} must be >= 0, got {value}")
    return float(value)


def check_finite(x, what, step=None):
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite {what}", step=step)
    return x


def unit(x):
    n = np.linalg.norm(x)
    if n == 0.0:
        raise ValueError("cannot normalise the zero vector")
    return x / n
