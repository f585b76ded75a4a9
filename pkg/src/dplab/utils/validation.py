"""Input validation helpers used across the estimators and protocol code."""

import numbers

import numpy as np

from ..exceptions import InvalidArgument


def check_positive(value, name, strict=True):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise InvalidArgument(f"{name} must be a finite real, got {value!r}")
    if strict and value <= 0:
        raise InvalidArgument(f"{name} must be > 0, got {value!r}")
    if not strict and value < 0:
        raise InvalidArgument(f"{name} must be >= 0, got {value!r}")
    return float(value)


def check_finite_array(values, name="values", ndim=None, dtype=float):
    """Return ``values`` as a C-contiguous array, rejecting NaN/inf.

    ``ndim`` may be an int or a tuple of allowed dimensionalities.
    """
    arr = np.ascontiguousarray(values, dtype=dtype)
    if ndim is not None:
        allowed = (ndim,) if isinstance(ndim, int) else tuple(ndim)
        if arr.ndim not in allowed:
            raise InvalidArgument(f"{name} must have ndim in {allowed}, got {arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgument(f"{name} contains non-finite entries")
    return arr


def check_same_shape(a, b, what="fields"):
    if np.shape(a) != np.shape(b):
        raise InvalidArgument(f"shape mismatch between {what}: {np.shape(a)} vs {np.shape(b)}")


def check_hermitian(mat, name="matrix", atol=1e-10):
    m = np.asarray(mat, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidArgument(f"{name} must be square, got shape {m.shape}")
    if not np.allclose(m, m.conj().T, atol=atol, rtol=0):
        raise InvalidArgument(f"{name} is not Hermitian")
    return m


def check_unitary(mat, name="basis", atol=1e-10):
    m = np.asarray(mat, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidArgument(f"{name} must be square, got shape {m.shape}")
    if not np.allclose(m.conj().T @ m, np.eye(m.shape[0]), atol=atol, rtol=0):
        raise InvalidArgument(f"{name} is not unitary")
    return m


def check_random_state(seed):
    """Turn ``seed`` into a ``numpy.random.Generator``."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None or isinstance(seed, numbers.Integral):
        return np.random.default_rng(seed)
    raise InvalidArgument(f"cannot seed a generator from {seed!r}")
