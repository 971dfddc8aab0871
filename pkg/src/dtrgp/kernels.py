"""Separable Matérn covariance functions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack

from .errors import NumericalError

MATERN52 = "matern52"
MATERN32 = "matern32"
FAMILIES = (MATERN52, MATERN32)

_SQRT5 = np.sqrt(5.0)
_SQRT3 = np.sqrt(3.0)


def _check_family(family: str) -> str:
    family = str(family).lower().replace("_", "").replace("/", "")
    aliases = {"matern52": MATERN52, "m52": MATERN52, "matern32": MATERN32, "m32": MATERN32}
    if family not in aliases:
        raise ValueError(f"unknown kernel family {family!r}; expected one of {FAMILIES}")
    return aliases[family]


@dataclass(frozen=True)
class KernelSpec:
    """Matérn kernel with one length scale per input dimension.

    Parameters
    ----------
    family : str
        ``"matern52"`` or ``"matern32"``.
    length_scales : array_like, shape (D,)
        Positive length scale per dimension, in the units of the inputs the
        kernel is evaluated on.
    signal_variance : float
        Positive marginal variance of the process.
    """

    family: str
    length_scales: tuple
    signal_variance: float

    def __post_init__(self):
        object.__setattr__(self, "family", _check_family(self.family))
        ls = tuple(float(v) for v in np.atleast_1d(self.length_scales))
        if not ls or not all(np.isfinite(v) and v > 0 for v in ls):
            raise ValueError(f"length scales must be positive, got {ls}")
        if not (np.isfinite(self.signal_variance) and self.signal_variance > 0):
            raise ValueError(f"signal variance must be positive, got {self.signal_variance}")
        object.__setattr__(self, "length_scales", ls)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))

    @property
    def dim(self) -> int:
        return len(self.length_scales)


def matern_correlation(r, family: str = MATERN52):
    """One-dimensional Matérn correlation at scaled distance ``r = |d| / theta``."""
    r = np.abs(r)
    if family == MATERN52:
        s = _SQRT5 * r
        return (1.0 + s + s * s / 3.0) * np.exp(-s)
    if family == MATERN32:
        s = _SQRT3 * r
        return (1.0 + s) * np.exp(-s)
    raise ValueError(f"unknown kernel family {family!r}")


def kernel_eval(spec: KernelSpec, a, b) -> float:
    """Covariance between two single points."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if a.shape != (spec.dim,) or b.shape != (spec.dim,):
        raise ValueError(
            f"points must have dimension {spec.dim}, got shapes {a.shape} and {b.shape}"
        )
    r = np.abs(a - b) / np.asarray(spec.length_scales)
    return float(spec.signal_variance * np.prod(matern_correlation(r, spec.family)))


def matern_log_derivative(r, family: str = MATERN52):
    """d log c / d log theta for the 1-D Matérn correlation at ``r = |d| / theta``."""
    r = np.abs(r)
    if family == MATERN52:
        s = _SQRT5 * r
        return s * s * (1.0 + s) / (3.0 * (1.0 + s + s * s / 3.0))
    if family == MATERN32:
        s = _SQRT3 * r
        return s * s / (1.0 + s)
    raise ValueError(f"unknown kernel family {family!r}")


def abs_differences(A, B) -> np.ndarray:
    """Per-dimension absolute differences, shape (D, len(A), len(B))."""
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    return np.abs(A.T[:, :, None] - B.T[:, None, :])


def covariance_from_differences(family, length_scales, signal_variance, diffs) -> np.ndarray:
    """Covariance matrix from precomputed ``abs_differences`` output."""
    out = None
    for d, theta in enumerate(length_scales):
        c = matern_correlation(diffs[d] / theta, family)
        out = c if out is None else out * c
    return signal_variance * out


def cross_covariance(spec: KernelSpec, A, B) -> np.ndarray:
    """Covariance between every row of ``A`` and every row of ``B``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != spec.dim or B.shape[1] != spec.dim:
        raise ValueError(f"points must have {spec.dim} columns")
    return covariance_from_differences(
        spec.family, spec.length_scales, spec.signal_variance, abs_differences(A, B)
    )


def build_covariance(spec: KernelSpec, X, jitter: float = 0.0) -> np.ndarray:
    """Symmetric covariance matrix of the rows of ``X`` with ``jitter`` on the diagonal."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if not np.all(np.isfinite(X)):
        raise ValueError("design points must be finite")
    K = cross_covariance(spec, X, X)
    K = 0.5 * (K + K.T)
    K[np.diag_indices_from(K)] = spec.signal_variance + jitter
    return K


# jitter is escalated x10 from JITTER_START * scale up to JITTER_MAX * scale
JITTER_START = 1e-10
JITTER_MAX = 1e-4


def cholesky_jitter(A, scale: float, name: str = "covariance matrix", start=JITTER_START):
    """Lower Cholesky factor of ``A + jitter * I`` with escalating jitter.

    Returns ``(L, jitter)``. Raises :class:`NumericalError` if the matrix is
    still not positive definite at ``JITTER_MAX * scale``.
    """
    A = np.asarray(A, dtype=float)
    jitter = start * scale
    top = JITTER_MAX * scale * (1 + 1e-9)
    idx = np.diag_indices_from(A)
    base = A[idx].copy()
    work = A.copy()
    while jitter <= top:
        work[idx] = base + jitter
        L, info = lapack.dpotrf(work, lower=1, clean=1, overwrite_a=0)
        if info == 0:
            return L, jitter
        jitter *= 10.0
    raise NumericalError(
        f"{name} of size {A.shape[0]} is not positive definite even with jitter "
        f"{JITTER_MAX * scale:.3g}"
    )
