"""Closed-form least squares fitting lines in the latent space.

One latent column (``independent_dim``) is the regressor ``v``; the other
``d - 1`` columns ``w`` are regressed on it independently::

    slope_k     = (mean(v * w_k) - mean(v) * mean(w_k)) / (mean(v**2) - mean(v)**2)
    intercept_k = mean(w_k) - slope_k * mean(v)

The denominator is the (biased) variance of ``v``. :func:`fit_line_backward`
differentiates both formulas with respect to every latent entry.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DegenerateVarianceError,
    DimensionalityError,
    InsufficientSamplesError,
    ShapeError,
)
from .tensor import DTYPE, as_matrix, as_vector

EPS_VAR = 1e-8
MIN_SAMPLES = 2


@dataclass(frozen=True)
class LatentSplit:
    v: np.ndarray  # (N,)
    w: np.ndarray  # (N, d - 1)
    independent_dim: int = 0

    @property
    def n(self) -> int:
        return self.v.shape[0]

    @property
    def dim(self) -> int:
        return self.w.shape[1] + 1


@dataclass(frozen=True)
class LineFit:
    slope: np.ndarray
    intercept: np.ndarray
    sample_count: int

    @property
    def dim(self) -> int:
        return self.slope.shape[0] + 1


@dataclass
class ClassFits:
    """Per-class fits; ``fits[c]`` is None exactly when ``c`` is in ``skipped_classes``."""

    fits: list[Optional[LineFit]]
    skipped_classes: set[int] = field(default_factory=set)
    rows: list[Optional[np.ndarray]] = field(default_factory=list)
    independent_dim: int = 0

    @property
    def num_classes(self) -> int:
        return len(self.fits)

    @property
    def fitted_classes(self) -> list[int]:
        return [c for c, f in enumerate(self.fits) if f is not None]


def split_latent(latent, independent_dim: int = 0) -> LatentSplit:
    m = as_matrix(latent, name="latent")
    n, d = m.shape
    if d < 2:
        raise DimensionalityError(f"latent dimension must be at least 2, got {d}")
    if not 0 <= independent_dim < d:
        raise DimensionalityError(f"independent_dim {independent_dim} out of range for d={d}")
    if n < 2:
        raise InsufficientSamplesError(f"a fitting line needs at least 2 samples, got {n}")
    v = m[:, independent_dim].copy()
    w = np.delete(m, independent_dim, axis=1)
    return LatentSplit(v=v, w=w, independent_dim=independent_dim)


def _moments(split: LatentSplit):
    v, w = split.v, split.w
    mv = v.mean()
    mw = w.mean(axis=0)
    var = float(np.mean(v * v) - mv * mv)
    cov = (v @ w) / split.n - mv * mw
    return mv, mw, var, cov


def _denominator(var: float, ridge: float) -> float:
    if ridge > 0:
        return max(var, 0.0) + ridge
    if var < EPS_VAR:
        raise DegenerateVarianceError(f"variance of the independent coordinate is {var:.3g} < {EPS_VAR:g}")
    return var


def fit_line(split: LatentSplit, *, ridge: float = 0.0) -> LineFit:
    """Least squares slope/intercept of ``w`` on ``v``.

    With ``ridge > 0`` the denominator is ``var(v) + ridge`` and no
    degeneracy error is raised; the training loop uses this so the marginal
    fit always exists.
    """
    mv, mw, var, cov = _moments(split)
    denom = _denominator(var, ridge)
    slope = cov / denom
    intercept = mw - slope * mv
    return LineFit(slope=slope, intercept=intercept, sample_count=split.n)


def fit_line_backward(split: LatentSplit, grad_slope, grad_intercept, *, ridge: float = 0.0) -> np.ndarray:
    """Gradient of a scalar w.r.t. the latent, given its slope/intercept gradients.

    Returns an ``(N, d)`` matrix laid out like the latent the split came from.
    """
    k = split.w.shape[1]
    gs = as_vector(grad_slope, name="slope gradient")
    gi = as_vector(grad_intercept, name="intercept gradient")
    if gs.shape != (k,) or gi.shape != (k,):
        raise ShapeError(f"expected gradients of length {k}")
    n = split.n
    v, w = split.v, split.w
    mv, mw, var, cov = _moments(split)
    denom = _denominator(var, ridge)
    slope = cov / denom

    # intercept = mw - slope * mv
    g_slope = gs - gi * mv
    g_mv = -float(gi @ slope)
    # slope = cov / denom
    g_cov = g_slope / denom
    g_var = -float(g_slope @ slope) / denom
    if ridge > 0 and var < 0:
        g_var = 0.0

    dv_c = v - mv
    g_w = np.outer(dv_c, g_cov) / n + gi / n
    g_v = (w - mw) @ g_cov / n + g_var * 2.0 * dv_c / n + g_mv / n

    out = np.empty((n, k + 1), dtype=DTYPE)
    j = split.independent_dim
    out[:, j] = g_v
    out[:, :j] = g_w[:, :j]
    out[:, j + 1 :] = g_w[:, j:]
    return out


def fit_line_per_class(
    latent,
    labels: Sequence[int],
    num_classes: int,
    independent_dim: int = 0,
    min_samples: int = MIN_SAMPLES,
) -> ClassFits:
    m = as_matrix(latent, name="latent")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (m.shape[0],):
        raise ShapeError(f"expected {m.shape[0]} labels, got shape {labels.shape}")
    min_samples = max(int(min_samples), MIN_SAMPLES)
    fits: list[Optional[LineFit]] = [None] * num_classes
    rows: list[Optional[np.ndarray]] = [None] * num_classes
    skipped: set[int] = set()
    for c in range(num_classes):
        idx = np.flatnonzero(labels == c)
        if idx.size < min_samples:
            skipped.add(c)
            continue
        try:
            fits[c] = fit_line(split_latent(m[idx], independent_dim))
        except DegenerateVarianceError:
            skipped.add(c)
            continue
        rows[c] = idx
    return ClassFits(fits=fits, skipped_classes=skipped, rows=rows, independent_dim=independent_dim)


def class_fits_backward(
    latent,
    class_fits: ClassFits,
    slope_grads: dict[int, np.ndarray],
    intercept_grads: dict[int, np.ndarray],
) -> np.ndarray:
    """Scatter per-class :func:`fit_line_backward` results into one latent gradient."""
    m = as_matrix(latent, name="latent")
    out = np.zeros_like(m)
    for c, gs in slope_grads.items():
        idx = class_fits.rows[c]
        if idx is None:
            continue
        split = split_latent(m[idx], class_fits.independent_dim)
        out[idx] += fit_line_backward(split, gs, intercept_grads[c])
    return out
