"""Alignment losses between source and target fitting lines.

Slope agreement is measured by the angle between slope vectors, intercept
agreement by the squared distance between intercepts. Every loss returns its
value together with gradients w.r.t. the fitted slopes and intercepts, so the
trainer can push them back through :func:`dlsa.least_squares.fit_line_backward`.

``slope_term="squared"`` swaps the angle for ``||a_s - a_t||^2`` (the
squared-difference form); the angle is the default trained loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateSlopeError, ShapeError
from .least_squares import ClassFits, LineFit
from .tensor import as_vector

COS_CLAMP = 1e-7
MIN_SLOPE_NORM = 1e-12
SLOPE_TERMS = ("angle", "squared")

DEFAULT_ALPHA = 0.2
DEFAULT_GAMMA = 0.1


@dataclass(frozen=True)
class LossWeights:
    alpha: float = DEFAULT_ALPHA
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.gamma > 0.0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")


@dataclass
class FitGrads:
    """Gradient of a loss w.r.t. one LineFit."""

    slope: np.ndarray
    intercept: np.ndarray


@dataclass
class MarginalLossTerms:
    theta_M: float
    B_M: float
    loss: float
    grad_s: FitGrads
    grad_t: FitGrads


@dataclass
class ConditionalLossTerms:
    theta_C: dict[int, float]
    B_C: dict[int, float]
    active_classes: list[int]
    loss: float
    grad_s: dict[int, FitGrads] = field(default_factory=dict)
    grad_t: dict[int, FitGrads] = field(default_factory=dict)


def _pair(a, b):
    a = as_vector(a, name="a")
    b = as_vector(b, name="b")
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    return a, b


def angle_with_grad(a_s, a_t) -> tuple[float, np.ndarray, np.ndarray]:
    """Angle in radians between two slope vectors and its gradients.

    The cosine is clamped to ``[-1 + 1e-7, 1 - 1e-7]`` before ``arccos``; inside
    the clamped region the gradient is zero.
    """
    a_s, a_t = _pair(a_s, a_t)
    ns = math.sqrt(float(a_s @ a_s))
    nt = math.sqrt(float(a_t @ a_t))
    if ns < MIN_SLOPE_NORM or nt < MIN_SLOPE_NORM:
        raise DegenerateSlopeError("angle undefined for a zero slope vector")
    cos = float(a_s @ a_t) / (ns * nt)
    lo, hi = -1.0 + COS_CLAMP, 1.0 - COS_CLAMP
    if cos <= lo or cos >= hi:
        clamped = min(max(cos, lo), hi)
        return math.acos(clamped), np.zeros_like(a_s), np.zeros_like(a_t)
    d_cos = -1.0 / math.sqrt(1.0 - cos * cos)
    g_s = d_cos * (a_t / (ns * nt) - cos * a_s / (ns * ns))
    g_t = d_cos * (a_s / (ns * nt) - cos * a_t / (nt * nt))
    return math.acos(cos), g_s, g_t


def angle(a_s, a_t) -> float:
    return angle_with_grad(a_s, a_t)[0]


def intercept_diff(b_s, b_t) -> float:
    b_s, b_t = _pair(b_s, b_t)
    d = b_s - b_t
    return float(d @ d)


def _pair_terms(fit_s: LineFit, fit_t: LineFit, gamma: float, slope_term: str):
    """(slope term, B, loss, grads for s, grads for t) for one pair of fits."""
    if fit_s.slope.shape != fit_t.slope.shape:
        raise ShapeError("fits have different dimensionality")
    if slope_term == "angle":
        theta, gs, gt = angle_with_grad(fit_s.slope, fit_t.slope)
    elif slope_term == "squared":
        diff = fit_s.slope - fit_t.slope
        theta, gs, gt = float(diff @ diff), 2.0 * diff, -2.0 * diff
    else:
        raise ConfigError(f"unknown slope term {slope_term!r}")
    db = fit_s.intercept - fit_t.intercept
    b = float(db @ db)
    return theta, b, theta + gamma * b, FitGrads(gs, 2.0 * gamma * db), FitGrads(gt, -2.0 * gamma * db)


def marginal_loss(fit_s: LineFit, fit_t: LineFit, gamma: float = DEFAULT_GAMMA, *, slope_term: str = "angle") -> MarginalLossTerms:
    theta, b, loss, gs, gt = _pair_terms(fit_s, fit_t, gamma, slope_term)
    return MarginalLossTerms(theta_M=theta, B_M=b, loss=loss, grad_s=gs, grad_t=gt)


def conditional_loss(
    fits_s: ClassFits,
    fits_t: ClassFits,
    gamma: float = DEFAULT_GAMMA,
    num_classes: int | None = None,
    *,
    slope_term: str = "angle",
    skip_degenerate_slopes: bool = True,
) -> ConditionalLossTerms:
    """Mean over classes fitted in both domains of ``theta_c + gamma * B_c``.

    The mean divides by the number of active classes, which equals the class
    count whenever every class is fitted on both sides. A class whose slope
    vector is zero in either domain is dropped from the active set unless
    ``skip_degenerate_slopes`` is False.
    """
    if num_classes is None:
        num_classes = fits_s.num_classes
    per_class = {}
    for c in range(num_classes):
        fs = fits_s.fits[c] if c < fits_s.num_classes else None
        ft = fits_t.fits[c] if c < fits_t.num_classes else None
        if fs is None or ft is None:
            continue
        try:
            per_class[c] = _pair_terms(fs, ft, gamma, slope_term)
        except DegenerateSlopeError:
            if not skip_degenerate_slopes:
                raise
    active = sorted(per_class)
    if not active:
        return ConditionalLossTerms(theta_C={}, B_C={}, active_classes=[], loss=0.0)
    scale = 1.0 / len(active)
    # fixed summation order keeps the loss independent of dict iteration
    loss = math.fsum(per_class[c][2] for c in active) * scale
    terms = ConditionalLossTerms(
        theta_C={c: per_class[c][0] for c in active},
        B_C={c: per_class[c][1] for c in active},
        active_classes=active,
        loss=loss,
    )
    for c in active:
        _, _, _, gs, gt = per_class[c]
        terms.grad_s[c] = FitGrads(gs.slope * scale, gs.intercept * scale)
        terms.grad_t[c] = FitGrads(gt.slope * scale, gt.intercept * scale)
    return terms


def total_objective(l_s: float, l_m: float, l_c: float, alpha: float) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    return l_s + (1.0 - alpha) * l_m + alpha * l_c
