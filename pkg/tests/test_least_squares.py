import numpy as np
import pytest

from dlsa.errors import DegenerateVarianceError, DimensionalityError, InsufficientSamplesError
from dlsa.least_squares import (
    class_fits_backward,
    fit_line,
    fit_line_backward,
    fit_line_per_class,
    split_latent,
)


def normal_equation_fit(v, w):
    """Per-column least squares via Cramer's rule on the 2x2 normal equations."""
    n = len(v)
    svv = sum(x * x for x in v)
    sv = sum(v)
    det = svv * n - sv * sv
    slope, intercept = [], []
    for k in range(w.shape[1]):
        col = w[:, k]
        svw = sum(x * y for x, y in zip(v, col))
        sw = sum(col)
        slope.append((svw * n - sv * sw) / det)
        intercept.append((svv * sw - sv * svw) / det)
    return np.array(slope), np.array(intercept)


def test_split_latent_columns():
    latent = np.arange(6.0).reshape(3, 2)
    split = split_latent(latent, 0)
    assert split.v.tolist() == [0.0, 2.0, 4.0]
    assert split.w.tolist() == [[1.0], [3.0], [5.0]]


def test_split_latent_keeps_remaining_order():
    latent = np.arange(9.0).reshape(3, 3)
    split = split_latent(latent, 1)
    assert split.v.tolist() == [1.0, 4.0, 7.0]
    assert split.w.tolist() == [[0.0, 2.0], [3.0, 5.0], [6.0, 8.0]]


def test_split_latent_errors():
    with pytest.raises(DimensionalityError):
        split_latent(np.ones((4, 1)))
    with pytest.raises(InsufficientSamplesError):
        split_latent(np.ones((1, 3)))
    with pytest.raises(DimensionalityError):
        split_latent(np.ones((4, 3)), independent_dim=3)


def test_fit_exact_line():
    v = np.array([-1.0, 0.5, 2.0, 3.0])
    fit = fit_line(split_latent(np.column_stack([v, 2 * v + 1])))
    assert abs(fit.slope[0] - 2.0) <= 1e-12
    assert abs(fit.intercept[0] - 1.0) <= 1e-12
    assert fit.sample_count == 4


def test_fit_flat_data():
    v = np.array([0.0, 1.0, 2.0, 5.0])
    fit = fit_line(split_latent(np.column_stack([v, np.full(4, 3.5)])))
    assert abs(fit.slope[0]) <= 1e-12
    assert abs(fit.intercept[0] - 3.5) <= 1e-12


def test_fit_matches_normal_equations():
    latent = np.random.default_rng(0).normal(size=(64, 8))
    fit = fit_line(split_latent(latent))
    slope, intercept = normal_equation_fit(latent[:, 0].tolist(), latent[:, 1:])
    assert np.max(np.abs(fit.slope - slope)) <= 1e-9
    assert np.max(np.abs(fit.intercept - intercept)) <= 1e-9


def test_fit_degenerate_variance():
    latent = np.column_stack([np.full(5, 2.0), np.arange(5.0)])
    with pytest.raises(DegenerateVarianceError):
        fit_line(split_latent(latent))
    ridge = fit_line(split_latent(latent), ridge=1e-8)
    assert np.all(np.isfinite(ridge.slope))


def test_per_class_single_class_matches_whole_batch():
    latent = np.random.default_rng(1).normal(size=(10, 3))
    fits = fit_line_per_class(latent, np.zeros(10, dtype=int), 3)
    whole = fit_line(split_latent(latent))
    assert np.array_equal(fits.fits[0].slope, whole.slope)
    assert np.array_equal(fits.fits[0].intercept, whole.intercept)
    assert fits.skipped_classes == {1, 2}
    assert fits.fitted_classes == [0]


def test_per_class_single_sample_skipped():
    latent = np.random.default_rng(2).normal(size=(5, 3))
    fits = fit_line_per_class(latent, [0, 0, 0, 0, 1], 2)
    assert fits.skipped_classes == {1}
    assert fits.fits[1] is None


def test_per_class_matches_manual_filter():
    rng = np.random.default_rng(3)
    latent = rng.normal(size=(20, 4))
    labels = rng.integers(0, 2, size=20)
    fits = fit_line_per_class(latent, labels, 2)
    for c in (0, 1):
        subset = np.array([row for row, y in zip(latent, labels) if y == c])
        expected = fit_line(split_latent(subset))
        assert np.max(np.abs(fits.fits[c].slope - expected.slope)) <= 1e-12
        assert np.max(np.abs(fits.fits[c].intercept - expected.intercept)) <= 1e-12


def test_per_class_min_samples_and_degenerate():
    latent = np.column_stack([np.r_[np.full(3, 1.0), np.arange(3.0)], np.arange(6.0)])
    fits = fit_line_per_class(latent, [0, 0, 0, 1, 1, 1], 2)
    assert fits.skipped_classes == {0}
    fits = fit_line_per_class(latent, [0, 0, 0, 1, 1, 1], 2, min_samples=4)
    assert fits.skipped_classes == {0, 1}


def test_backward_zero_upstream():
    split = split_latent(np.random.default_rng(4).normal(size=(6, 3)))
    grad = fit_line_backward(split, np.zeros(2), np.zeros(2))
    assert grad.shape == (6, 3)
    assert not np.any(grad)


def test_backward_two_points():
    split = split_latent(np.array([[-1.0, -1.0], [1.0, 1.0]]))
    assert fit_line(split).slope[0] == 1.0
    grad = fit_line_backward(split, np.array([1.0]), np.array([0.0]))
    assert np.allclose(grad[:, 1], [-0.5, 0.5], atol=1e-15)


@pytest.mark.parametrize("independent_dim", [0, 2])
def test_backward_matches_finite_differences(independent_dim):
    rng = np.random.default_rng(5)
    latent = rng.normal(size=(16, 4))
    gs, gi = rng.normal(size=3), rng.normal(size=3)

    def f(m):
        fit = fit_line(split_latent(m, independent_dim))
        return float(gs @ fit.slope + gi @ fit.intercept)

    analytic = fit_line_backward(split_latent(latent, independent_dim), gs, gi)
    h = 1e-6
    for i in range(16):
        for j in range(4):
            plus, minus = latent.copy(), latent.copy()
            plus[i, j] += h
            minus[i, j] -= h
            numeric = (f(plus) - f(minus)) / (2 * h)
            a = analytic[i, j]
            assert abs(a - numeric) / max(abs(a), abs(numeric), 1e-8) <= 1e-5


def test_class_backward_scatters_rows():
    rng = np.random.default_rng(6)
    latent = rng.normal(size=(12, 3))
    labels = np.arange(12) % 3
    fits = fit_line_per_class(latent, labels, 3)
    gs = {1: rng.normal(size=2)}
    gi = {1: rng.normal(size=2)}
    grad = class_fits_backward(latent, fits, gs, gi)
    assert not np.any(grad[labels != 1])
    expected = fit_line_backward(split_latent(latent[labels == 1]), gs[1], gi[1])
    assert np.array_equal(grad[labels == 1], expected)
