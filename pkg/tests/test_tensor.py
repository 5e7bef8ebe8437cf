import math

import numpy as np
import pytest

from dlsa import tensor
from dlsa.errors import EmptyInputError, ShapeError


def triple_loop_matmul(a, b):
    out = [[0.0] * len(b[0]) for _ in range(len(a))]
    for i in range(len(a)):
        for j in range(len(b[0])):
            s = 0.0
            for k in range(len(b)):
                s += a[i][k] * b[k][j]
            out[i][j] = s
    return out


def test_matmul_identity():
    m = np.arange(9.0).reshape(3, 3)
    assert np.array_equal(tensor.matmul(tensor.identity(3), m), m)


def test_matmul_annihilator():
    m = np.random.default_rng(0).normal(size=(3, 4))
    assert np.array_equal(tensor.matmul(tensor.zeros(2, 3), m), np.zeros((2, 4)))


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(4, 3)), rng.normal(size=(3, 5))
    expected = np.array(triple_loop_matmul(a.tolist(), b.tolist()))
    assert tensor.matmul(a, b).shape == (4, 5)
    assert np.max(np.abs(tensor.matmul(a, b) - expected)) <= 1e-12


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        tensor.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_column_mean_hand_cases():
    assert tensor.column_mean([[1.0, 2.0], [3.0, 4.0]]).tolist() == [2.0, 3.0]
    assert tensor.column_mean([[5.0, 6.0]]).tolist() == [5.0, 6.0]


def test_column_mean_matches_compensated_sum():
    m = np.random.default_rng(2).normal(size=(64, 8))
    expected = [math.fsum(m[:, j]) / 64 for j in range(8)]
    assert np.max(np.abs(tensor.column_mean(m) - expected)) <= 1e-12


def test_column_mean_empty():
    with pytest.raises(EmptyInputError):
        tensor.column_mean(np.zeros((0, 3)))


def test_frobenius_norm_sq():
    assert tensor.frobenius_norm_sq([0.0, 0.0, 0.0]) == 0.0
    assert tensor.frobenius_norm_sq([3.0, 4.0]) == 25.0
    v = np.random.default_rng(3).normal(size=100)
    assert abs(tensor.frobenius_norm_sq(v) - sum(x * x for x in v.tolist())) <= 1e-12


def test_dot():
    assert tensor.dot([1.0, 0.0], [0.0, 1.0]) == 0.0
    rng = np.random.default_rng(4)
    v = rng.normal(size=16)
    assert tensor.dot(v, v) == tensor.frobenius_norm_sq(v)
    a, b = rng.normal(size=16), rng.normal(size=16)
    loop = 0.0
    for x, y in zip(a.tolist(), b.tolist()):
        loop += x * y
    assert abs(tensor.dot(a, b) - loop) <= 1e-12
    with pytest.raises(ShapeError):
        tensor.dot([1.0, 2.0], [1.0])


def test_argmax_row():
    assert tensor.argmax_row([[0.1, 0.9, 0.0]], 0) == 1
    assert tensor.argmax_row([[0.5, 0.5]], 0) == 0
    row = np.random.default_rng(5).normal(size=31)
    best = 0
    for j in range(1, 31):
        if row[j] > row[best]:
            best = j
    assert tensor.argmax_row(row[None, :], 0) == best


def test_argmax_row_out_of_range():
    with pytest.raises(IndexError):
        tensor.argmax_row([[1.0, 2.0]], 1)
    with pytest.raises(IndexError):
        tensor.argmax_row([[1.0, 2.0]], -1)
