import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from octdenoise.metrics import (
    PSNR_IDENTICAL,
    MetricReport,
    accuracy,
    confusion_matrix,
    finite_mean_std,
    psnr,
)


def test_psnr_identical():
    img = np.random.default_rng(0).random((8, 8))
    assert psnr(img, img) == PSNR_IDENTICAL == math.inf


@pytest.mark.parametrize("delta,expected", [(0.1, 20.0), (0.5, 10 * math.log10(4))])
def test_psnr_uniform_difference(delta, expected):
    ref = np.full((16, 16), 0.25)
    assert abs(psnr(ref, ref + delta) - expected) < 1e-6
    assert abs(expected - {0.1: 20.0, 0.5: 6.0206}[delta]) < 1e-4


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros((2, 2)), np.zeros((2, 3)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.001, 0.4), st.floats(1.05, 2.0))
def test_psnr_symmetric_and_decreasing(seed, d, factor):
    rng = np.random.default_rng(seed)
    a = rng.random((8, 8))
    b = rng.random((8, 8))
    assert psnr(a, b) == psnr(b, a)
    sign = rng.choice([-1.0, 1.0], (8, 8))
    assert psnr(a, a + d * sign) > psnr(a, a + d * factor * sign)


def test_finite_mean_excludes_infinite():
    with pytest.warns(RuntimeWarning):
        mean, std = finite_mean_std([20.0, math.inf, 22.0])
    assert mean == 21.0 and std == 1.0
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert finite_mean_std([1.0, 3.0]) == (2.0, 1.0)


def test_accuracy():
    assert accuracy([0, 1, 2, 3], [0, 1, 2, 3]) == 100.0
    assert accuracy([0, 1, 0, 0], [0, 1, 2, 3]) == 50.0
    with pytest.raises(ValueError):
        accuracy([], [])
    with pytest.raises(ValueError):
        accuracy([1], [1, 2])


def test_accuracy_random_guessing():
    rng = np.random.default_rng(1)
    true = np.repeat(np.arange(4), 2500)
    pred = rng.integers(0, 4, true.size)
    assert 23 <= accuracy(pred, true) <= 27


def test_confusion_matrix():
    np.testing.assert_array_equal(confusion_matrix([0, 1, 2, 3], [0, 1, 2, 3]), np.eye(4, dtype=int))
    cm = confusion_matrix([3], [2])
    assert cm[2, 3] == 1 and cm.sum() == 1
    with pytest.raises(ValueError):
        confusion_matrix([4], [0])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=50))
def test_confusion_consistent_with_accuracy(pairs):
    pred, true = map(list, zip(*pairs))
    cm = confusion_matrix(pred, true)
    assert 100 * np.trace(cm) / len(true) == pytest.approx(accuracy(pred, true))
    np.testing.assert_array_equal(cm.sum(axis=1), np.bincount(true, minlength=4))


def test_metric_report_invariants():
    MetricReport("tv", 28.0, 1.0, 50.0, 3.2, 10)
    with pytest.raises(ValueError):
        MetricReport("tv", 28.0, 1.0, 150.0, 3.2, 10)
    with pytest.raises(ValueError):
        MetricReport("tv", 28.0, -1.0, 50.0, 3.2, 10)
    with pytest.raises(ValueError):
        MetricReport("tv", 28.0, 1.0, 50.0, 3.2, 0)
