"""PSNR, classification accuracy and per-method summary rows."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

#: returned by :func:`psnr` for identical images
PSNR_IDENTICAL = math.inf


def psnr(reference: np.ndarray, test: np.ndarray, max_value: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``PSNR_IDENTICAL`` when the MSE is zero."""
    reference = np.asarray(reference, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if reference.shape != test.shape:
        raise ValueError(f"psnr: shape mismatch {reference.shape} vs {test.shape}")
    err = float(np.mean((reference - test) ** 2))
    if err == 0:
        return PSNR_IDENTICAL
    return 10.0 * math.log10(max_value**2 / err)


def finite_mean_std(values: Sequence[float]) -> tuple:
    """Mean and population std of the finite values, warning about dropped ones."""
    arr = np.asarray(values, dtype=np.float64)
    finite = arr[np.isfinite(arr)]
    if finite.size < arr.size:
        warnings.warn(f"excluding {arr.size - finite.size} infinite PSNR value(s) from the mean", RuntimeWarning)
    if finite.size == 0:
        return math.nan, math.nan
    return float(finite.mean()), float(finite.std())


def accuracy(predicted: Sequence[int], true: Sequence[int]) -> float:
    predicted = np.asarray(predicted)
    true = np.asarray(true)
    if predicted.shape != true.shape:
        raise ValueError("predicted and true labels differ in length")
    if true.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return 100.0 * float(np.count_nonzero(predicted == true)) / true.size


def confusion_matrix(predicted: Sequence[int], true: Sequence[int], k: int = 4) -> np.ndarray:
    """Counts with rows indexed by true class and columns by predicted class."""
    predicted = np.asarray(predicted, dtype=np.int64)
    true = np.asarray(true, dtype=np.int64)
    if predicted.shape != true.shape:
        raise ValueError("predicted and true labels differ in length")
    for arr in (predicted, true):
        if arr.size and (arr.min() < 0 or arr.max() >= k):
            raise ValueError(f"labels must lie in [0, {k})")
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (true, predicted), 1)
    return cm


@dataclass
class MetricReport:
    method: str
    psnr_mean: float
    psnr_std: float
    accuracy: float
    mean_ms_per_image: float
    n_images: int

    def __post_init__(self):
        if self.n_images < 1:
            raise ValueError("n_images must be >= 1")
        if not math.isnan(self.accuracy) and not 0 <= self.accuracy <= 100:
            raise ValueError("accuracy must lie in [0, 100]")
        if self.psnr_std < 0:
            raise ValueError("psnr_std must be non-negative")
