"""Benchmark harness: every method sees the same corrupted test images.

For each test image the corruption seed is derived from ``(seed, index)``,
so a method's row is independent of which other methods run alongside it
and of the order images are visited. The ``corrupted`` row scores the noisy
input itself.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .datasets import LabeledSample, corrupt, derive_seed
from .denoisers import DENOISERS
from .metrics import MetricReport, accuracy, finite_mean_std, psnr
from .models import Autoencoder, Classifier

METHODS = ("corrupted", "tv", "wavelet", "ad", "ae")
REPORT_FIELDS = ("method", "psnr_mean", "psnr_std", "acc", "mean_ms", "n")


class BenchError(ValueError):
    pass


@dataclass
class BenchConfig:
    methods: tuple = METHODS
    sigma: float = 0.1
    seed: int = 0
    classifier: Optional[str] = None
    autoencoder: Optional[str] = None

    def __post_init__(self):
        self.methods = tuple(self.methods)
        if not self.methods:
            raise BenchError("no methods requested")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise BenchError(f"unknown method(s) {unknown}; choose from {', '.join(METHODS)}")
        if len(set(self.methods)) != len(self.methods):
            raise BenchError("methods listed twice")
        if "ae" in self.methods and not (self.classifier and self.autoencoder):
            raise BenchError("method 'ae' needs both a classifier and an autoencoder checkpoint")
        if self.sigma < 0:
            raise BenchError("sigma must be non-negative")


@dataclass
class BenchResult:
    reports: list
    psnrs: dict = field(default_factory=dict)
    predictions: dict = field(default_factory=dict)
    # first few (clean, noisy, {method: output}) triples, kept for figures
    examples: list = field(default_factory=list)


def corruption_seed(seed: int, index: int) -> int:
    return derive_seed(seed, index)


def denoise_image(method: str, noisy: np.ndarray, autoencoder: Optional[Autoencoder] = None) -> np.ndarray:
    """Run one method with its frozen defaults on a single image."""
    if method == "corrupted":
        return noisy
    if method == "ae":
        if autoencoder is None:
            raise BenchError("method 'ae' needs an autoencoder")
        return autoencoder.denoise(noisy)
    try:
        fn = DENOISERS[method]
    except KeyError:
        raise BenchError(f"unknown method {method!r}") from None
    return fn(noisy)


def _check_size(samples, model, what: str) -> None:
    if model is None:
        return
    size = model.config.input_size
    shape = samples[0].image.shape
    if shape != (size, size):
        raise BenchError(f"test images are {shape[0]}x{shape[1]} but the {what} expects {size}x{size}")


def run_bench(samples: Sequence[LabeledSample], methods: Sequence[str] = METHODS, sigma: float = 0.1, seed: int = 0,
              classifier: Optional[Classifier] = None, autoencoder: Optional[Autoencoder] = None,
              keep_examples: int = 0) -> BenchResult:
    """Score each method on ``samples``.

    Accuracy is the frozen classifier's on the method's output; it is NaN
    when no classifier is given.
    """
    if not samples:
        raise BenchError("test split is empty")
    _check_size(samples, classifier, "classifier")
    _check_size(samples, autoencoder, "autoencoder")

    outputs = {m: [] for m in methods}
    psnrs = {m: [] for m in methods}
    millis = {m: [] for m in methods}
    examples = []
    for i, s in enumerate(samples):
        noisy = corrupt(s.image, sigma, corruption_seed(seed, i))
        keep = {}
        for m in methods:
            t0 = time.perf_counter()
            out = denoise_image(m, noisy, autoencoder)
            millis[m].append(1000.0 * (time.perf_counter() - t0))
            psnrs[m].append(psnr(s.image, out))
            outputs[m].append(out)
            keep[m] = out
        if i < keep_examples:
            examples.append((s.image, noisy, keep))

    labels = np.array([int(s.label) for s in samples])
    reports, predictions = [], {}
    for m in methods:
        acc = np.nan
        if classifier is not None:
            predictions[m] = classifier.predict(np.stack(outputs[m])[:, None])
            acc = accuracy(predictions[m], labels)
        mean, std = finite_mean_std(psnrs[m])
        reports.append(MetricReport(m, mean, std, acc, float(np.mean(millis[m])), len(samples)))
    return BenchResult(reports, psnrs, predictions, examples)


def write_report(path, reports) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_FIELDS)
        for r in reports:
            w.writerow([r.method, repr(r.psnr_mean), repr(r.psnr_std), repr(r.accuracy),
                        f"{r.mean_ms_per_image:.3f}", r.n_images])


def read_report(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def format_summary(reports) -> str:
    lines = [f"{'method':<10} {'PSNR [dB]':>16} {'ACC [%]':>8} {'ms/img':>9} {'n':>6}"]
    for r in reports:
        acc = "-" if np.isnan(r.accuracy) else f"{r.accuracy:.1f}"
        lines.append(f"{r.method:<10} {r.psnr_mean:>8.2f} +- {r.psnr_std:<5.2f} {acc:>8} "
                     f"{r.mean_ms_per_image:>9.2f} {r.n_images:>6}")
    return "\n".join(lines)
