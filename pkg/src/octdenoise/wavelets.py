"""Orthonormal separable 2-D discrete wavelet transform (Haar and Daubechies-4).

Filtering is periodic, which keeps each level exactly orthonormal. Images
whose extents are not multiples of ``2**levels`` are symmetrically padded
before the transform; :func:`idwt2` crops the padding away again.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np


class Basis(str, enum.Enum):
    HAAR = "haar"
    DB4 = "db4"


_S3 = math.sqrt(3.0)
_LOWPASS = {
    Basis.HAAR: np.array([1.0, 1.0]) / math.sqrt(2.0),
    # Daubechies' 4-tap filter (two vanishing moments)
    Basis.DB4: np.array([1 + _S3, 3 + _S3, 3 - _S3, 1 - _S3]) / (4 * math.sqrt(2.0)),
}


def filters(basis) -> tuple:
    h = _LOWPASS[Basis(basis)]
    g = h[::-1] * np.where(np.arange(len(h)) % 2 == 0, 1.0, -1.0)
    return h, g


@dataclass
class Pyramid:
    """Wavelet coefficients; ``details[0]`` is the finest level.

    Each detail level is a ``(horizontal, vertical, diagonal)`` triple.
    """

    approx: np.ndarray
    details: list
    basis: Basis
    shape: tuple
    padded_shape: tuple

    @property
    def levels(self) -> int:
        return len(self.details)

    def arrays(self) -> list:
        return [self.approx] + [band for level in self.details for band in level]

    def norm(self) -> float:
        return math.sqrt(sum(float(np.sum(a * a)) for a in self.arrays()))


def _analysis(x: np.ndarray, h: np.ndarray, g: np.ndarray, axis: int) -> tuple:
    x = np.moveaxis(x, axis, -1)
    n = x.shape[-1]
    lo = np.zeros(x.shape[:-1] + (n // 2,))
    hi = np.zeros_like(lo)
    for k, (hk, gk) in enumerate(zip(h, g)):
        shifted = np.roll(x, -k, axis=-1)[..., ::2]
        lo += hk * shifted
        hi += gk * shifted
    return np.moveaxis(lo, -1, axis), np.moveaxis(hi, -1, axis)


def _synthesis(lo: np.ndarray, hi: np.ndarray, h: np.ndarray, g: np.ndarray, axis: int) -> np.ndarray:
    lo = np.moveaxis(lo, axis, -1)
    hi = np.moveaxis(hi, axis, -1)
    half = lo.shape[-1]
    n = 2 * half
    out = np.zeros(lo.shape[:-1] + (n,))
    base = 2 * np.arange(half)
    for k, (hk, gk) in enumerate(zip(h, g)):
        # indices are distinct for fixed k, so fancy-index accumulation is safe
        out[..., (base + k) % n] += hk * lo + gk * hi
    return np.moveaxis(out, -1, axis)


def max_levels(shape) -> int:
    return int(math.floor(math.log2(min(shape))))


def dwt2(image: np.ndarray, levels: int, basis=Basis.HAAR) -> Pyramid:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError("dwt2 expects a 2-D image")
    if levels < 1 or levels > max_levels(image.shape):
        raise ValueError(f"{levels} levels is too deep for a {image.shape} image")
    basis = Basis(basis)
    h, g = filters(basis)
    block = 2**levels
    pads = [(0, (-n) % block) for n in image.shape]
    x = np.pad(image, pads, mode="symmetric") if any(p for _, p in pads) else image
    padded_shape = x.shape
    details = []
    for _ in range(levels):
        lo, hi = _analysis(x, h, g, axis=1)
        ll, lh = _analysis(lo, h, g, axis=0)
        hl, hh = _analysis(hi, h, g, axis=0)
        details.append((lh, hl, hh))
        x = ll
    return Pyramid(x, details, basis, image.shape, padded_shape)


def idwt2(pyramid: Pyramid) -> np.ndarray:
    h, g = filters(pyramid.basis)
    x = pyramid.approx
    for lh, hl, hh in reversed(pyramid.details):
        lo = _synthesis(x, lh, h, g, axis=0)
        hi = _synthesis(hl, hh, h, g, axis=0)
        x = _synthesis(lo, hi, h, g, axis=1)
    rows, cols = pyramid.shape
    return x[:rows, :cols]
