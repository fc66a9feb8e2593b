"""Classical baselines: Chambolle TV, BayesShrink wavelet shrinkage, Perona-Malik diffusion.

All three are deterministic pure functions of ``(image, params)`` and use
replicate (Neumann) boundaries, so constant images are exact fixed points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .wavelets import Basis, Pyramid, dwt2, idwt2

# ---------------------------------------------------------------- total variation


@dataclass(frozen=True)
class TvParams:
    lam: float = 0.12
    max_iter: int = 200
    tol: float = 1e-5
    tau: float = 0.248

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("TV weight lam must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not 0 < self.tau <= 0.25:
            raise ValueError("tau must lie in (0, 0.25]")


def gradient(u: np.ndarray) -> np.ndarray:
    """Forward differences, zero across the last row/column (Neumann)."""
    g = np.zeros((2,) + u.shape)
    g[0, :-1] = u[1:] - u[:-1]
    g[1, :, :-1] = u[:, 1:] - u[:, :-1]
    return g


def divergence(p: np.ndarray) -> np.ndarray:
    """Backward differences; the negative adjoint of :func:`gradient`."""
    px = p[0].copy()
    py = p[1].copy()
    px[-1] = 0.0
    py[:, -1] = 0.0
    d = px + py
    d[1:] -= px[:-1]
    d[:, 1:] -= py[:, :-1]
    return d


def total_variation(u: np.ndarray) -> float:
    g = gradient(u)
    return float(np.sqrt(g[0] ** 2 + g[1] ** 2).sum())


def rof_energy(u: np.ndarray, f: np.ndarray, lam: float) -> float:
    return total_variation(u) + float(np.sum((u - f) ** 2)) / (2 * lam)


def chambolle_iterates(f: np.ndarray, params: TvParams) -> Iterator[tuple]:
    """Yield ``(u, p)`` after each dual projection step.

    Stops after ``max_iter`` steps or once the primal iterate changes by
    less than ``tol`` in max-norm.
    """
    f = np.asarray(f, dtype=np.float64)
    lam, tau = params.lam, params.tau
    p = np.zeros((2,) + f.shape)
    u = f.copy()
    for _ in range(params.max_iter):
        g = gradient(divergence(p) - f / lam)
        norm = np.sqrt(g[0] ** 2 + g[1] ** 2)
        p = (p + tau * g) / (1.0 + tau * norm)
        u_next = f - lam * divergence(p)
        yield u_next, p
        done = np.abs(u_next - u).max() < params.tol
        u = u_next
        if done:
            return


def tv_denoise(image: np.ndarray, params: TvParams = TvParams()) -> np.ndarray:
    u = np.asarray(image, dtype=np.float64)
    for u, _ in chambolle_iterates(image, params):
        pass
    return np.clip(u, 0.0, 1.0)


# ---------------------------------------------------------------- wavelet shrinkage


@dataclass(frozen=True)
class WaveletParams:
    levels: int = 3
    basis: Basis = Basis.HAAR
    thresholding: str = "soft"

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        object.__setattr__(self, "basis", Basis(self.basis))
        if self.thresholding != "soft":
            raise ValueError("only soft thresholding is supported")


def soft_threshold(coeffs: np.ndarray, t: float) -> np.ndarray:
    if t < 0:
        raise ValueError("threshold must be non-negative")
    return np.sign(coeffs) * np.maximum(np.abs(coeffs) - t, 0.0)


def estimate_noise_sigma(pyramid: Pyramid) -> float:
    """Robust median estimate from the finest diagonal subband."""
    return float(np.median(np.abs(pyramid.details[0][2])) / 0.6745)


def bayes_threshold(subband: np.ndarray, sigma_noise: float) -> float:
    """BayesShrink threshold ``sigma_noise**2 / sigma_x`` for one detail subband.

    The signal spread is ``sqrt(max(mean(c**2) - sigma_noise**2, 0))``. When it
    vanishes the whole subband is treated as noise and the threshold is
    ``max|c|``.
    """
    subband = np.asarray(subband)
    if subband.size == 0:
        raise ValueError("empty subband")
    if sigma_noise == 0:
        return 0.0
    var_y = float(np.mean(subband * subband))
    sigma_x = math.sqrt(max(var_y - sigma_noise**2, 0.0))
    if sigma_x == 0:
        return float(np.abs(subband).max())
    return sigma_noise**2 / sigma_x


def wavelet_denoise(image: np.ndarray, params: WaveletParams = WaveletParams()) -> np.ndarray:
    pyr = dwt2(image, params.levels, params.basis)
    sigma = estimate_noise_sigma(pyr)
    details = [tuple(soft_threshold(b, bayes_threshold(b, sigma)) for b in level) for level in pyr.details]
    shrunk = Pyramid(pyr.approx, details, pyr.basis, pyr.shape, pyr.padded_shape)
    return np.clip(idwt2(shrunk), 0.0, 1.0)


# ---------------------------------------------------------------- anisotropic diffusion


@dataclass(frozen=True)
class DiffusionParams:
    iterations: int = 20
    kappa: float = 0.15
    step: float = 0.25
    conductance: str = "exponential"

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not 0 < self.step <= 0.25:
            raise ValueError("step must lie in (0, 0.25]")
        if self.conductance not in ("exponential", "rational"):
            raise ValueError(f"unknown conductance {self.conductance!r}")


def conductance(grad: np.ndarray, kappa: float, kind: str = "exponential") -> np.ndarray:
    r = (np.abs(grad) / kappa) ** 2
    if kind == "exponential":
        return np.exp(-r)
    if kind == "rational":
        return 1.0 / (1.0 + r)
    raise ValueError(f"unknown conductance {kind!r}")


def anisotropic_diffusion(image: np.ndarray, params: DiffusionParams = DiffusionParams()) -> np.ndarray:
    u = np.asarray(image, dtype=np.float64).copy()
    for _ in range(params.iterations):
        # one difference per edge; zero flux through the border
        dv = u[1:] - u[:-1]
        dh = u[:, 1:] - u[:, :-1]
        fv = conductance(dv, params.kappa, params.conductance) * dv
        fh = conductance(dh, params.kappa, params.conductance) * dh
        update = np.zeros_like(u)
        update[:-1] += fv  # south neighbour
        update[1:] -= fv  # north neighbour
        update[:, :-1] += fh  # east
        update[:, 1:] -= fh  # west
        u += params.step * update
    return np.clip(u, 0.0, 1.0)


DENOISERS = {
    "tv": tv_denoise,
    "wavelet": wavelet_denoise,
    "ad": anisotropic_diffusion,
}
