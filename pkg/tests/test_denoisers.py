import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from octdenoise.datasets import corrupt, smooth_step
from octdenoise.denoisers import (
    DiffusionParams,
    TvParams,
    WaveletParams,
    anisotropic_diffusion,
    bayes_threshold,
    chambolle_iterates,
    conductance,
    divergence,
    estimate_noise_sigma,
    gradient,
    rof_energy,
    soft_threshold,
    tv_denoise,
    wavelet_denoise,
)
from octdenoise.metrics import psnr
from octdenoise.wavelets import Basis, Pyramid, dwt2, idwt2


def noisy_step(seed=0, size=64):
    clean = smooth_step(size)
    return clean, corrupt(clean, 0.1, seed=seed)


# ---------------------------------------------------------------- TV


def scripted_chambolle(f, lam, tau, max_iter, tol):
    """Loop-based re-statement of the dual projection iteration."""
    h, w = f.shape

    def grad(u):
        gx = np.zeros((h, w))
        gy = np.zeros((h, w))
        for i in range(h):
            for j in range(w):
                if i < h - 1:
                    gx[i, j] = u[i + 1, j] - u[i, j]
                if j < w - 1:
                    gy[i, j] = u[i, j + 1] - u[i, j]
        return gx, gy

    def div(px, py):
        d = np.zeros((h, w))
        for i in range(h):
            for j in range(w):
                a = px[i, j] if i < h - 1 else 0.0
                b = px[i - 1, j] if i > 0 else 0.0
                c = py[i, j] if j < w - 1 else 0.0
                e = py[i, j - 1] if j > 0 else 0.0
                d[i, j] = (a - b) + (c - e)
        return d

    px = np.zeros((h, w))
    py = np.zeros((h, w))
    u = f.copy()
    for _ in range(max_iter):
        gx, gy = grad(div(px, py) - f / lam)
        n = np.sqrt(gx**2 + gy**2)
        px = (px + tau * gx) / (1 + tau * n)
        py = (py + tau * gy) / (1 + tau * n)
        u_new = f - lam * div(px, py)
        if np.abs(u_new - u).max() < tol:
            return u_new
        u = u_new
    return u


def test_gradient_divergence_adjoint():
    rng = np.random.default_rng(0)
    u, p = rng.random((6, 9)), rng.standard_normal((2, 6, 9))
    assert np.vdot(gradient(u), p) == pytest.approx(-np.vdot(u, divergence(p)), rel=1e-12)


def test_tv_constant_fixed_point():
    img = np.full((10, 10), 0.42)
    np.testing.assert_array_equal(tv_denoise(img), img)


def test_tv_small_lambda_is_identity():
    _, noisy = noisy_step(1, 32)
    out = tv_denoise(noisy, TvParams(lam=1e-6))
    assert np.abs(out - noisy).max() < 1e-4


def test_tv_matches_scripted_reference_and_lowers_energy():
    clean = smooth_step(16, width=0.5)
    f = corrupt(clean, 0.1, seed=2)
    params = TvParams(lam=0.1, max_iter=60, tol=1e-7)
    u = None
    for u, _ in chambolle_iterates(f, params):
        pass
    ref = scripted_chambolle(f, 0.1, params.tau, params.max_iter, params.tol)
    assert np.abs(u - ref).max() < 1e-8
    assert rof_energy(u, f, 0.1) < rof_energy(f, f, 0.1)


def test_tv_dual_bounded():
    _, f = noisy_step(3, 32)
    for _, p in chambolle_iterates(f, TvParams()):
        assert np.sqrt(p[0] ** 2 + p[1] ** 2).max() <= 1 + 1e-12


def test_tv_stops_on_tolerance():
    _, f = noisy_step(4, 32)
    n = sum(1 for _ in chambolle_iterates(f, TvParams(tol=1e-2, max_iter=500)))
    assert n < 500


@pytest.mark.parametrize("kwargs", [dict(lam=0), dict(tau=0.3), dict(max_iter=0), dict(tol=0)])
def test_tv_invalid_params(kwargs):
    with pytest.raises(ValueError):
        TvParams(**kwargs)


# ---------------------------------------------------------------- wavelets


def test_haar_pair():
    a = 0.37
    pyr = dwt2(np.full((2, 2), a), 1, Basis.HAAR)
    # separable: sqrt(2) per axis
    assert pyr.approx[0, 0] == pytest.approx(2 * a, abs=1e-15)
    assert all(np.all(b == 0) for b in pyr.details[0])
    row = dwt2(np.array([[a, a], [0.0, 0.0]]), 1)
    # along the row the pair (a, a) gives approximation a*sqrt(2) and no detail
    assert row.details[0][1][0, 0] == 0.0


@pytest.mark.parametrize("basis", list(Basis))
def test_perfect_reconstruction(basis):
    img = np.random.default_rng(5).random((64, 64))
    pyr = dwt2(img, 3, basis)
    assert np.abs(idwt2(pyr) - img).max() < 1e-10
    assert pyr.norm() == pytest.approx(np.linalg.norm(img), rel=1e-10)


@pytest.mark.parametrize("shape", [(37, 50), (20, 64), (33, 33)])
def test_reconstruction_with_padding(shape):
    img = np.random.default_rng(6).random(shape)
    pyr = dwt2(img, 3, Basis.DB4)
    assert pyr.padded_shape[0] % 8 == 0 and pyr.padded_shape[1] % 8 == 0
    assert np.abs(idwt2(pyr) - img).max() < 1e-10


def test_dwt_linear():
    rng = np.random.default_rng(7)
    x, y = rng.random((32, 32)), rng.random((32, 32))
    a, b = 1.7, -0.3
    lhs = dwt2(a * x + b * y, 3, Basis.DB4).arrays()
    px, py = dwt2(x, 3, Basis.DB4).arrays(), dwt2(y, 3, Basis.DB4).arrays()
    for l, u, v in zip(lhs, px, py):
        assert np.abs(l - (a * u + b * v)).max() < 1e-10


def test_dwt_too_deep():
    with pytest.raises(ValueError):
        dwt2(np.zeros((8, 8)), 4)


def test_soft_threshold():
    assert soft_threshold(np.array([0.5]), 0.2)[0] == pytest.approx(0.3)
    assert soft_threshold(np.array([-0.1]), 0.2)[0] == 0
    c = np.random.default_rng(8).standard_normal(10)
    np.testing.assert_array_equal(soft_threshold(c, 0.0), c)
    with pytest.raises(ValueError):
        soft_threshold(c, -1)


def test_bayes_threshold_cases():
    rng = np.random.default_rng(9)
    band = rng.standard_normal(1000) * 0.05
    assert bayes_threshold(band, 0.0) == 0.0
    t = bayes_threshold(band, 0.2)
    assert t == pytest.approx(np.abs(band).max())
    assert not soft_threshold(band, t).any()


def test_bayes_threshold_sample_statistics():
    rng = np.random.default_rng(10)
    n = 200_000
    band = rng.normal(0, 0.2, n) + rng.normal(0, 0.1, n)
    t = bayes_threshold(band, 0.1)
    # sigma_x estimate has relative sd ~ 1/sqrt(2n) * (var_y/var_x); 1% is > 5 sd
    assert t == pytest.approx(0.01 / 0.2, rel=0.01)


def test_noise_estimate():
    noise = np.random.default_rng(11).normal(0, 0.1, (128, 128))
    pyr = dwt2(0.5 + noise, 1)
    assert estimate_noise_sigma(pyr) == pytest.approx(0.1, rel=0.05)


def test_wavelet_constant_unchanged():
    img = np.full((32, 32), 0.6)
    np.testing.assert_allclose(wavelet_denoise(img), img, atol=1e-12)


def test_wavelet_is_composition_of_sub_ops():
    _, f = noisy_step(12)
    params = WaveletParams()
    pyr = dwt2(f, params.levels, params.basis)
    sigma = estimate_noise_sigma(pyr)
    details = []
    for level in pyr.details:
        details.append(tuple(soft_threshold(b, bayes_threshold(b, sigma)) for b in level))
    manual = np.clip(idwt2(Pyramid(pyr.approx, details, pyr.basis, pyr.shape, pyr.padded_shape)), 0, 1)
    np.testing.assert_array_equal(wavelet_denoise(f, params), manual)


def test_wavelet_improves_psnr():
    clean, f = noisy_step(13)
    assert psnr(clean, wavelet_denoise(f)) >= psnr(clean, f) + 2


# ---------------------------------------------------------------- diffusion


def test_conductance_at_zero():
    for kind in ("exponential", "rational"):
        assert conductance(np.array([0.0]), 0.3, kind)[0] == 1.0


def test_diffusion_constant_unchanged():
    img = np.full((9, 9), 0.3)
    np.testing.assert_array_equal(anisotropic_diffusion(img, DiffusionParams(iterations=50)), img)


def test_diffusion_two_pixel_step():
    out = anisotropic_diffusion(np.array([[0.2, 0.8]]), DiffusionParams(iterations=1, kappa=0.5, step=0.25))
    delta = 0.25 * math.exp(-1.44) * 0.6
    assert out[0, 0] == pytest.approx(0.2 + delta, abs=1e-15)
    assert out[0, 1] == pytest.approx(0.8 - delta, abs=1e-15)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from(["exponential", "rational"]))
def test_diffusion_mean_and_max_principle(seed, kind):
    img = np.random.default_rng(seed).random((24, 24))
    out = anisotropic_diffusion(img, DiffusionParams(iterations=100, kappa=0.2, conductance=kind))
    assert abs(out.mean() - img.mean()) < 1e-6
    assert out.min() >= img.min() - 1e-12 and out.max() <= img.max() + 1e-12


@pytest.mark.parametrize("kwargs", [dict(step=0.3), dict(kappa=0), dict(iterations=0), dict(conductance="x")])
def test_diffusion_invalid_params(kwargs):
    with pytest.raises(ValueError):
        DiffusionParams(**kwargs)


# ---------------------------------------------------------------- shared properties


@pytest.mark.parametrize("fn", [tv_denoise, wavelet_denoise, anisotropic_diffusion])
def test_denoisers_deterministic_and_improve(fn):
    clean, f = noisy_step(14)
    a, b = fn(f), fn(f)
    np.testing.assert_array_equal(a, b)
    assert a.min() >= 0 and a.max() <= 1
    assert psnr(clean, a) >= psnr(clean, f) + 2
