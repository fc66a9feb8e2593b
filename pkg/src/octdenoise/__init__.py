"""Denoising retinal OCT images with a classifier-regularised autoencoder.

Everything runs on numpy: a small reverse-mode autodiff engine
(:mod:`octdenoise.tensor`), the residual classifier and convolutional
autoencoder built on it, classical TV / wavelet / diffusion baselines, and a
benchmark harness that scores them side by side.
"""

__version__ = "0.1.0"
