"""ADSN (asymptotic discrete spot noise) microtexture model.

An RGB image ``u`` of size ``M x N`` defines the stationary Gaussian
``N(m, Sigma)`` with ``Sigma = C_t C_t^T``, where ``t`` is the texton
``(u_c - m_c) / sqrt(MN)``. In the Fourier domain ``Sigma`` acts on each
frequency as the rank-one 3x3 matrix ``t_hat(xi) t_hat(xi)^H``.

Conventions: images are float arrays of shape ``(3, M, N)``; ``fft2`` is
unnormalized and ``ifft2`` carries the ``1/(MN)`` factor; convolution is
circular.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .errors import ParameterError
from .schedule import Schedule

KERNEL_REL_TOL = 1e-12


def _check_image(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.ndim != 3 or u.shape[0] != 3 or min(u.shape[1:]) < 1:
        raise ParameterError(f"expected an RGB image of shape (3, M, N), got {u.shape}")
    return u


def fft_image(x) -> np.ndarray:
    return np.fft.fft2(x, axes=(-2, -1))


def ifft_image(x_hat, check_real: bool = True) -> np.ndarray:
    x = np.fft.ifft2(x_hat, axes=(-2, -1))
    if check_real:
        scale = max(1.0, float(np.abs(x.real).max(initial=0.0)))
        assert np.abs(x.imag).max(initial=0.0) <= 1e-10 * scale, "spectral field lost Hermitian symmetry"
    return x.real


@dataclass(frozen=True, eq=False)
class SpectralADSN:
    """ADSN model stored as its channel means and the DFT of its texton."""

    mean: np.ndarray
    t_hat: np.ndarray

    @property
    def shape(self):
        return self.t_hat.shape[1:]

    @property
    def power(self) -> np.ndarray:
        """``||t_hat(xi)||^2``, the non-zero eigenvalue at each frequency."""
        return np.sum(np.abs(self.t_hat) ** 2, axis=0)

    def mean_image(self) -> np.ndarray:
        M, N = self.shape
        return np.broadcast_to(self.mean[:, None, None], (3, M, N)).copy()

    def apply_sigma(self, field_hat: np.ndarray) -> np.ndarray:
        """Apply ``t_hat t_hat^H`` at every frequency of a ``(..., 3, M, N)`` spectrum."""
        proj = np.sum(self.t_hat.conj() * field_hat, axis=-3, keepdims=True)
        return self.t_hat * proj


def texton_from_image(u) -> SpectralADSN:
    """Spectral ADSN model of an RGB image."""
    u = _check_image(u)
    M, N = u.shape[1:]
    m = u.mean(axis=(1, 2))
    texton = (u - m[:, None, None]) / np.sqrt(M * N)
    return SpectralADSN(m, fft_image(texton))


def adsn_sample(model: SpectralADSN, rng: np.random.Generator, n: Optional[int] = None) -> np.ndarray:
    """Draw ``m + t * w`` with one white-noise field ``w`` shared by the three channels."""
    M, N = model.shape
    w = rng.standard_normal((1 if n is None else n, 1, M, N))
    x = model.mean[:, None, None] + ifft_image(model.t_hat * fft_image(w))
    return x[0] if n is None else x


def rank1_inverse(a, b, y) -> np.ndarray:
    """``(a y y^H + b I)^{-1} = I / b - a / (b (a ||y||^2 + b)) y y^H``.

    ``y`` has shape ``(..., k)``; ``a`` and ``b`` broadcast against ``y[..., 0]``.
    """
    y = np.asarray(y)
    a = np.asarray(a, dtype=float)[..., None, None]
    b = np.asarray(b, dtype=float)[..., None, None]
    k = y.shape[-1]
    nrm2 = np.sum(np.abs(y) ** 2, axis=-1)[..., None, None]
    outer = y[..., :, None] * y[..., None, :].conj()
    return np.eye(k) / b - a / (b * (a * nrm2 + b)) * outer


def apply_sigma_t_inverse(model: SpectralADSN, sched: Schedule, t: int, field_hat) -> np.ndarray:
    """Apply ``Sigma_t^{-1}`` to a ``(3, M, N)`` spectrum, frequency by frequency."""
    t = sched.check_t(t, lower=1)
    a = sched.alpha_bars[t]
    b = 1.0 - a
    proj = np.sum(model.t_hat.conj() * field_hat, axis=-3, keepdims=True)
    coef = a / (b * (a * model.power + b))
    return field_hat / b - coef * model.t_hat * proj


def adsn_score(model: SpectralADSN, sched: Schedule, t: int, x) -> np.ndarray:
    """Exact score ``-Sigma_t^{-1}(x - sqrt(abar_t) m)`` of the noised ADSN law.

    ``x`` may carry leading batch axes: ``(..., 3, M, N)``.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-3:] != (3,) + tuple(model.shape):
        raise ParameterError(f"image shape {x.shape} does not match the model")
    ab = sched.alpha_bars[sched.check_t(t, lower=1)]
    centered = x - np.sqrt(ab) * model.mean[:, None, None]
    return -ifft_image(apply_sigma_t_inverse(model, sched, t, fft_image(centered)))


def ddpm_generate(model: SpectralADSN, sched: Schedule, rng: np.random.Generator,
                  n: Optional[int] = None) -> np.ndarray:
    """Unconditional DDPM with the exact ADSN score, from ``y_T ~ N(0, I)`` to ``y_0``."""
    M, N = model.shape
    shape = (3, M, N) if n is None else (n, 3, M, N)
    y = rng.standard_normal(shape)
    for t in range(sched.T, 0, -1):
        s = adsn_score(model, sched, t, y)
        y = (y + sched.betas[t] * s) / np.sqrt(sched.alphas[t])
        y = y + np.sqrt(sched.betas[t]) * rng.standard_normal(shape)
    return y


@dataclass(frozen=True, eq=False)
class Eigenstructure:
    """Per-frequency orthonormal eigenbasis of ``Sigma``.

    ``basis[i, j]`` is a unitary 3x3 matrix whose columns are the eigenvectors
    at frequency ``(i, j)``; ``eigvals[i, j]`` is ``(||t_hat||^2, 0, 0)`` and
    ``kernel_mask`` marks the directions in the null space of ``Sigma``.
    """

    basis: np.ndarray
    eigvals: np.ndarray
    kernel_mask: np.ndarray


def _orthonormal_complement(v1):
    """Two unit vectors completing each row of ``v1`` (unit, shape (F, 3)) to a unitary basis."""
    F = v1.shape[0]
    # (-conj t3, 0, conj t1) is orthogonal to t; degenerate when t1 = t3 = 0.
    v2 = np.stack([-v1[:, 2].conj(), np.zeros(F, complex), v1[:, 0].conj()], axis=1)
    n2 = np.linalg.norm(v2, axis=1)
    bad = n2 < 1e-6
    if np.any(bad):
        # Gram-Schmidt of the canonical vector least aligned with v1.
        u = v1[bad]
        idx = np.argmin(np.abs(u), axis=1)
        e = np.zeros_like(u)
        e[np.arange(len(u)), idx] = 1.0
        g = e - u * np.sum(u.conj() * e, axis=1)[:, None]
        v2[bad] = g
        n2 = np.linalg.norm(v2, axis=1)
    v2 = v2 / n2[:, None]
    # conj(v1 x v2) is orthogonal to both v1 and v2.
    v3 = np.cross(v1, v2).conj()
    v3 = v3 / np.linalg.norm(v3, axis=1)[:, None]
    return v2, v3


def eigenstructure(model: SpectralADSN, rel_tol: float = KERNEL_REL_TOL) -> Eigenstructure:
    """Shared eigenbasis of the ADSN covariance at every frequency.

    The first eigenvector is ``t_hat(xi)`` (normalized); at frequencies where
    ``||t_hat||^2 <= rel_tol * max ||t_hat||^2`` the canonical basis is used
    and every direction belongs to the kernel.
    """
    M, N = model.shape
    t = np.moveaxis(model.t_hat, 0, -1).reshape(-1, 3)
    power = np.sum(np.abs(t) ** 2, axis=1)
    zero = power <= rel_tol * max(power.max(), 0.0)
    v1 = np.zeros_like(t)
    v1[~zero] = t[~zero] / np.sqrt(power[~zero])[:, None]
    v1[zero, 0] = 1.0
    v2, v3 = _orthonormal_complement(v1)
    basis = np.stack([v1, v2, v3], axis=-1)
    eig = np.zeros((M * N, 3))
    eig[:, 0] = np.where(zero, 0.0, power)
    mask = np.ones((M * N, 3), dtype=bool)
    mask[:, 0] = zero
    return Eigenstructure(basis.reshape(M, N, 3, 3), eig.reshape(M, N, 3), mask.reshape(M, N, 3))


def dense_covariance(model: SpectralADSN, max_dim: int = 3 * 16 * 16) -> np.ndarray:
    """Explicit ``(3MN, 3MN)`` covariance matrix (small images only).

    Vector ordering is ``image.reshape(-1)`` for a ``(3, M, N)`` image.
    """
    M, N = model.shape
    d = 3 * M * N
    if d > max_dim:
        raise ParameterError(f"dense covariance of dimension {d} exceeds {max_dim}")
    basis = np.eye(d).reshape(d, 3, M, N)
    cols = ifft_image(model.apply_sigma(fft_image(basis)))
    S = cols.reshape(d, d).T
    return 0.5 * (S + S.T)


def read_png(path) -> np.ndarray:
    """Load an 8-bit image as a ``(3, M, N)`` float array in ``[0, 1]``.

    Pixel values are mapped linearly (no gamma handling). Grayscale images
    are replicated over the three channels.
    """
    with Image.open(Path(path)) as im:
        arr = np.asarray(im.convert("RGB"), dtype=float) / 255.0
    return np.moveaxis(arr, -1, 0)


def write_png(path, img) -> None:
    """Save a ``(3, M, N)`` float image, clipped to ``[0, 1]``, as 8-bit PNG."""
    img = _check_image(img)
    arr = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(np.moveaxis(arr, 0, -1), mode="RGB").save(Path(path), format="PNG")
