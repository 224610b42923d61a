"""ADSN deblurring: blur operators and exact per-frequency backward laws.

A channelwise circular convolution ``A`` acts on each frequency as the
scalar ``c_hat(xi)`` times ``I_3``, so every sampler step decouples into
independent 3x3 complex recursions, one per frequency. All spectral vectors
here use unitary Fourier coordinates (``fft2 / sqrt(MN)``), in which white
noise keeps identity covariance. Arrays over frequencies are flattened to
shape ``(F, ...)`` with ``F = M * N`` in row-major order.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
from PIL import Image

from .adsn import (
    KERNEL_REL_TOL,
    SpectralADSN,
    adsn_sample,
    eigenstructure,
    fft_image,
    ifft_image,
    rank1_inverse,
)
from .analysis import WassersteinCurve
from .errors import NumericalInstabilityError, ParameterError
from .gaussian import wasserstein2_split
from .samplers import CGDM, DPS, DIVERGENCE_NORM, GuidanceModel, PiGDM
from .schedule import Schedule

MAX_IMAGE_SIDE = 256
_EYE3 = np.eye(3)


@dataclass(frozen=True, eq=False)
class BlurKernel:
    """Real spatial blur kernel; ``weights[center]`` sits at the origin."""

    weights: np.ndarray
    center: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 2 or w.size == 0:
            raise ParameterError(f"kernel must be a non-empty 2D array, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ParameterError("kernel has non-finite entries")
        ci, cj = (int(c) for c in self.center)
        if not (0 <= ci < w.shape[0] and 0 <= cj < w.shape[1]):
            raise ParameterError(f"kernel center {self.center} outside shape {w.shape}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "center", (ci, cj))

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    def periodized(self, shape) -> np.ndarray:
        """Kernel wrapped on an ``M x N`` torus with its center at pixel ``(0, 0)``."""
        M, N = shape
        out = np.zeros((M, N))
        ii, jj = np.indices(self.weights.shape)
        np.add.at(out, ((ii - self.center[0]) % M, (jj - self.center[1]) % N), self.weights)
        return out

    def spectrum(self, shape) -> np.ndarray:
        """``c_hat(xi)``, the DFT of the periodized kernel."""
        return np.fft.fft2(self.periodized(shape))


def identity_kernel() -> BlurKernel:
    return BlurKernel(np.ones((1, 1)), (0, 0))


def _keys_cubic(x, a=-0.5):
    x = np.abs(x)
    out = np.zeros_like(x)
    near = x <= 1
    far = (x > 1) & (x < 2)
    out[near] = (a + 2) * x[near] ** 3 - (a + 3) * x[near] ** 2 + 1
    out[far] = a * x[far] ** 3 - 5 * a * x[far] ** 2 + 8 * a * x[far] - 4 * a
    return out


def bicubic_zoom_kernel(factor: int) -> BlurKernel:
    """Antialiasing kernel of a bicubic zoom-out by an integer factor.

    The Keys cubic profile (``a = -0.5``) is stretched by ``factor``,
    sampled on integers, normalized to unit sum and applied separably.
    """
    if isinstance(factor, bool) or int(factor) != factor or factor < 1:
        raise ParameterError(f"zoom factor must be a positive integer, got {factor!r}")
    f = int(factor)
    r = 2 * f - 1
    profile = _keys_cubic(np.arange(-r, r + 1) / f)
    profile /= profile.sum()
    return BlurKernel(np.outer(profile, profile), (r, r))


def _centroid(w):
    tot = w.sum()
    ii, jj = np.indices(w.shape)
    ci = int(np.clip(np.round((ii * w).sum() / tot), 0, w.shape[0] - 1))
    cj = int(np.clip(np.round((jj * w).sum() / tot), 0, w.shape[1] - 1))
    return ci, cj


def _read_text_kernel(path: Path) -> np.ndarray:
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    if not lines:
        raise ParameterError(f"{path}: empty kernel file")
    try:
        M, N = (int(s) for s in lines[0].split())
        rows = [[float(s) for s in ln.split()] for ln in lines[1:]]
    except ValueError as exc:
        raise ParameterError(f"{path}: malformed kernel file ({exc})") from None
    if len(rows) != M or any(len(r) != N for r in rows):
        raise ParameterError(f"{path}: header says {M}x{N} but the body does not match")
    return np.array(rows, dtype=float).reshape(M, N)


def load_kernel(path) -> BlurKernel:
    """Read a blur kernel from a text matrix or a grayscale PNG.

    Text format: a first line ``"M N"`` then ``M`` rows of ``N`` reals.
    Values are normalized to unit sum (left untouched if already within
    1e-12 of it, so saved kernels reload bit for bit) and the kernel is
    centered at the pixel nearest to its centroid.
    """
    path = Path(path)
    try:
        if path.suffix.lower() == ".png":
            with Image.open(path) as im:
                w = np.asarray(im.convert("L"), dtype=float) / 255.0
        else:
            w = _read_text_kernel(path)
    except OSError as exc:
        raise ParameterError(f"cannot read kernel {path}: {exc}") from None
    tot = w.sum()
    if not np.any(w) or not tot > 0:
        raise ParameterError(f"{path}: kernel is all zero or has a non-positive sum")
    if abs(tot - 1.0) > 1e-12:
        w = w / tot
    return BlurKernel(w, _centroid(w))


def save_kernel(path, kernel: BlurKernel) -> None:
    """Write ``kernel.weights`` in the text format with round-trip precision."""
    w = kernel.weights
    lines = [f"{w.shape[0]} {w.shape[1]}"]
    lines += [" ".join(repr(float(x)) for x in row) for row in w]
    Path(path).write_text("\n".join(lines) + "\n")


def blur_apply(kernel: BlurKernel, image) -> np.ndarray:
    """Channelwise circular convolution ``c * image`` of a ``(..., M, N)`` array."""
    image = np.asarray(image, dtype=float)
    c_hat = kernel.spectrum(image.shape[-2:])
    return ifft_image(fft_image(image) * c_hat)


def make_observation(model: SpectralADSN, kernel: BlurKernel, sigma: float,
                     rng: np.random.Generator):
    """Draw ``x0`` from the ADSN model and ``v = c * x0 + sigma n``."""
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    x0 = adsn_sample(model, rng)
    v = blur_apply(kernel, x0) + sigma * rng.standard_normal(x0.shape)
    return x0, v


# -- spectral problem -------------------------------------------------------

def _to_unitary(img) -> np.ndarray:
    """``(3, M, N)`` image -> ``(F, 3)`` unitary Fourier coordinates."""
    img = np.asarray(img, dtype=float)
    M, N = img.shape[-2:]
    return np.moveaxis(fft_image(img), 0, -1).reshape(M * N, 3) / np.sqrt(M * N)


def _from_unitary(coef, shape) -> np.ndarray:
    M, N = shape
    return ifft_image(np.moveaxis(coef.reshape(M, N, 3), -1, 0) * np.sqrt(M * N))


@dataclass(frozen=True, eq=False)
class SpectralProblem:
    """Per-frequency data of an ADSN deblurring problem.

    ``t_vec`` is ``t_hat`` with frequencies below the kernel threshold set to
    exactly zero, ``c_hat`` the kernel spectrum, ``mu`` and ``v`` the prior
    mean and observation in unitary coordinates, ``basis`` / ``kernel_mask``
    the shared eigenstructure.
    """

    shape: tuple
    t_vec: np.ndarray
    c_hat: np.ndarray
    sigma: float
    mu: np.ndarray
    v: Optional[np.ndarray]
    basis: np.ndarray
    kernel_mask: np.ndarray

    @property
    def n_freq(self) -> int:
        return self.t_vec.shape[0]

    @property
    def power(self) -> np.ndarray:
        return np.sum(np.abs(self.t_vec) ** 2, axis=1)

    def permuted(self, perm) -> "SpectralProblem":
        """Same problem with frequencies reordered (for isolation checks)."""
        perm = np.asarray(perm)
        return SpectralProblem(self.shape, self.t_vec[perm], self.c_hat[perm], self.sigma,
                               self.mu[perm], None if self.v is None else self.v[perm],
                               self.basis[perm], self.kernel_mask[perm])

    def mean_image(self, coords) -> np.ndarray:
        """Spatial image of mean coordinates given in the eigenbasis."""
        return _from_unitary(np.einsum("fij,fj->fi", self.basis, coords), self.shape)


def spectral_problem(model: SpectralADSN, kernel: Optional[BlurKernel], sigma: float,
                     v=None, rel_tol: float = KERNEL_REL_TOL) -> SpectralProblem:
    """Assemble the per-frequency form of ``v = c * x + sigma n`` with an ADSN prior.

    ``kernel=None`` means the zero operator (no information in ``v``); ``v``
    then defaults to zeros so that the "posterior" is the prior itself.
    """
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    M, N = model.shape
    if max(M, N) > MAX_IMAGE_SIDE:
        raise ParameterError(f"image {M}x{N} exceeds the {MAX_IMAGE_SIDE}x{MAX_IMAGE_SIDE} cap")
    eig = eigenstructure(model, rel_tol)
    mask = eig.kernel_mask.reshape(-1, 3)
    t_vec = np.moveaxis(model.t_hat, 0, -1).reshape(-1, 3).copy()
    t_vec[mask[:, 0]] = 0.0
    c_hat = np.zeros(M * N, complex) if kernel is None else kernel.spectrum((M, N)).reshape(-1)
    mu = _to_unitary(model.mean_image())
    vv = np.zeros((M * N, 3), complex) if kernel is None and v is None else None
    if v is not None:
        v = np.asarray(v, dtype=float)
        if v.shape != (3, M, N):
            raise ParameterError(f"observation shape {v.shape} does not match the model (3, {M}, {N})")
        vv = _to_unitary(v)
    return SpectralProblem((M, N), t_vec, c_hat, float(sigma), mu, vv,
                           eig.basis.reshape(-1, 3, 3), mask)


def _batched_inverse_guidance(guidance: GuidanceModel, prob: SpectralProblem, sched, t):
    """Per-frequency ``C_{v|t}^{-1}`` as ``(F, 3, 3)``."""
    ab = sched.alpha_bars[t]
    c2 = np.abs(prob.c_hat) ** 2
    s2 = prob.sigma ** 2
    F = prob.n_freq
    if isinstance(guidance, DPS):
        return np.broadcast_to(guidance.alpha / s2 * _EYE3, (F, 3, 3))
    if isinstance(guidance, PiGDM):
        return _EYE3 / ((1.0 - ab) * c2 + s2)[:, None, None]
    if isinstance(guidance, CGDM):
        p = (1.0 - ab) * c2 / (ab * prob.power + 1.0 - ab)
        return rank1_inverse(p, s2, prob.t_vec)
    raise ParameterError(f"no spectral form for guidance model {guidance!r}")


def spectral_step(guidance: Optional[GuidanceModel], prob: SpectralProblem, sched: Schedule, t: int):
    """Per-frequency ``(lin, shift)`` of step ``t`` in canonical unitary coordinates.

    ``guidance=None`` gives the unconditional DDPM step.
    """
    t = sched.check_t(t, lower=1)
    beta, alpha, ab = sched.betas[t], sched.alphas[t], sched.alpha_bars[t]
    tv, mu = prob.t_vec, prob.mu
    St_inv = rank1_inverse(ab, 1.0 - ab, tv)
    lin = _EYE3 - beta * St_inv
    inner = np.sqrt(ab) * np.einsum("fij,fj->fi", St_inv, mu)
    if guidance is not None:
        if prob.v is None:
            raise ParameterError("conditional propagation needs an observation v")
        outer = tv[:, :, None] * tv[:, None, :].conj()
        # D = sqrt(abar) Sigma Sigma_t^{-1}, Hermitian here
        D = np.sqrt(ab) * outer / (ab * prob.power + 1.0 - ab)[:, None, None]
        Cinv = _batched_inverse_guidance(guidance, prob, sched, t)
        c = prob.c_hat[:, None, None]
        G = np.conj(c) * np.einsum("fji,fjk->fik", D.conj(), Cinv)
        lin = lin - beta * c * np.einsum("fij,fjk->fik", G, D)
        x0_offset = mu - np.einsum("fij,fj->fi", D, mu) * np.sqrt(ab)
        resid = prob.v - prob.c_hat[:, None] * x0_offset
        inner = inner + np.einsum("fij,fj->fi", G, resid)
    return lin / np.sqrt(alpha), beta * inner / np.sqrt(alpha)


@dataclass(frozen=True, eq=False)
class SpectralCurveState:
    """Law of the sampler's ``y_t`` expressed in the shared eigenbasis.

    ``eigvals`` and ``mean_coords`` have shape ``(F, 3)``; ``lin`` is the
    eigenbasis matrix of the step that produced this state (``None`` at
    ``t = T``); ``leakage`` is the largest off-diagonal modulus of the
    propagated 3x3 covariances, relative to their largest eigenvalue when
    that exceeds 1 (unstable samplers pass through huge transients).
    """

    t: int
    eigvals: np.ndarray
    mean_coords: np.ndarray
    leakage: float
    lin: Optional[np.ndarray] = None


def _offdiag_max(K) -> float:
    """Largest off-diagonal modulus, relative to ``max(1, largest diagonal entry)``."""
    off = K.copy()
    off[:, [0, 1, 2], [0, 1, 2]] = 0.0
    scale = max(1.0, float(np.abs(np.diagonal(K, axis1=1, axis2=2)).max(initial=0.0)))
    return float(np.abs(off).max(initial=0.0)) / scale


def iter_spectral_backward(prob: SpectralProblem, guidance: Optional[GuidanceModel],
                           sched: Schedule) -> Iterator[SpectralCurveState]:
    """Yield the state at ``t = T, T-1, ..., 0`` starting from ``N(0, I)``."""
    U = prob.basis
    Uh = np.conj(np.swapaxes(U, 1, 2))
    F = prob.n_freq
    K = np.broadcast_to(_EYE3.astype(complex), (F, 3, 3)).copy()
    m = np.zeros((F, 3), complex)
    label = "ddpm" if guidance is None else guidance.label
    yield SpectralCurveState(sched.T, np.ones((F, 3)), m.copy(), 0.0)
    for t in range(sched.T, 0, -1):
        lin, shift = spectral_step(guidance, prob, sched, t)
        L = Uh @ lin @ U
        m = np.einsum("fij,fj->fi", L, m) + np.einsum("fij,fj->fi", Uh, shift)
        K = L @ K @ np.conj(np.swapaxes(L, 1, 2))
        K = 0.5 * (K + np.conj(np.swapaxes(K, 1, 2)))
        K[:, [0, 1, 2], [0, 1, 2]] += sched.betas[t]
        eig = np.real(np.diagonal(K, axis1=1, axis2=2)).copy()
        if (not np.all(np.isfinite(eig)) or eig.max() > 1e24
                or not np.all(np.isfinite(m)) or np.abs(m).max() > DIVERGENCE_NORM):
            raise NumericalInstabilityError(label, t - 1, "spectral propagation overflowed")
        if eig.min() < -1e-8:
            raise NumericalInstabilityError(label, t - 1, f"negative eigenvalue {eig.min():.3e}")
        yield SpectralCurveState(t - 1, eig, m.copy(), _offdiag_max(K), L)


@dataclass(frozen=True, eq=False)
class SpectralTrajectory:
    """Stacked spectral states; index ``t`` along the first axis holds time ``t``."""

    model: str
    eigvals: np.ndarray
    mean_coords: np.ndarray
    leakage: np.ndarray


def spectral_backward_propagation(model: SpectralADSN, kernel: Optional[BlurKernel],
                                  guidance: Optional[GuidanceModel], sigma: float, v,
                                  sched: Schedule) -> SpectralTrajectory:
    """Exact backward laws of a sampler on an ADSN deblurring problem, all ``t``.

    Stores ``(T+1) * MN * 3`` eigenvalues and means, so this is meant for
    small images; :func:`deblur_wasserstein_curves` streams instead.
    """
    prob = spectral_problem(model, kernel, sigma, v)
    T, F = sched.T, prob.n_freq
    eig = np.empty((T + 1, F, 3))
    means = np.empty((T + 1, F, 3), complex)
    leak = np.empty(T + 1)
    for st in iter_spectral_backward(prob, guidance, sched):
        eig[st.t], means[st.t], leak[st.t] = st.eigvals, st.mean_coords, st.leakage
    label = "ddpm" if guidance is None else guidance.label
    return SpectralTrajectory(label, eig, means, leak)


def spectral_posterior(prob: SpectralProblem):
    """Eigenvalues and eigenbasis mean coordinates of ``p(x_0 | v)``, plus leakage.

    ``Sigma_{0|v} = S - S c_hat^* (|c_hat|^2 S + sigma^2 I)^{-1} c_hat S`` per frequency.
    """
    if prob.v is None:
        raise ParameterError("the posterior needs an observation v")
    tv = prob.t_vec
    S = tv[:, :, None] * tv[:, None, :].conj()
    c = prob.c_hat[:, None, None]
    Minv = rank1_inverse(np.abs(prob.c_hat) ** 2, prob.sigma ** 2, tv)
    gain = np.conj(c) * (S @ Minv)
    cov = S - c * (gain @ S)
    mean = prob.mu + np.einsum("fij,fj->fi", gain, prob.v - prob.c_hat[:, None] * prob.mu)
    U = prob.basis
    Uh = np.conj(np.swapaxes(U, 1, 2))
    K = Uh @ cov @ U
    coords = np.einsum("fij,fj->fi", Uh, mean)
    return np.real(np.diagonal(K, axis1=1, axis2=2)).copy(), coords, _offdiag_max(K)


def deblur_wasserstein_curves(model: SpectralADSN, kernel: Optional[BlurKernel], sigma: float,
                              v, sched: Schedule, models, keep_final: bool = False):
    """Exact W2 curves (total, kernel and orthogonal parts) for each guidance model.

    Returns ``{label: WassersteinCurve}``; the reference at ``t`` is the true
    noisy posterior ``N(sqrt(abar_t) mu_{0|v}, abar_t Sigma_{0|v} + (1 - abar_t) I)``.
    ``None`` in ``models`` stands for the unconditional DDPM. With
    ``keep_final=True`` a second dict maps each label to ``(state at t = 0,
    largest eigenbasis leakage over all t)``.
    """
    prob = spectral_problem(model, kernel, sigma, v)
    post_eig, post_coords, _ = spectral_posterior(prob)
    # the posterior vanishes exactly on ker Sigma; drop the rounding residue
    post_eig = np.where(prob.kernel_mask, 0.0, np.clip(post_eig, 0.0, None))
    T = sched.T
    out, final = {}, {}
    for g in models:
        w_tot, bias = np.empty(T + 1), np.empty(T + 1)
        w_ker, w_perp = np.empty(T + 1), np.empty(T + 1)
        leak = 0.0
        for st in iter_spectral_backward(prob, g, sched):
            leak = max(leak, st.leakage)
            ab = sched.alpha_bars[st.t]
            ref_eig = ab * post_eig + (1.0 - ab)
            ref_coords = np.sqrt(ab) * post_coords
            wk, wp = wasserstein2_split(st.mean_coords, st.eigvals, ref_coords, ref_eig,
                                        prob.kernel_mask)
            w_ker[st.t], w_perp[st.t] = wk, wp
            w_tot[st.t] = np.hypot(wk, wp)
            bias[st.t] = np.sqrt(np.sum(np.abs(st.mean_coords - ref_coords) ** 2))
        label = "ddpm" if g is None else g.label
        out[label] = WassersteinCurve(label, w_tot, bias, w_ker, w_perp)
        final[label] = (st, leak)
    return (out, final) if keep_final else out


def simulate_spectral(prob: SpectralProblem, guidance: Optional[GuidanceModel], sched: Schedule,
                      rng: np.random.Generator, n_samples: Optional[int] = None,
                      init=None) -> np.ndarray:
    """Run a sampler on images, applying each step frequency by frequency.

    Noise is drawn as ``y_T`` followed by ``z_T .. z_1`` (same order as the
    dense samplers). Returns ``y_0`` with shape ``(3, M, N)`` or ``(n, 3, M, N)``.
    """
    M, N = prob.shape
    F = M * N
    shape = (3, M, N) if n_samples is None else (n_samples, 3, M, N)
    y = rng.standard_normal(shape) if init is None else np.array(init, dtype=float)
    label = "ddpm" if guidance is None else guidance.label
    for t in range(sched.T, 0, -1):
        lin, shift = spectral_step(guidance, prob, sched, t)
        yh = np.moveaxis(fft_image(y), -3, -1).reshape(y.shape[:-3] + (F, 3)) / np.sqrt(F)
        yh = np.einsum("fij,...fj->...fi", lin, yh) + shift
        yh = np.moveaxis(yh.reshape(y.shape[:-3] + (M, N, 3)), -1, -3) * np.sqrt(F)
        y = ifft_image(yh) + np.sqrt(sched.betas[t]) * rng.standard_normal(shape)
        if not np.all(np.isfinite(y)) or np.abs(y).max() > DIVERGENCE_NORM:
            raise NumericalInstabilityError(label, t - 1, "state norm exceeded the divergence guard")
    return y
