"""Exact Gaussian machinery for DDPMs with a Gaussian data distribution.

Everything here is dense linear algebra and doubles as the reference
implementation that the structured (FFT) code in :mod:`gaussdiff.deblur`
is checked against.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg

from .errors import ParameterError, SingularityError
from .schedule import Schedule

EIG_CLAMP = 1e-10
SYM_TOL = 1e-12
W2_ZERO_REL = 4 * np.finfo(float).eps


def symmetrize(S: np.ndarray) -> np.ndarray:
    return 0.5 * (S + S.T)


def psd_eigh(S: np.ndarray, clamp: float = EIG_CLAMP):
    """Eigendecomposition of a symmetric PSD matrix.

    Eigenvalues in ``[-clamp, 0)`` are rounding noise and are set to zero;
    anything more negative means the input is not PSD.
    """
    w, V = np.linalg.eigh(symmetrize(np.asarray(S, dtype=float)))
    if w.size and w[0] < -clamp:
        raise ParameterError(f"matrix is not PSD (min eigenvalue {w[0]:.3e})")
    return np.clip(w, 0.0, None), V


def psd_sqrt(S: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root."""
    w, V = psd_eigh(S)
    return (V * np.sqrt(w)) @ V.T


def _chol(M: np.ndarray):
    try:
        return linalg.cho_factor(M, lower=True, check_finite=True)
    except linalg.LinAlgError as exc:
        raise SingularityError("matrix is not positive definite") from exc


def spd_solve(M: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve ``M X = B`` for symmetric positive definite ``M``."""
    return linalg.cho_solve(_chol(M), B, check_finite=False)


@dataclass(frozen=True, eq=False)
class GaussianLaw:
    """Multivariate normal ``N(mean, cov)``; ``cov`` may be rank deficient."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ParameterError(
                f"mean shape {mean.shape} and cov shape {cov.shape} are inconsistent"
            )
        if not np.allclose(cov, cov.T, rtol=0.0, atol=SYM_TOL * max(1.0, np.abs(cov).max())):
            raise ParameterError("covariance is not symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", symmetrize(cov))

    @property
    def dim(self) -> int:
        return self.mean.size

    def sample(self, rng: np.random.Generator, n: Optional[int] = None) -> np.ndarray:
        root = psd_sqrt(self.cov)
        z = rng.standard_normal((1 if n is None else n, self.dim))
        x = self.mean + z @ root
        return x[0] if n is None else x


@dataclass(frozen=True, eq=False)
class LinearInverseProblem:
    """``v = A x0 + sigma * n`` with ``n`` standard normal."""

    A: np.ndarray
    sigma: float
    v: Optional[np.ndarray] = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        if not self.sigma > 0:
            raise ParameterError(f"sigma must be positive, got {self.sigma}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "sigma", float(self.sigma))
        if self.v is not None:
            v = np.atleast_1d(np.asarray(self.v, dtype=float))
            if v.shape != (A.shape[0],):
                raise ParameterError(f"observation shape {v.shape} does not match A {A.shape}")
            object.__setattr__(self, "v", v)

    def with_observation(self, v) -> "LinearInverseProblem":
        return LinearInverseProblem(self.A, self.sigma, v)

    def observe(self, x0: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return self.A @ x0 + self.sigma * rng.standard_normal(self.A.shape[0])


@dataclass(frozen=True, eq=False)
class AffineGaussianKernel:
    """Conditional law ``x -> N(lin @ x + shift, noise_cov)``."""

    lin: np.ndarray
    shift: np.ndarray
    noise_cov: np.ndarray

    def mean_at(self, x: np.ndarray) -> np.ndarray:
        return self.lin @ x + self.shift

    def push(self, law: GaussianLaw) -> GaussianLaw:
        """Law of the output when the input is distributed as ``law``."""
        cov = self.lin @ law.cov @ self.lin.T + self.noise_cov
        return GaussianLaw(self.lin @ law.mean + self.shift, symmetrize(cov))

    def sample(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal(self.shift.shape)
        return self.mean_at(x) + psd_sqrt(self.noise_cov) @ z


def _check_problem(prior: GaussianLaw, prob: LinearInverseProblem, need_v: bool = True):
    if prob.A.shape[1] != prior.dim:
        raise ParameterError(
            f"operator has {prob.A.shape[1]} columns but prior dimension is {prior.dim}"
        )
    if need_v and prob.v is None:
        raise ParameterError("the inverse problem has no observation v")


def noised_cov(prior: GaussianLaw, sched: Schedule, t: int) -> np.ndarray:
    """``Sigma_t = abar_t Sigma + (1 - abar_t) I``."""
    ab = sched.alpha_bars[sched.check_t(t)]
    return ab * prior.cov + (1.0 - ab) * np.eye(prior.dim)


def condition_on_observation(prior: GaussianLaw, prob: LinearInverseProblem) -> GaussianLaw:
    """Exact posterior ``p(x0 | v)`` of a Gaussian prior under a linear-Gaussian observation."""
    _check_problem(prior, prob)
    A, S = prob.A, prior.cov
    M = A @ S @ A.T + prob.sigma**2 * np.eye(A.shape[0])
    # gain.T = M^{-1} A S
    gain_T = spd_solve(M, A @ S)
    mean = prior.mean + gain_T.T @ (prob.v - A @ prior.mean)
    cov = S - S @ A.T @ gain_T
    return GaussianLaw(mean, symmetrize(cov))


def kriging_sample(
    prior: GaussianLaw,
    prob: LinearInverseProblem,
    rng: np.random.Generator,
    n: Optional[int] = None,
) -> np.ndarray:
    """Draw from ``p(x0 | v)`` by correcting unconditional prior draws.

    Each draw is ``L^T v + x~ - L^T (A x~ + sigma n~)`` with
    ``L = M^{-1} A Sigma`` and fresh ``x~ ~ prior``, ``n~ ~ N(0, I)``.
    """
    _check_problem(prior, prob)
    A, S = prob.A, prior.cov
    M = A @ S @ A.T + prob.sigma**2 * np.eye(A.shape[0])
    Lam = spd_solve(M, A @ S)
    m = 1 if n is None else n
    x_tilde = prior.sample(rng, m)
    n_tilde = rng.standard_normal((m, A.shape[0]))
    out = prob.v @ Lam + x_tilde - (x_tilde @ A.T + prob.sigma * n_tilde) @ Lam
    return out[0] if n is None else out


def forward_marginal(prior: GaussianLaw, sched: Schedule, t: int) -> GaussianLaw:
    """Law of ``x_t`` under the forward (noising) process."""
    ab = sched.alpha_bars[sched.check_t(t)]
    return GaussianLaw(np.sqrt(ab) * prior.mean, noised_cov(prior, sched, t))


def score(prior: GaussianLaw, sched: Schedule, t: int, x: np.ndarray) -> np.ndarray:
    """``grad log p_t(x) = -Sigma_t^{-1} (x - sqrt(abar_t) mu)``."""
    ab = sched.alpha_bars[sched.check_t(t)]
    return -spd_solve(noised_cov(prior, sched, t), np.asarray(x, dtype=float) - np.sqrt(ab) * prior.mean)


def _denoise_matrix(prior: GaussianLaw, sched: Schedule, t: int) -> np.ndarray:
    # sqrt(abar) Sigma Sigma_t^{-1}; Sigma and Sigma_t commute.
    ab = sched.alpha_bars[t]
    return np.sqrt(ab) * spd_solve(noised_cov(prior, sched, t), prior.cov).T


def tweedie_denoise(prior: GaussianLaw, sched: Schedule, t: int, x: np.ndarray) -> np.ndarray:
    """MMSE denoiser ``E[x0 | x_t = x]`` in closed form."""
    t = sched.check_t(t, lower=1)
    ab = sched.alpha_bars[t]
    D = _denoise_matrix(prior, sched, t)
    return prior.mean + D @ (np.asarray(x, dtype=float) - np.sqrt(ab) * prior.mean)


def noisy_likelihood(
    prior: GaussianLaw, prob: LinearInverseProblem, sched: Schedule, t: int
) -> AffineGaussianKernel:
    """Exact ``p_t(v | x_t)`` as an affine Gaussian kernel in ``x_t``."""
    _check_problem(prior, prob, need_v=False)
    t = sched.check_t(t, lower=1)
    ab = sched.alpha_bars[t]
    A = prob.A
    D = _denoise_matrix(prior, sched, t)
    lin = A @ D
    shift = A @ (prior.mean - np.sqrt(ab) * D @ prior.mean)
    # (1 - abar) Sigma Sigma_t^{-1} = Cov(x0 | x_t)
    post_cov = (1.0 - ab) * spd_solve(noised_cov(prior, sched, t), prior.cov)
    noise_cov = A @ symmetrize(post_cov) @ A.T + prob.sigma**2 * np.eye(A.shape[0])
    return AffineGaussianKernel(lin, shift, symmetrize(noise_cov))


def noisy_posterior(
    prior: GaussianLaw, prob: LinearInverseProblem, sched: Schedule, t: int
) -> GaussianLaw:
    """Exact ``p_t(x_t | v)``: the forward process started from ``p(x0 | v)``."""
    return forward_marginal(condition_on_observation(prior, prob), sched, t)


def exact_backward_kernel(prior: GaussianLaw, sched: Schedule, t: int) -> AffineGaussianKernel:
    """True reverse transition ``p(x_{t-1} | x_t)`` of the forward chain.

    The mean is the usual DDPM update ``(x + beta_t score(x)) / sqrt(alpha_t)``;
    the noise covariance ``beta_t Sigma_{t-1} Sigma_t^{-1}`` is not diagonal
    in general.
    """
    t = sched.check_t(t, lower=1)
    beta, alpha, ab = sched.betas[t], sched.alphas[t], sched.alpha_bars[t]
    d = prior.dim
    St = noised_cov(prior, sched, t)
    St_inv = spd_solve(St, np.eye(d))
    lin = (np.eye(d) - beta * St_inv) / np.sqrt(alpha)
    shift = beta * np.sqrt(ab) * (St_inv @ prior.mean) / np.sqrt(alpha)
    noise_cov = beta * noised_cov(prior, sched, t - 1) @ St_inv
    return AffineGaussianKernel(symmetrize(lin), shift, symmetrize(noise_cov))


def _sqrt_for_w2(S: np.ndarray) -> np.ndarray:
    # eigenvalues within rounding of zero are exact zeros; their square roots
    # would otherwise turn ~1e-17 noise into ~1e-8 errors
    w, V = psd_eigh(S)
    w[w <= W2_ZERO_REL * S.shape[0] * max(w.max(initial=0.0), 1.0)] = 0.0
    return (V * np.sqrt(w)) @ V.T


def wasserstein2(a: GaussianLaw, b: GaussianLaw) -> float:
    """2-Wasserstein distance between two Gaussian laws.

    Computed as ``min_Q ||Sa^1/2 - Sb^1/2 Q||_F`` over orthogonal ``Q``
    (the optimal ``Q`` comes from an SVD), which equals the usual trace
    formula but sums squares instead of cancelling large traces, so small
    distances keep their relative accuracy.
    """
    if a.dim != b.dim:
        raise ParameterError(f"dimension mismatch: {a.dim} vs {b.dim}")
    ra, rb = _sqrt_for_w2(a.cov), _sqrt_for_w2(b.cov)
    U, _, Vt = np.linalg.svd(rb.T @ ra)
    resid = ra - rb @ (U @ Vt)
    d2 = np.sum((a.mean - b.mean) ** 2) + np.sum(resid**2)
    return float(np.sqrt(d2))


def _check_eigs(eig, name):
    eig = np.asarray(eig, dtype=float)
    if eig.size and eig.min() < -EIG_CLAMP:
        raise ParameterError(f"{name} has a negative eigenvalue {eig.min():.3e}")
    return np.clip(eig, 0.0, None)


def wasserstein2_commuting(mean_a, eig_a, mean_b, eig_b) -> float:
    """W2 between Gaussians whose covariances share an eigenbasis.

    ``eig_a[i]`` and ``eig_b[i]`` must belong to the same eigenvector.
    """
    ea, eb = _check_eigs(eig_a, "eig_a"), _check_eigs(eig_b, "eig_b")
    if ea.shape != eb.shape:
        raise ParameterError("eigenvalue arrays differ in shape")
    dm = np.asarray(mean_a) - np.asarray(mean_b)
    d2 = np.sum(np.abs(dm) ** 2) + np.sum((np.sqrt(ea) - np.sqrt(eb)) ** 2)
    return float(np.sqrt(d2))


def wasserstein2_split(coords_a, eig_a, coords_b, eig_b, kernel_mask):
    """Split a commuting-covariance W2 into kernel and orthogonal parts.

    ``coords_*`` are mean coordinates in the shared (orthonormal, possibly
    complex) eigenbasis and ``kernel_mask`` flags the directions spanning the
    null space of the reference covariance. Returns ``(w_ker, w_perp)`` with
    ``w_ker**2 + w_perp**2`` equal to the full squared distance.
    """
    ea, eb = _check_eigs(eig_a, "eig_a"), _check_eigs(eig_b, "eig_b")
    mask = np.asarray(kernel_mask, dtype=bool)
    if not (ea.shape == eb.shape == mask.shape):
        raise ParameterError("kernel mask and eigenvalue arrays differ in shape")
    dm2 = np.abs(np.asarray(coords_a) - np.asarray(coords_b)) ** 2
    if dm2.shape != mask.shape:
        raise ParameterError("mean coordinates and kernel mask differ in shape")
    per_dir = dm2 + (np.sqrt(ea) - np.sqrt(eb)) ** 2
    w_ker2 = np.sum(per_dir[mask])
    w_perp2 = np.sum(per_dir[~mask])
    return float(np.sqrt(w_ker2)), float(np.sqrt(w_perp2))
