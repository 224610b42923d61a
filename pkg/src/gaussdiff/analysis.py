"""Closed-form laws of the samplers' backward processes and their W2 error.

Because every backward step is affine and the injected noise is Gaussian,
the law of ``y_t`` stays Gaussian; its mean and covariance follow the
noise-free recursions below. Nothing in this module uses Monte Carlo.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NumericalInstabilityError, ParameterError
from .gaussian import (
    GaussianLaw,
    LinearInverseProblem,
    _check_problem,
    _denoise_matrix,
    condition_on_observation,
    exact_backward_kernel,
    noised_cov,
    noisy_posterior,
    spd_solve,
    symmetrize,
    wasserstein2,
    wasserstein2_split,
)
from .samplers import GuidanceModel, backward_steps
from .schedule import Schedule

MAX_DENSE_DIM = 512
_COV_LIMIT = 1e24


@dataclass(frozen=True, eq=False)
class BackwardLawTrajectory:
    """Means and covariances of a backward chain; index ``t`` holds time ``t``."""

    model: str
    means: np.ndarray
    covs: np.ndarray

    def law(self, t: int) -> GaussianLaw:
        return GaussianLaw(self.means[t], self.covs[t])


@dataclass(frozen=True, eq=False)
class WassersteinCurve:
    """W2 distance to the true noisy posterior for ``t = 0..T``.

    ``w_ker`` / ``w_perp`` are only filled when a shared eigenbasis with the
    prior covariance is available; then ``w_total**2 == w_ker**2 + w_perp**2``.
    """

    model: str
    w_total: np.ndarray
    mean_bias: np.ndarray
    w_ker: Optional[np.ndarray] = None
    w_perp: Optional[np.ndarray] = None

    @property
    def T(self) -> int:
        return len(self.w_total) - 1

    def rows(self):
        """Records ordered from ``t = T`` down to ``t = 0``."""
        for t in range(self.T, -1, -1):
            yield {
                "t": t,
                "model": self.model,
                "w_total": float(self.w_total[t]),
                "w_ker": None if self.w_ker is None else float(self.w_ker[t]),
                "w_perp": None if self.w_perp is None else float(self.w_perp[t]),
                "mean_bias_norm": float(self.mean_bias[t]),
            }


def _check_dense(prior: GaussianLaw):
    if prior.dim > MAX_DENSE_DIM:
        raise ParameterError(
            f"dense propagation is limited to d <= {MAX_DENSE_DIM} (got {prior.dim}); "
            "use the spectral path in gaussdiff.deblur for images"
        )


def _run(label, steps, T, d, init_mean, init_cov):
    means = np.empty((T + 1, d))
    covs = np.empty((T + 1, d, d))
    means[T], covs[T] = init_mean, init_cov
    for t in range(T, 0, -1):
        st = steps[t]
        if isinstance(st, tuple):  # (lin, shift, noise_cov)
            lin, shift, noise = st
        else:
            lin, shift, noise = st.lin, st.shift, st.noise_var * np.eye(d)
        means[t - 1] = lin @ means[t] + shift
        covs[t - 1] = symmetrize(lin @ covs[t] @ lin.T + noise)
        if (not np.all(np.isfinite(covs[t - 1])) or np.abs(covs[t - 1]).max() > _COV_LIMIT
                or not np.all(np.isfinite(means[t - 1])) or np.abs(means[t - 1]).max() > 1e12):
            raise NumericalInstabilityError(label, t, "propagated law overflowed")
    return means, covs


def propagate(model: GuidanceModel, prior: GaussianLaw, prob: LinearInverseProblem,
              sched: Schedule, steps: Optional[list] = None) -> BackwardLawTrajectory:
    """Mean and covariance of the sampler's ``y_t`` for every ``t``.

    Starts from ``N(0, I)`` at ``t = T`` and applies
    ``mu <- lin mu + shift`` and ``S <- lin S lin^T + beta I``.
    """
    _check_problem(prior, prob)
    _check_dense(prior)
    steps = steps if steps is not None else backward_steps(model, prior, prob, sched)
    d = prior.dim
    means, covs = _run(model.label, steps, sched.T, d, np.zeros(d), np.eye(d))
    return BackwardLawTrajectory(model.label, means, covs)


def propagate_mean(model, prior, prob, sched) -> np.ndarray:
    """Noise-free run of the sampler; row ``t`` is the mean of ``y_t``."""
    return propagate(model, prior, prob, sched).means


def propagate_covariance(model, prior, prob, sched) -> np.ndarray:
    """Covariance of ``y_t``; entry ``t`` is a ``(d, d)`` matrix."""
    return propagate(model, prior, prob, sched).covs


def propagate_exact_backward(prior: GaussianLaw, prob: LinearInverseProblem,
                             sched: Schedule) -> BackwardLawTrajectory:
    """Backward chain of the exact posterior transitions started at the true ``p_T(. | v)``.

    Its marginals coincide with the noisy posteriors at every ``t``; the gap
    between this and CGDM is the initialization error plus the diagonal
    noise approximation.
    """
    _check_problem(prior, prob)
    _check_dense(prior)
    post = condition_on_observation(prior, prob)
    steps = [None]
    for t in range(1, sched.T + 1):
        k = exact_backward_kernel(post, sched, t)
        steps.append((k.lin, k.shift, k.noise_cov))
    start = noisy_posterior(prior, prob, sched, sched.T)
    means, covs = _run("exact", steps, sched.T, prior.dim, start.mean, start.cov)
    return BackwardLawTrajectory("exact", means, covs)


def induced_noisy_posterior(model: GuidanceModel, prior: GaussianLaw, prob: LinearInverseProblem,
                            sched: Schedule, t: int, method: str = "woodbury") -> GaussianLaw:
    """Posterior ``p_t^algo(x_t | v)`` obtained by Bayes' rule from the model's likelihood.

    ``method="woodbury"`` uses the covariance-form update,
    ``method="precision"`` adds precision matrices directly. Both need
    ``Sigma_t`` invertible, so ``t = 0`` requires an invertible prior.
    """
    _check_problem(prior, prob)
    t = sched.check_t(t)
    ab = sched.alpha_bars[t]
    d, A, S, mu = prior.dim, prob.A, prior.cov, prior.mean
    St = noised_cov(prior, sched, t)
    C = symmetrize(model.covariance(prior, prob, sched, t))
    # Sigma Sigma_t^{-1}
    SSt = spd_solve(St, S).T
    resid = prob.v - A @ mu
    if method == "woodbury":
        K = C + ab * A @ SSt @ S @ A.T
        cov = St - ab * S @ A.T @ spd_solve(symmetrize(K), A @ S)
        cov = symmetrize(cov)
        mean = np.sqrt(ab) * mu + np.sqrt(ab) * cov @ SSt @ A.T @ spd_solve(C, resid)
    elif method == "precision":
        D = np.sqrt(ab) * SSt
        G = spd_solve(C, A @ D)
        P = symmetrize(spd_solve(St, np.eye(d)) + D.T @ A.T @ G)
        cov = symmetrize(spd_solve(P, np.eye(d)))
        x0_offset = mu - np.sqrt(ab) * D @ mu
        rhs = np.sqrt(ab) * spd_solve(St, mu) + G.T @ (prob.v - A @ x0_offset)
        mean = cov @ rhs
    else:
        raise ParameterError(f"unknown method {method!r}")
    return GaussianLaw(mean, cov)


def forward_consistency_defect(model: GuidanceModel, prior: GaussianLaw,
                               prob: LinearInverseProblem, sched: Schedule, t: int) -> float:
    """How far ``C_{t|v}^algo`` is from a forward-noised ``C_{0|v}^algo`` (Frobenius norm)."""
    ab = sched.alpha_bars[sched.check_t(t)]
    Ct = induced_noisy_posterior(model, prior, prob, sched, t).cov
    C0 = induced_noisy_posterior(model, prior, prob, sched, 0).cov
    return float(np.linalg.norm(Ct - (ab * C0 + (1.0 - ab) * np.eye(prior.dim)), "fro"))


def wasserstein_curve(model: GuidanceModel, prior: GaussianLaw, prob: LinearInverseProblem,
                      sched: Schedule, trajectory: Optional[BackwardLawTrajectory] = None,
                      basis: Optional[np.ndarray] = None,
                      kernel_mask: Optional[np.ndarray] = None) -> WassersteinCurve:
    """W2 between the sampler's law at ``t`` and the true noisy posterior, ``t = 0..T``.

    If an orthonormal ``basis`` (columns) that diagonalizes the prior and the
    propagated covariances is given together with ``kernel_mask`` (directions
    in the prior's null space), the kernel / orthogonal split is filled too.
    """
    traj = trajectory if trajectory is not None else propagate(model, prior, prob, sched)
    post = condition_on_observation(prior, prob)
    T = sched.T
    w = np.empty(T + 1)
    bias = np.empty(T + 1)
    split = basis is not None
    if split:
        if kernel_mask is None:
            raise ParameterError("kernel_mask is required together with basis")
        w_ker, w_perp = np.empty(T + 1), np.empty(T + 1)
    for t in range(T + 1):
        ab = sched.alpha_bars[t]
        ref = GaussianLaw(np.sqrt(ab) * post.mean, ab * post.cov + (1.0 - ab) * np.eye(prior.dim))
        law = traj.law(t)
        w[t] = wasserstein2(law, ref)
        bias[t] = np.linalg.norm(law.mean - ref.mean)
        if split:
            ea = np.real(np.einsum("ji,jk,ki->i", basis.conj(), law.cov, basis))
            eb = np.real(np.einsum("ji,jk,ki->i", basis.conj(), ref.cov, basis))
            w_ker[t], w_perp[t] = wasserstein2_split(
                basis.conj().T @ law.mean, ea, basis.conj().T @ ref.mean, eb, kernel_mask
            )
    if split:
        return WassersteinCurve(traj.model, w, bias, w_ker, w_perp)
    return WassersteinCurve(traj.model, w, bias)
