"""Conditional DDPM samplers (DPS, PiGDM, CGDM) under a Gaussian prior.

Each sampler differs only in the covariance ``C_{v|t}`` it assumes for the
noisy likelihood ``p_t(v | x_t)``. With an exact Gaussian score every
backward step is affine in the state, so a sampler is fully described by
one :class:`BackwardAffineStep` per timestep.
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
    noised_cov,
    score,
    spd_solve,
    symmetrize,
)
from .schedule import Schedule

DIVERGENCE_NORM = 1e12


class GuidanceModel:
    """Base class: a choice of noisy-likelihood covariance ``C_{v|t}``."""

    name = "guidance"

    @property
    def label(self) -> str:
        return self.name

    def covariance(self, prior, prob, sched, t) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class DPS(GuidanceModel):
    """Diffusion posterior sampling: ``C_{v|t} = (sigma^2 / alpha) I``.

    ``alpha`` is the step-size hyperparameter; it has no default because a
    good value depends on both the data and the operator.
    """

    alpha: float
    name = "dps"

    def __post_init__(self):
        if not self.alpha > 0:
            raise ParameterError(f"DPS alpha must be positive, got {self.alpha}")

    @property
    def label(self) -> str:
        return f"dps(alpha={self.alpha:g})"

    def covariance(self, prior, prob, sched, t):
        return prob.sigma**2 / self.alpha * np.eye(prob.A.shape[0])


@dataclass(frozen=True)
class PiGDM(GuidanceModel):
    """Pseudoinverse-guided DDPM: ``C_{v|t} = (1 - abar_t) A A^T + sigma^2 I``."""

    name = "pigdm"

    def covariance(self, prior, prob, sched, t):
        ab = sched.alpha_bars[t]
        A = prob.A
        return (1.0 - ab) * A @ A.T + prob.sigma**2 * np.eye(A.shape[0])


@dataclass(frozen=True)
class CGDM(GuidanceModel):
    """Exact Gaussian noisy likelihood: ``(1 - abar_t) A Sigma Sigma_t^{-1} A^T + sigma^2 I``."""

    name = "cgdm"

    def covariance(self, prior, prob, sched, t):
        ab = sched.alpha_bars[t]
        A = prob.A
        post = symmetrize((1.0 - ab) * spd_solve(noised_cov(prior, sched, t), prior.cov))
        return symmetrize(A @ post @ A.T) + prob.sigma**2 * np.eye(A.shape[0])


def parse_model(spec) -> GuidanceModel:
    """Build a model from ``"cgdm"``, ``"pigdm"``, ``"dps:0.2"`` or a mapping."""
    if isinstance(spec, GuidanceModel):
        return spec
    if isinstance(spec, dict):
        name = str(spec.get("name", "")).lower()
        alpha = spec.get("alpha")
    else:
        name, _, rest = str(spec).lower().partition(":")
        alpha = float(rest) if rest else None
    if name == "dps":
        if alpha is None:
            raise ParameterError("DPS needs an explicit alpha")
        return DPS(float(alpha))
    if name in ("pigdm", "πgdm"):
        return PiGDM()
    if name == "cgdm":
        return CGDM()
    raise ParameterError(f"unknown guidance model {spec!r}")


@dataclass(frozen=True, eq=False)
class BackwardAffineStep:
    """``y_{t-1} = lin @ y_t + shift + sqrt(noise_var) * z``."""

    lin: np.ndarray
    shift: np.ndarray
    noise_var: float


def guidance_covariance(model: GuidanceModel, prior: GaussianLaw, prob: LinearInverseProblem,
                        sched: Schedule, t: int) -> np.ndarray:
    _check_problem(prior, prob, need_v=False)
    t = sched.check_t(t, lower=1)
    return symmetrize(model.covariance(prior, prob, sched, t))


def backward_affine_step(model: GuidanceModel, prior: GaussianLaw, prob: LinearInverseProblem,
                         sched: Schedule, t: int) -> BackwardAffineStep:
    """Affine form of one conditional backward step of ``model``."""
    _check_problem(prior, prob)
    t = sched.check_t(t, lower=1)
    beta, alpha, ab = sched.betas[t], sched.alphas[t], sched.alpha_bars[t]
    d, A, mu = prior.dim, prob.A, prior.mean
    St_inv = spd_solve(noised_cov(prior, sched, t), np.eye(d))
    D = _denoise_matrix(prior, sched, t)
    C = guidance_covariance(model, prior, prob, sched, t)
    # G = D^T A^T C^{-1}, the Jacobian-transposed guidance gain
    G = spd_solve(C, A @ D).T
    lin = (np.eye(d) - beta * St_inv - beta * G @ A @ D) / np.sqrt(alpha)
    x0_offset = mu - np.sqrt(ab) * D @ mu
    shift = beta * (np.sqrt(ab) * St_inv @ mu + G @ (prob.v - A @ x0_offset)) / np.sqrt(alpha)
    return BackwardAffineStep(lin, shift, float(beta))


def conditional_score(model: GuidanceModel, prior: GaussianLaw, prob: LinearInverseProblem,
                      sched: Schedule, t: int, y: np.ndarray) -> np.ndarray:
    """Guided score of the sampler, computed the way the sampler does it.

    Tweedie's formula gives ``x0_hat`` from the unconditional score, then
    the gradient of ``-1/2 ||v - A x0_hat(y)||^2_{C^{-1}}`` is added.
    """
    _check_problem(prior, prob)
    t = sched.check_t(t, lower=1)
    ab = sched.alpha_bars[t]
    s = score(prior, sched, t, y)
    x0_hat = (y + (1.0 - ab) * s) / np.sqrt(ab)
    C = guidance_covariance(model, prior, prob, sched, t)
    resid = spd_solve(C, prob.A @ x0_hat - prob.v)
    # d x0_hat / d y = sqrt(abar) Sigma_t^{-1} Sigma
    jac_T = _denoise_matrix(prior, sched, t)
    return s - jac_T @ (prob.A.T @ resid)


def backward_steps(model, prior, prob, sched) -> list:
    """Affine steps for ``t = 0..T``; entry 0 is ``None``."""
    return [None] + [backward_affine_step(model, prior, prob, sched, t) for t in range(1, sched.T + 1)]


def _guard(y, label, t):
    if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > DIVERGENCE_NORM:
        raise NumericalInstabilityError(label, t, "state norm exceeded the divergence guard")


def simulate_conditional(model: GuidanceModel, prior: GaussianLaw, prob: LinearInverseProblem,
                         sched: Schedule, rng: np.random.Generator,
                         n_samples: Optional[int] = None, trajectory: bool = True,
                         steps: Optional[list] = None) -> np.ndarray:
    """Run the conditional backward chain from ``y_T ~ N(0, I)``.

    With ``trajectory=True`` returns an array whose index ``t`` along the
    first axis holds ``y_t`` (shape ``(T+1, d)`` or ``(T+1, n, d)``);
    otherwise only ``y_0``. Noise is drawn in a fixed order (``y_T`` then
    ``z_T .. z_1``), so two models run with equally seeded generators see
    identical noise.
    """
    steps = steps if steps is not None else backward_steps(model, prior, prob, sched)
    T, d = sched.T, prior.dim
    shape = (d,) if n_samples is None else (n_samples, d)
    y = rng.standard_normal(shape)
    traj = np.empty((T + 1,) + shape) if trajectory else None
    if trajectory:
        traj[T] = y
    for t in range(T, 0, -1):
        st = steps[t]
        z = rng.standard_normal(shape)
        y = y @ st.lin.T + st.shift + np.sqrt(st.noise_var) * z
        _guard(y, model.label, t)
        if trajectory:
            traj[t - 1] = y
    return traj if trajectory else y


def simulate_unconditional(prior: GaussianLaw, sched: Schedule, rng: np.random.Generator,
                           direction: str = "backward", n_samples: Optional[int] = None,
                           trajectory: bool = True) -> np.ndarray:
    """Plain DDPM chains with the exact score.

    ``direction="forward"`` noises ``x_0 ~ prior`` up to ``x_T``;
    ``direction="backward"`` denoises ``y_T ~ N(0, I)`` down to ``y_0``.
    The result is indexed by ``t`` as in :func:`simulate_conditional`.
    """
    T, d = sched.T, prior.dim
    shape = (d,) if n_samples is None else (n_samples, d)
    traj = np.empty((T + 1,) + shape) if trajectory else None
    if direction == "forward":
        x = prior.sample(rng, n_samples)
        if trajectory:
            traj[0] = x
        for t in range(1, T + 1):
            x = np.sqrt(sched.alphas[t]) * x + np.sqrt(sched.betas[t]) * rng.standard_normal(shape)
            if trajectory:
                traj[t] = x
        return traj if trajectory else x
    if direction != "backward":
        raise ParameterError(f"direction must be 'forward' or 'backward', got {direction!r}")
    y = rng.standard_normal(shape)
    if trajectory:
        traj[T] = y
    for t in range(T, 0, -1):
        St_inv = spd_solve(noised_cov(prior, sched, t), np.eye(d))
        s = -(y - np.sqrt(sched.alpha_bars[t]) * prior.mean) @ St_inv
        y = (y + sched.betas[t] * s) / np.sqrt(sched.alphas[t]) + np.sqrt(sched.betas[t]) * rng.standard_normal(shape)
        _guard(y, "ddpm", t)
        if trajectory:
            traj[t - 1] = y
    return traj if trajectory else y
