"""Discrete DDPM noise schedule."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError


@dataclass(frozen=True, eq=False)
class Schedule:
    """Noise schedule indexed directly by the timestep ``t``.

    All arrays have length ``T + 1``. Index 0 is padding for ``betas``
    (0) and ``alphas`` (1) so that ``alpha_bars[0] == 1`` and
    ``alpha_bars[t] == prod(alphas[1:t+1])``.
    """

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def T(self) -> int:
        return len(self.betas) - 1

    @property
    def step_noise_var(self) -> np.ndarray:
        # Backward steps inject noise of variance beta_t (std sqrt(beta_t)).
        return self.betas

    def check_t(self, t: int, lower: int = 0) -> int:
        t = int(t)
        if not lower <= t <= self.T:
            raise ParameterError(f"timestep t={t} outside [{lower}, {self.T}]")
        return t


def schedule_from_betas(betas) -> Schedule:
    """Build a schedule from ``beta_1 .. beta_T``."""
    betas = np.asarray(betas, dtype=float).ravel()
    if betas.size < 1:
        raise ParameterError("need at least one step")
    if not np.all((betas > 0) & (betas < 1)):
        raise ParameterError("every beta must lie in (0, 1)")
    padded = np.concatenate([[0.0], betas])
    alphas = 1.0 - padded
    # Running product in extended precision keeps alpha_bar_T accurate.
    alpha_bars = np.cumprod(alphas.astype(np.longdouble)).astype(float)
    for arr in (padded, alphas, alpha_bars):
        arr.setflags(write=False)
    return Schedule(betas=padded, alphas=alphas, alpha_bars=alpha_bars)


def linear_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> Schedule:
    """Linear beta schedule from ``beta_start`` to ``beta_end`` over ``T`` steps.

    Both endpoints are hit exactly. With the defaults (the original DDPM
    schedule) ``alpha_bars[T]`` is about 4.0358e-5.
    """
    if int(T) != T or T < 1:
        raise ParameterError(f"T must be a positive integer, got {T!r}")
    if not 0 < beta_start <= beta_end < 1:
        raise ParameterError(
            f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )
    return schedule_from_betas(np.linspace(beta_start, beta_end, int(T)))
