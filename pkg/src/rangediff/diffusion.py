"""Variance-exploding diffusion with s(t) = 1, sigma(t) = t.

Forward corruption, the denoiser/score identity, the probability-flow ODE
and a deterministic Heun sampler that works with any ``Denoiser``.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from .core import ConfigError, as_rng

SIGMA_MIN = 0.002
SIGMA_MAX = 80.0
RHO = 7.0
N_STEPS = 32


class Denoiser(ABC):
    """Estimate of the clean sample given a noisy one at noise level ``sigma``."""

    @abstractmethod
    def evaluate(self, x: np.ndarray, sigma: float, c=None) -> np.ndarray: ...

    def __call__(self, x, sigma, c=None):
        return self.evaluate(x, sigma, c)


class GaussianAnalyticDenoiser(Denoiser):
    """Exact posterior mean when the data are N(mu, s2 I).

    Useful as a ground-truth denoiser: every downstream quantity (score,
    ODE drift, sampled marginals) has a closed form.
    """

    def __init__(self, mu, s2: float):
        if s2 <= 0:
            raise ValueError("s2 must be positive")
        self.mu = np.asarray(mu, dtype=np.float64)
        self.s2 = float(s2)

    def evaluate(self, x, sigma, c=None):
        sig2 = float(sigma) ** 2
        return (self.s2 * x + sig2 * self.mu) / (self.s2 + sig2)

    def log_density(self, x, sigma) -> float:
        """log N(x; mu, (s2 + sigma^2) I) summed over all elements."""
        var = self.s2 + float(sigma) ** 2
        d = np.asarray(x, dtype=np.float64) - self.mu
        return float(-0.5 * np.sum(d * d) / var - 0.5 * d.size * np.log(2 * np.pi * var))


@dataclass(frozen=True)
class NoiseSchedule:
    sigma_min: float
    sigma_max: float
    rho: float
    n_steps: int
    sigmas: np.ndarray  # n_steps + 1 entries, last is 0

    def __len__(self):
        return self.n_steps


def make_schedule(sigma_min=SIGMA_MIN, sigma_max=SIGMA_MAX, rho=RHO, n_steps=N_STEPS) -> NoiseSchedule:
    """Warped grid sigma_i = (a + i/(N-1) * (b - a))**rho with a = sigma_max**(1/rho),
    b = sigma_min**(1/rho), followed by a terminal 0.

    With one step the grid is just (sigma_max, 0).
    """
    if not 0 < sigma_min < sigma_max:
        raise ConfigError("need 0 < sigma_min < sigma_max")
    if rho < 1:
        raise ConfigError("rho must be >= 1")
    if int(n_steps) != n_steps or n_steps < 1:
        raise ConfigError("n_steps must be an integer >= 1")
    n_steps = int(n_steps)
    if n_steps == 1:
        grid = np.array([sigma_max])
    else:
        i = np.arange(n_steps, dtype=np.float64)
        a, b = sigma_max ** (1 / rho), sigma_min ** (1 / rho)
        grid = (a + i / (n_steps - 1) * (b - a)) ** rho
        grid[0], grid[-1] = sigma_max, sigma_min
    sigmas = np.append(grid, 0.0)
    if not np.all(np.diff(sigmas) < 0):
        raise ConfigError("schedule is not strictly decreasing (sigma_min too close to sigma_max?)")
    sigmas.setflags(write=False)
    return NoiseSchedule(float(sigma_min), float(sigma_max), float(rho), n_steps, sigmas)


def forward_corrupt(x0, sigma: float, rng) -> np.ndarray:
    """x_t = x0 + sigma * n with n ~ N(0, I)."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    x0 = np.asarray(x0, dtype=np.float64)
    n = as_rng(rng).standard_normal(x0.shape)
    return x0 + sigma * n


def score_from_denoiser(denoiser, x, sigma: float, c=None) -> np.ndarray:
    """grad_x log p(x; sigma) = (D(x, sigma, c) - x) / sigma^2."""
    if sigma <= 0:
        raise ValueError("score is undefined at sigma = 0")
    return (denoiser(x, sigma, c) - x) / sigma**2


def pf_ode_rhs(denoiser, x, sigma: float, c=None) -> np.ndarray:
    """dx/dsigma of the probability-flow ODE: (x - D(x, sigma, c)) / sigma."""
    if sigma <= 0:
        raise ValueError("ODE drift is undefined at sigma = 0")
    return (x - denoiser(x, sigma, c)) / sigma


def heun_sample(denoiser, schedule: NoiseSchedule, shape, c=None, rng=None, x_init=None) -> np.ndarray:
    """Integrate the PF ODE from sigma_max down to 0.

    Heun (trapezoidal predictor-corrector) on every interval except the last,
    which is a plain Euler step because the drift is undefined at sigma = 0.
    The initial state is ``x_init`` or sigma_max * N(0, I) drawn from ``rng``.
    """
    sig = schedule.sigmas
    if x_init is None:
        x = as_rng(rng).standard_normal(shape) * sig[0]
    else:
        x = np.array(x_init, dtype=np.float64)
    for i in range(schedule.n_steps):
        s_cur, s_next = sig[i], sig[i + 1]
        d_cur = pf_ode_rhs(denoiser, x, s_cur, c)
        x_next = x + (s_next - s_cur) * d_cur
        if s_next > 0:
            d_next = pf_ode_rhs(denoiser, x_next, s_next, c)
            x_next = x + (s_next - s_cur) * 0.5 * (d_cur + d_next)
        x = x_next
    return x


def sample_training_sigma(rng, n: int, p_mean: float = -1.2, p_std: float = 1.2) -> np.ndarray:
    """Log-normal noise levels for denoiser training."""
    return np.exp(p_mean + p_std * as_rng(rng).standard_normal(n))
