"""Variance-preserving noise schedule and its closed-form identities.

Discrete time runs t = 0 .. T with alpha_bar[0] = 1: t = 0 is the clean
sample, t = T the most corrupted. The per-step variances are linear in t,
which keeps the signal factor strictly decreasing and the noise factor
strictly increasing, and the pair satisfies alpha(t)^2 + sigma(t)^2 = 1.
"""

import math
from dataclasses import dataclass

import numpy as np

from ..errors import NumericError

DEFAULT_T = 200
DEFAULT_BETA_MIN = 1e-4
DEFAULT_BETA_MAX = 0.02
ALPHA_FLOOR = 1e-8
X0_CLAMP = (-0.1, 1.1)


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    betas: np.ndarray      # (T,) per-step variances, betas[i] is step i+1
    alpha_bar: np.ndarray  # (T+1,) cumulative products, alpha_bar[0] = 1

    def __post_init__(self):
        if self.T < 1 or self.betas.shape != (self.T,):
            raise ValueError("schedule needs T >= 1 matching betas")
        if np.any(self.betas <= 0.0) or np.any(self.betas >= 1.0):
            raise ValueError("betas must lie in (0, 1)")
        if self.alpha_bar.shape != (self.T + 1,) or self.alpha_bar[0] != 1.0:
            raise ValueError("alpha_bar must have T+1 entries starting at 1")

    def _check_t(self, t: int):
        if not 0 <= t <= self.T:
            raise ValueError("t out of range [0, T]")

    def alpha(self, t: int) -> float:
        self._check_t(t)
        return math.sqrt(self.alpha_bar[t])

    def sigma(self, t: int) -> float:
        self._check_t(t)
        return math.sqrt(1.0 - self.alpha_bar[t])


def make_schedule(T: int = DEFAULT_T, beta_min: float = DEFAULT_BETA_MIN,
                  beta_max: float = DEFAULT_BETA_MAX) -> NoiseSchedule:
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ValueError("need 0 < beta_min <= beta_max < 1")
    if T < 1:
        raise ValueError("T must be at least 1")
    if T == 1:
        betas = np.array([beta_min])
    else:
        betas = np.linspace(beta_min, beta_max, T)
    alpha_bar = np.empty(T + 1)
    alpha_bar[0] = 1.0
    alpha_bar[1:] = np.cumprod(1.0 - betas)
    return NoiseSchedule(T=T, betas=betas, alpha_bar=alpha_bar)


def forward_sample(x0: np.ndarray, t: int, eps: np.ndarray,
                   sched: NoiseSchedule) -> np.ndarray:
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError("noise shape must match the sample shape")
    return sched.alpha(t) * x0 + sched.sigma(t) * eps


def predict_x0(x_t: np.ndarray, eps_hat: np.ndarray, t: int,
               sched: NoiseSchedule, clamp: bool = True) -> np.ndarray:
    """Invert the forward corruption using a noise estimate.

    The result is clamped to a slightly widened unit range; pass
    clamp=False for the raw inversion.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if x_t.shape != eps_hat.shape:
        raise ValueError("estimate shape must match the sample shape")
    a = sched.alpha(t)
    if a < ALPHA_FLOOR:
        raise NumericError("signal factor too small to invert")
    x0 = (x_t - sched.sigma(t) * eps_hat) / a
    if clamp:
        x0 = np.clip(x0, X0_CLAMP[0], X0_CLAMP[1])
    return x0


def snr(t: int, sched: NoiseSchedule) -> float:
    a2 = float(sched.alpha_bar[t] if 0 <= t <= sched.T else -1.0)
    sched._check_t(t)
    s2 = 1.0 - a2
    if s2 == 0.0:
        return math.inf
    return a2 / s2


def lambda_dir(t: int, sched: NoiseSchedule, lam_max: float) -> float:
    """SNR-normalized weight lam_max * SNR/(SNR+1) = lam_max * alpha_bar."""
    if lam_max < 0.0:
        raise ValueError("lam_max must be nonnegative")
    sched._check_t(t)
    return lam_max * float(sched.alpha_bar[t])
