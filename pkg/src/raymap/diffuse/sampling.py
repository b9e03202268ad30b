"""Ancestral reverse sampling for the variance-preserving chain.

Each step forms the posterior mean from the clamped clean-sample estimate
and adds the posterior noise, except at the final step, which is
deterministic. reverse_trajectory works in normalized channel space;
sample wraps it with conditioning construction and de-normalization.
"""

import math

import numpy as np

from ..fields import RadioMap
from .data import build_conditioning, denormalize_map
from .net import denoise
from .schedule import predict_x0


def reverse_trajectory(params, cond, sched, rng, adapters=None,
                       denoise_fn=None):
    """Run the full reverse chain; returns (n_heads, H, W) in [0,1]-ish."""
    if denoise_fn is None:
        denoise_fn = denoise
    n = params.n_heads
    h, w = cond.shape[1:]
    x = rng.standard_normal((n, h, w))
    for t in range(sched.T, 0, -1):
        eps_hat = denoise_fn(params, x, t, cond, adapters)
        x0_hat = predict_x0(x, eps_hat, t, sched)
        ab = float(sched.alpha_bar[t])
        ab_prev = float(sched.alpha_bar[t - 1])
        beta_t = float(sched.betas[t - 1])
        alpha_t = 1.0 - beta_t
        mean = (math.sqrt(ab_prev) * beta_t * x0_hat
                + math.sqrt(alpha_t) * (1.0 - ab_prev) * x) / (1.0 - ab)
        if t > 1:
            var = beta_t * (1.0 - ab_prev) / (1.0 - ab)
            x = mean + math.sqrt(var) * rng.standard_normal(x.shape)
        else:
            x = mean
    return x


def combine_channels(channels, stats):
    """Channel stack -> linear-power map, clamped to >= 0."""
    if channels.shape[0] == 1:
        return denormalize_map(np.clip(channels[0], 0.0, 1.0), stats)
    # two-head mode: log-scaled main channel plus linear residual channel
    base = denormalize_map(np.clip(channels[0], 0.0, 1.0), stats)
    res = np.maximum(channels[1], 0.0) * stats.res_hi
    return base + res


def sample(state, scene, stats, sched, rng, denoise_fn=None) -> RadioMap:
    """Draw one radio map for a scene from a trained state."""
    cond = build_conditioning(scene)
    channels = reverse_trajectory(state.params, cond, sched, rng,
                                  adapters=state.adapters,
                                  denoise_fn=denoise_fn)
    values = combine_channels(channels, stats)
    g = scene.grid
    return RadioMap(width=g.width, height=g.height, values=values)
