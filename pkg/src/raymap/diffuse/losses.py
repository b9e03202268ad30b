"""Denoising objectives: score matching plus the direction-consistency term.

The base loss is the mean squared noise-prediction error over batch,
heads, and pixels. The total loss adds, per sample, the SNR-weighted
direction term evaluated on the predicted clean map: its feature
displacement from the main-path reference must stay aligned with the
frozen shift direction. With lam_max = 0 the direction branch is never
entered and the arithmetic is identical to the base loss, draw for draw.

Gradients are exact: the direction term backpropagates through the
clamped inversion x0_hat = (x_t - sigma eps_hat)/alpha (clamped pixels
carry zero gradient) and through the linear encoder.
"""

import numpy as np

from ..errors import DegenerateShiftError
from ..featspace import dcl_finetune, encoder_matrix
from .net import backward, denoise
from .schedule import X0_CLAMP, forward_sample, lambda_dir


def _accumulate(acc, grads):
    if acc is None:
        return {k: v.copy() for k, v in grads.items()}
    for k, v in grads.items():
        acc[k] += v
    return acc


def _zero_like(grads):
    return {k: np.zeros_like(v) for k, v in grads.items()}


def _loss_over_batch(params, batch, sched, rng, adapters, train,
                     geometry, enc_mat, beta, lam_max, phi_refs, etas):
    nb = len(batch)
    if nb == 0:
        raise ValueError("empty batch")
    total = 0.0
    acc = None
    for i, sample in enumerate(batch):
        x0 = sample.x0
        cond = sample.cond
        t = int(rng.integers(1, sched.T + 1))
        eps = rng.standard_normal(x0.shape)
        x_t = forward_sample(x0, t, eps, sched)
        eps_hat, cache = denoise(params, x_t, t, cond, adapters,
                                 want_cache=True)
        diff = eps_hat - eps
        total += float(np.mean(diff * diff)) / nb
        d_out = (2.0 / (diff.size * nb)) * diff
        if lam_max > 0.0:
            lam = lambda_dir(t, sched, lam_max)
            a = sched.alpha(t)
            s = sched.sigma(t)
            raw = (x_t - s * eps_hat) / a
            mask = (raw > X0_CLAMP[0]) & (raw < X0_CLAMP[1])
            x0_hat = np.clip(raw, X0_CLAMP[0], X0_CLAMP[1])
            map_flat = x0_hat.sum(axis=0).ravel()
            dh = enc_mat @ map_flat - phi_refs[i]
            total += lam * dcl_finetune(dh, geometry.v, etas[i], beta) / nb
            align = float(dh @ geometry.v)
            g_dh = (2.0 * (dh - align * geometry.v)
                    + 2.0 * beta * (align - etas[i]) * geometry.v)
            g_map = (enc_mat.T @ g_dh).reshape(x0.shape[1:])
            g_chan = np.where(mask, g_map[None, :, :], 0.0)
            d_out = d_out + (lam / nb) * (-s / a) * g_chan
        acc = _accumulate(acc, backward(params, cache, d_out, adapters,
                                        train))
    return total, acc


def loss_base(params, batch, sched, rng, adapters=None, train="full"):
    """Mean squared noise-prediction error and its parameter gradients."""
    return _loss_over_batch(params, batch, sched, rng, adapters, train,
                            geometry=None, enc_mat=None, beta=0.0,
                            lam_max=0.0, phi_refs=None, etas=None)


def loss_total(params, paired_batch, geometry, enc, sched, beta, lam_max,
               rng, adapters=None, train="full", enc_mat=None):
    """Base loss plus the SNR-weighted direction-consistency term.

    paired_batch entries must carry phi_mp and eta (see data.PairedSample).
    Passing a precomputed enc_mat avoids rebuilding the encoder's composite
    matrix every step.
    """
    if lam_max < 0.0 or beta < 0.0:
        raise ValueError("lam_max and beta must be nonnegative")
    if lam_max > 0.0:
        if geometry is None or np.linalg.norm(geometry.w) < 1e-12:
            raise DegenerateShiftError("no usable shift direction")
        if enc_mat is None:
            enc_mat = encoder_matrix(enc)
        phi_refs = [s.phi_mp for s in paired_batch]
        etas = [s.eta for s in paired_batch]
    else:
        phi_refs = etas = None
    return _loss_over_batch(params, paired_batch, sched, rng, adapters,
                            train, geometry, enc_mat, beta, lam_max,
                            phi_refs, etas)
