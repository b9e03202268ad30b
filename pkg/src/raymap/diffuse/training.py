"""Deterministic training loops for pretraining and few-shot fine-tuning.

Single-threaded on purpose: given the same seed, config, and dataset the
run is bit-reproducible. The optimizer is Adam with global-norm gradient
clipping. A divergence guard aborts when the loss explodes three orders
of magnitude past its starting point.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import TrainingDivergedError
from ..featspace import encoder_matrix
from .losses import loss_base, loss_total
from .net import DenoiserParams, LoraAdapters, init_adapters
from .schedule import make_schedule

PRETRAIN_LR = 1e-3
FINETUNE_LR = 1e-4
CLIP_NORM = 1.0
ADAM_B1 = 0.9
ADAM_B2 = 0.999
ADAM_EPS = 1e-8
DIVERGENCE_FACTOR = 1e3


@dataclass
class TrainState:
    """Everything a run needs to continue or to be audited afterwards."""

    params: DenoiserParams
    adapters: LoraAdapters | None
    moments: dict
    step: int
    seed: int
    loss_history: list = field(default_factory=list)
    mode: str = "full"


def _clip_global(grads, clip):
    total = 0.0
    for name in sorted(grads):
        g = grads[name]
        total += float(np.sum(g * g))
    norm = math.sqrt(total)
    if norm > clip and norm > 0.0:
        scale = clip / norm
        for name in grads:
            grads[name] = grads[name] * scale
    return grads


def _adam_step(trainables, grads, moments, step, lr):
    # step is 1-based for the bias correction
    c1 = 1.0 - ADAM_B1 ** step
    c2 = 1.0 - ADAM_B2 ** step
    for name in sorted(trainables):
        g = grads[name]
        if name not in moments:
            moments[name] = [np.zeros_like(g), np.zeros_like(g)]
        m, v = moments[name]
        m *= ADAM_B1
        m += (1.0 - ADAM_B1) * g
        v *= ADAM_B2
        v += (1.0 - ADAM_B2) * g * g
        trainables[name] -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


def _guard(loss, initial, step):
    if not math.isfinite(loss) or (initial is not None
                                   and loss > DIVERGENCE_FACTOR
                                   * max(initial, 1e-12)):
        raise TrainingDivergedError(
            f"loss {loss!r} at step {step} exceeded the divergence guard")


def pretrain(dataset, steps, batch_size=8, lr=PRETRAIN_LR, seed=0,
             sched=None, params=None, n_heads=1,
             clip=CLIP_NORM) -> TrainState:
    """Minimize the base denoising loss over a main-path dataset."""
    from .net import init_params
    if not dataset:
        raise ValueError("empty dataset")
    if sched is None:
        sched = make_schedule()
    if params is None:
        params = init_params(seed=seed, n_heads=n_heads)
    state = TrainState(params=params.copy(), adapters=None, moments={},
                       step=0, seed=seed, mode="full")
    rng = np.random.default_rng(np.random.SeedSequence([31, seed]))
    trainables = state.params.tensors()
    initial = None
    for _ in range(steps):
        idx = rng.integers(0, len(dataset), size=batch_size)
        batch = [dataset[int(i)] for i in idx]
        loss, grads = loss_base(state.params, batch, sched, rng)
        _guard(loss, initial, state.step)
        if initial is None:
            initial = max(loss, 1e-12)
        _clip_global(grads, clip)
        state.step += 1
        _adam_step(trainables, grads, state.moments, state.step, lr)
        state.loss_history.append(loss)
    return state


def finetune(state, pairs, geometry, enc, mode="full", lam_max=0.4,
             beta=1.0, steps=400, batch_size=4, lr=FINETUNE_LR, seed=0,
             sched=None, rank=4, clip=CLIP_NORM) -> TrainState:
    """Adapt a pretrained state on paired samples with the direction term.

    mode="lora" trains only low-rank adapter factors; the base parameter
    tensors come out bit-identical. lam_max=0 disables the direction term
    entirely (the ablation baseline).
    """
    if mode not in ("full", "lora"):
        raise ValueError("mode must be 'full' or 'lora'")
    if not pairs:
        raise ValueError("need at least one pair")
    if sched is None:
        sched = make_schedule()
    params = state.params.copy()
    if mode == "lora":
        adapters = init_adapters(params, rank, seed=seed)
        trainables = adapters.tensors
    else:
        adapters = None
        trainables = params.tensors()
    out = TrainState(params=params, adapters=adapters, moments={}, step=0,
                     seed=seed, mode=mode)
    enc_mat = encoder_matrix(enc) if lam_max > 0.0 else None
    rng = np.random.default_rng(np.random.SeedSequence([37, seed]))
    initial = None
    for _ in range(steps):
        idx = rng.integers(0, len(pairs), size=batch_size)
        batch = [pairs[int(i)] for i in idx]
        loss, grads = loss_total(params, batch, geometry, enc, sched, beta,
                                 lam_max, rng, adapters=adapters, train=mode,
                                 enc_mat=enc_mat)
        _guard(loss, initial, out.step)
        if initial is None:
            initial = max(loss, 1e-12)
        _clip_global(grads, clip)
        out.step += 1
        _adam_step(trainables, grads, out.moments, out.step, lr)
        out.loss_history.append(loss)
    return out
