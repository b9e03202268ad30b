"""Variance-preserving diffusion on radio maps.

Submodules: schedule (noise schedule and closed-form identities), data
(normalization, conditioning, dataset assembly), net (small conditional
conv denoiser with hand-written gradients), losses (denoising score
matching plus the direction-consistency term), training (adaptive
optimizer loops for pretraining and few-shot fine-tuning), sampling
(ancestral reverse process), checkpoint (binary state files).
"""

from .schedule import (NoiseSchedule, forward_sample, lambda_dir,  # noqa: F401
                       make_schedule, predict_x0, snr)
from .data import (NormStats, build_conditioning,  # noqa: F401
                   build_finetune_set, build_pretrain_set, compute_stats,
                   denormalize_map, normalize_map)
from .net import (DenoiserParams, LoraAdapters, denoise,  # noqa: F401
                  init_adapters, init_params)
from .losses import loss_base, loss_total  # noqa: F401
from .training import TrainState, finetune, pretrain  # noqa: F401
from .sampling import sample  # noqa: F401
from .checkpoint import load_checkpoint, save_checkpoint  # noqa: F401
