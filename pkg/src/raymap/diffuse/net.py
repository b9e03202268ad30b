"""Small conditional convolutional denoiser with analytic gradients.

Architecture (fixed): four 3x3 SAME convolutions with tanh between them,
hidden width 16. The integer diffusion time enters as a sinusoidal
embedding pushed through a learned linear map and added channel-wise
after the first convolution. Conditioning channels are concatenated with
the noisy map channels at the input. The output layer starts at zero so
an untrained network predicts zero noise.

Convolutions run as matrix products against im2col patch matrices, which
makes the backward pass a pair of transposed products per layer. Optional
low-rank adapters add A @ B to a convolution weight matrix; training can
then update only the factors while the base weights stay untouched.
"""

import math
from dataclasses import dataclass

import numpy as np

HIDDEN = 16
TEMB_DIM = 16
KSIZE = 3
COND_CHANNELS = 3
CONV_NAMES = ("w1", "w2", "w3", "w4")


@dataclass
class DenoiserParams:
    n_heads: int
    hidden: int
    temb_dim: int
    w1: np.ndarray
    b1: np.ndarray
    wt: np.ndarray
    bt: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    w4: np.ndarray
    b4: np.ndarray

    def tensors(self) -> dict:
        """Name -> array views, in a fixed order used everywhere."""
        return {
            "w1": self.w1, "b1": self.b1, "wt": self.wt, "bt": self.bt,
            "w2": self.w2, "b2": self.b2, "w3": self.w3, "b3": self.b3,
            "w4": self.w4, "b4": self.b4,
        }

    def copy(self) -> "DenoiserParams":
        return DenoiserParams(
            n_heads=self.n_heads, hidden=self.hidden, temb_dim=self.temb_dim,
            **{k: v.copy() for k, v in self.tensors().items()})

    def __post_init__(self):
        for name, arr in self.tensors().items():
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite parameter tensor {name}")


@dataclass
class LoraAdapters:
    """Low-rank factor pairs per convolution weight: delta W = A @ B."""

    rank: int
    tensors: dict  # "w1.A": (out, r), "w1.B": (r, in), ... per conv

    def copy(self) -> "LoraAdapters":
        return LoraAdapters(rank=self.rank,
                            tensors={k: v.copy() for k, v in
                                     self.tensors.items()})


def in_channels(n_heads: int) -> int:
    return n_heads + COND_CHANNELS


def init_params(seed: int = 0, n_heads: int = 1, hidden: int = HIDDEN,
                temb_dim: int = TEMB_DIM) -> DenoiserParams:
    if n_heads not in (1, 2):
        raise ValueError("n_heads must be 1 or 2")
    rng = np.random.default_rng(np.random.SeedSequence([23, seed]))
    c0 = in_channels(n_heads) * KSIZE * KSIZE
    ch = hidden * KSIZE * KSIZE

    def xavier(out, fan_in):
        return rng.normal(0.0, math.sqrt(1.0 / fan_in), size=(out, fan_in))

    return DenoiserParams(
        n_heads=n_heads, hidden=hidden, temb_dim=temb_dim,
        w1=xavier(hidden, c0), b1=np.zeros(hidden),
        wt=xavier(hidden, temb_dim), bt=np.zeros(hidden),
        w2=xavier(hidden, ch), b2=np.zeros(hidden),
        w3=xavier(hidden, ch), b3=np.zeros(hidden),
        w4=np.zeros((n_heads, ch)), b4=np.zeros(n_heads),
    )


def init_adapters(params: DenoiserParams, rank: int,
                  seed: int = 0) -> LoraAdapters:
    """A is small random, B zero, so the initial delta is exactly zero.

    The requested rank caps at each weight's smaller dimension (the output
    head has very few rows), keeping every factor pair valid.
    """
    if rank < 1:
        raise ValueError("adapter rank must be at least 1")
    rng = np.random.default_rng(np.random.SeedSequence([29, seed]))
    tensors = {}
    for name in CONV_NAMES:
        w = params.tensors()[name]
        r = min(rank, min(w.shape))
        tensors[name + ".A"] = rng.normal(0.0, 0.01, size=(w.shape[0], r))
        tensors[name + ".B"] = np.zeros((r, w.shape[1]))
    return LoraAdapters(rank=rank, tensors=tensors)


def _eff_weight(params: DenoiserParams, adapters, name: str) -> np.ndarray:
    w = params.tensors()[name]
    if adapters is None:
        return w
    return w + adapters.tensors[name + ".A"] @ adapters.tensors[name + ".B"]


def time_embedding(t: int, dim: int = TEMB_DIM) -> np.ndarray:
    """Sinusoidal embedding of the integer diffusion step."""
    half = dim // 2
    freqs = np.power(10000.0, -np.arange(half) / half)
    ang = t * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)])


def _im2col(x: np.ndarray) -> np.ndarray:
    """(C, H, W) -> (C*9, H*W) patch matrix, zero border padding."""
    c, h, w = x.shape
    pad = np.zeros((c, h + 2, w + 2))
    pad[:, 1:h + 1, 1:w + 1] = x
    v = np.lib.stride_tricks.sliding_window_view(pad, (KSIZE, KSIZE),
                                                 axis=(1, 2))
    return np.ascontiguousarray(
        v.transpose(0, 3, 4, 1, 2)).reshape(c * KSIZE * KSIZE, h * w)


def _col2im(cols: np.ndarray, c: int, h: int, w: int) -> np.ndarray:
    """Adjoint of _im2col: scatter patch-gradients back onto the plane."""
    acc = np.zeros((c, h + 2, w + 2))
    g = cols.reshape(c, KSIZE, KSIZE, h, w)
    for di in range(KSIZE):
        for dj in range(KSIZE):
            acc[:, di:di + h, dj:dj + w] += g[:, di, dj]
    return acc[:, 1:h + 1, 1:w + 1]


def denoise(params: DenoiserParams, x_t: np.ndarray, t: int,
            cond: np.ndarray, adapters: LoraAdapters = None,
            want_cache: bool = False):
    """Per-head noise estimate; optionally keep activations for backward."""
    x_t = np.asarray(x_t, dtype=np.float64)
    cond = np.asarray(cond, dtype=np.float64)
    if x_t.ndim != 3 or x_t.shape[0] != params.n_heads:
        raise ValueError("x_t must be (n_heads, H, W)")
    if cond.shape != (COND_CHANNELS,) + x_t.shape[1:]:
        raise ValueError("conditioning shape mismatch")
    _, h, w = x_t.shape
    inp = np.concatenate([x_t, cond], axis=0)
    emb = time_embedding(t, params.temb_dim)

    cols0 = _im2col(inp)
    pre1 = (_eff_weight(params, adapters, "w1") @ cols0
            + (params.b1 + params.wt @ emb + params.bt)[:, None])
    h1 = np.tanh(pre1)
    cols1 = _im2col(h1.reshape(params.hidden, h, w))
    h2 = np.tanh(_eff_weight(params, adapters, "w2") @ cols1
                 + params.b2[:, None])
    cols2 = _im2col(h2.reshape(params.hidden, h, w))
    h3 = np.tanh(_eff_weight(params, adapters, "w3") @ cols2
                 + params.b3[:, None])
    cols3 = _im2col(h3.reshape(params.hidden, h, w))
    out = (_eff_weight(params, adapters, "w4") @ cols3
           + params.b4[:, None]).reshape(params.n_heads, h, w)
    if not want_cache:
        return out
    cache = {"emb": emb, "shape": (h, w), "cols0": cols0, "h1": h1,
             "cols1": cols1, "h2": h2, "cols2": cols2, "h3": h3,
             "cols3": cols3}
    return out, cache


def backward(params: DenoiserParams, cache: dict, d_out: np.ndarray,
             adapters: LoraAdapters = None, train: str = "full") -> dict:
    """Gradients of a scalar loss given d loss / d output.

    train="full" returns base-tensor gradients; train="lora" returns only
    adapter-factor gradients. d_out is (n_heads, H, W) or (n_heads, H*W).
    """
    if train not in ("full", "lora"):
        raise ValueError("train must be 'full' or 'lora'")
    h, w = cache["shape"]
    hw = h * w
    d4 = np.asarray(d_out, dtype=np.float64).reshape(params.n_heads, hw)
    hidden = params.hidden
    grads = {}

    def conv_grads(name, delta, cols):
        dw = delta @ cols.T
        if train == "full":
            grads[name] = dw
        else:
            a = adapters.tensors[name + ".A"]
            b = adapters.tensors[name + ".B"]
            grads[name + ".A"] = dw @ b.T
            grads[name + ".B"] = a.T @ dw

    # layer 4 (linear output)
    conv_grads("w4", d4, cache["cols3"])
    if train == "full":
        grads["b4"] = d4.sum(axis=1)
    dcols3 = _eff_weight(params, adapters, "w4").T @ d4
    dh3 = _col2im(dcols3, hidden, h, w).reshape(hidden, hw)

    # layer 3
    d3 = dh3 * (1.0 - cache["h3"] * cache["h3"])
    conv_grads("w3", d3, cache["cols2"])
    if train == "full":
        grads["b3"] = d3.sum(axis=1)
    dcols2 = _eff_weight(params, adapters, "w3").T @ d3
    dh2 = _col2im(dcols2, hidden, h, w).reshape(hidden, hw)

    # layer 2
    d2 = dh2 * (1.0 - cache["h2"] * cache["h2"])
    conv_grads("w2", d2, cache["cols1"])
    if train == "full":
        grads["b2"] = d2.sum(axis=1)
    dcols1 = _eff_weight(params, adapters, "w2").T @ d2
    dh1 = _col2im(dcols1, hidden, h, w).reshape(hidden, hw)

    # layer 1 + time path (bias and embedding share the channel sum)
    d1 = dh1 * (1.0 - cache["h1"] * cache["h1"])
    conv_grads("w1", d1, cache["cols0"])
    if train == "full":
        dsum = d1.sum(axis=1)
        grads["b1"] = dsum
        grads["bt"] = dsum.copy()
        grads["wt"] = np.outer(dsum, cache["emb"])
    return grads
