"""Map normalization, conditioning channels, and training-set assembly.

Raw maps span orders of magnitude, so training operates on a dB-like
scale: log10(U + LOG_FLOOR), min-max normalized with statistics computed
once over the training set and persisted in the checkpoint. Conditioning
is three channels aligned with the map: occupancy, distance to the
transmitter scaled by the grid diagonal, and a Gaussian splat marking the
transmitter cell.
"""

import math
from dataclasses import dataclass

import numpy as np

from ..envgrid import Scene, distance_field
from ..fields import field_values
from ..featspace import Encoder, encode

LOG_FLOOR = 1e-7
TX_SPLAT_SIGMA = 1.5


@dataclass(frozen=True)
class NormStats:
    """Dataset-wide min-max of the log-scaled maps.

    res_hi carries the linear residual scale used only by the two-channel
    head mode; it stays 0.0 when that mode is unused.
    """

    lo: float
    hi: float
    res_hi: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise ValueError("stats must be finite")
        if not self.hi > self.lo:
            raise ValueError("degenerate stats: hi must exceed lo")


def _log_scale(values: np.ndarray) -> np.ndarray:
    return np.log10(np.asarray(values, dtype=np.float64) + LOG_FLOOR)


def compute_stats(maps, residuals=None) -> NormStats:
    """Min-max of log-scaled values over every map in the training set."""
    maps = list(maps)
    if not maps:
        raise ValueError("need at least one map")
    lo = math.inf
    hi = -math.inf
    for m in maps:
        s = _log_scale(field_values(m))
        lo = min(lo, float(s.min()))
        hi = max(hi, float(s.max()))
    res_hi = 0.0
    if residuals is not None:
        for r in residuals:
            res_hi = max(res_hi, float(np.max(field_values(r))))
    return NormStats(lo=lo, hi=hi, res_hi=res_hi)


def normalize_map(values, stats: NormStats) -> np.ndarray:
    """Log-scale then min-max into [0,1]; out-of-range inputs clip."""
    s = _log_scale(field_values(values))
    return np.clip((s - stats.lo) / (stats.hi - stats.lo), 0.0, 1.0)


def denormalize_map(norm, stats: NormStats) -> np.ndarray:
    """Inverse of normalize_map; output clamped to physical range >= 0."""
    n = np.asarray(field_values(norm), dtype=np.float64)
    lin = np.power(10.0, n * (stats.hi - stats.lo) + stats.lo) - LOG_FLOOR
    return np.maximum(lin, 0.0)


def build_conditioning(scene: Scene) -> np.ndarray:
    """(3, H, W) channels: occupancy, scaled distance, transmitter splat."""
    g = scene.grid
    occ = g.cells.astype(np.float64)
    diag = math.hypot(g.width, g.height) * g.cell_size
    dist = field_values(distance_field(scene)) / diag
    iy, ix = np.indices((g.height, g.width), dtype=np.float64)
    d2 = (ix + 0.5 - scene.tx.x) ** 2 + (iy + 0.5 - scene.tx.y) ** 2
    splat = np.exp(-d2 / (2.0 * TX_SPLAT_SIGMA ** 2))
    return np.stack([occ, dist, splat])


@dataclass(frozen=True)
class Sample:
    """One training example: target channels plus conditioning."""

    x0: np.ndarray    # (n_heads, H, W) normalized target channels
    cond: np.ndarray  # (3, H, W)


@dataclass(frozen=True)
class PairedSample:
    """Fine-tuning example carrying the frozen-encoder reference quantities.

    phi_mp is the feature vector of the normalized main-path reference and
    eta the clamped alignment of the true pair displacement with the shift
    direction; both are fixed before training starts.
    """

    x0: np.ndarray
    cond: np.ndarray
    phi_mp: np.ndarray
    eta: float


def _target_channels(mp_n, mu_n, residual, stats, n_heads):
    if n_heads == 1:
        return mu_n[None] if mu_n is not None else mp_n[None]
    # experimental two-channel mode: main-path channel plus linear residual
    # scaled by the dataset residual maximum
    if stats.res_hi <= 0.0:
        raise ValueError("two-head mode needs residual statistics")
    if residual is None:
        res_n = np.zeros_like(mp_n)
    else:
        res_n = np.asarray(field_values(residual)) / stats.res_hi
    return np.stack([mp_n, res_n])


def build_pretrain_set(scenes, mp_maps, stats: NormStats,
                       n_heads: int = 1) -> list:
    """Main-path-only samples; in two-head mode the residual channel is 0."""
    if len(scenes) != len(mp_maps) or not scenes:
        raise ValueError("need matching scenes and maps")
    out = []
    for scene, mp in zip(scenes, mp_maps):
        mp_n = normalize_map(mp, stats)
        x0 = _target_channels(mp_n, mp_n, None, stats, n_heads)
        out.append(Sample(x0=x0, cond=build_conditioning(scene)))
    return out


def build_finetune_set(scenes, pairs, stats: NormStats, enc: Encoder,
                       v: np.ndarray, n_heads: int = 1) -> list:
    """Paired samples with per-sample eta = max(0, v . (phi_mu - phi_mp)).

    pairs is a list of (mp_map, mu_map); the encoder and direction come
    from the frozen shift geometry estimated on the same normalized scale.
    """
    if len(scenes) != len(pairs) or not scenes:
        raise ValueError("need matching scenes and pairs")
    v = np.asarray(v, dtype=np.float64)
    out = []
    for scene, (mp, mu) in zip(scenes, pairs):
        mp_n = normalize_map(mp, stats)
        mu_n = normalize_map(mu, stats)
        residual = None
        if n_heads == 2:
            residual = np.maximum(
                np.asarray(field_values(mu), dtype=np.float64)
                - np.asarray(field_values(mp), dtype=np.float64), 0.0)
        x0 = _target_channels(mp_n, mu_n, residual, stats, n_heads)
        phi_mp = encode(enc, mp_n).components
        phi_mu = encode(enc, mu_n).components
        eta = max(0.0, float((phi_mu - phi_mp) @ v))
        out.append(PairedSample(x0=x0, cond=build_conditioning(scene),
                                phi_mp=phi_mp, eta=eta))
    return out
