"""Pixel-fidelity and structural metrics for radio maps.

All functions take 2-D float arrays (or RadioMap instances) and are pure.
Aggregation over a test set averages the per-sample values; PSNR of a
perfect reconstruction is the +inf sentinel, which propagates through the
average unchanged.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import UndefinedMetricError
from .fields import field_values

SSIM_WINDOW = 8
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _as_pair(y, y_hat):
    a = np.asarray(field_values(y), dtype=np.float64)
    b = np.asarray(field_values(y_hat), dtype=np.float64)
    if a.ndim != 2 or a.shape != b.shape:
        raise ValueError("maps must be 2-D and share a shape")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("maps must be finite")
    return a, b


def mse(y, y_hat) -> float:
    a, b = _as_pair(y, y_hat)
    d = a - b
    return float(np.mean(d * d))


def nmse(y, y_hat) -> float:
    a, b = _as_pair(y, y_hat)
    denom = float(np.sum(a * a))
    if denom <= 0.0:
        raise UndefinedMetricError("nmse needs a nonzero reference map")
    d = a - b
    return float(np.sum(d * d)) / denom


def rmse(y, y_hat) -> float:
    return math.sqrt(mse(y, y_hat))


def psnr(y, y_hat, max_value: float = 1.0) -> float:
    if not max_value > 0.0:
        raise ValueError("max_value must be positive")
    m = mse(y, y_hat)
    if m == 0.0:
        return math.inf
    return 10.0 * math.log10(max_value * max_value / m)


def _window_means(a: np.ndarray, win: int) -> np.ndarray:
    v = np.lib.stride_tricks.sliding_window_view(a, (win, win))
    return v.mean(axis=(2, 3))


def ssim(y, y_hat, window: int = SSIM_WINDOW) -> float:
    """Mean structural similarity over uniform sliding windows.

    Population (biased) moments per window; constants sized for unit
    dynamic range.
    """
    a, b = _as_pair(y, y_hat)
    if window < 2:
        raise ValueError("window must cover at least 2x2 cells")
    if a.shape[0] < window or a.shape[1] < window:
        raise ValueError("map smaller than the SSIM window")
    mu_a = _window_means(a, window)
    mu_b = _window_means(b, window)
    var_a = _window_means(a * a, window) - mu_a * mu_a
    var_b = _window_means(b * b, window) - mu_b * mu_b
    cov = _window_means(a * b, window) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(num / den))


@dataclass
class MetricsReport:
    """Aggregate metrics plus the per-sample values behind them."""

    nmse: float
    rmse: float
    psnr: float
    ssim: float
    per_nmse: list = field(default_factory=list)
    per_rmse: list = field(default_factory=list)
    per_psnr: list = field(default_factory=list)
    per_ssim: list = field(default_factory=list)
    count: int = 0

    def __post_init__(self):
        if self.nmse < 0.0 or self.rmse < 0.0:
            raise ValueError("error metrics cannot be negative")
        if not -1.0 <= self.ssim <= 1.0:
            raise ValueError("ssim out of [-1, 1]")
        if self.count != len(self.per_nmse):
            raise ValueError("count does not match the per-sample lists")


def evaluate_maps(targets, predictions, max_value: float = 1.0,
                  window: int = SSIM_WINDOW) -> MetricsReport:
    """Score a matched list of (target, prediction) maps.

    Aggregates are plain means over samples; an infinite per-sample PSNR
    (exact reconstruction) makes the aggregate infinite as well.
    """
    targets = list(targets)
    predictions = list(predictions)
    if len(targets) != len(predictions) or not targets:
        raise ValueError("need equally many targets and predictions")
    per_n, per_r, per_p, per_s = [], [], [], []
    for y, y_hat in zip(targets, predictions):
        per_n.append(nmse(y, y_hat))
        per_r.append(rmse(y, y_hat))
        per_p.append(psnr(y, y_hat, max_value))
        per_s.append(ssim(y, y_hat, window))
    n = len(per_n)
    return MetricsReport(
        nmse=sum(per_n) / n,
        rmse=sum(per_r) / n,
        psnr=sum(per_p) / n,
        ssim=sum(per_s) / n,
        per_nmse=per_n,
        per_rmse=per_r,
        per_psnr=per_p,
        per_ssim=per_s,
        count=n,
    )


def format_report(rep: MetricsReport) -> str:
    """Line-oriented key = value block, full float precision."""
    lines = [
        "count = %d" % rep.count,
        "nmse = %r" % rep.nmse,
        "rmse = %r" % rep.rmse,
        "psnr = %r" % rep.psnr,
        "ssim = %r" % rep.ssim,
    ]
    for name, vals in (("nmse", rep.per_nmse), ("rmse", rep.per_rmse),
                       ("psnr", rep.per_psnr), ("ssim", rep.per_ssim)):
        lines.append("per_%s = %s" % (name, " ".join(repr(v) for v in vals)))
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> MetricsReport:
    vals = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or "=" not in line:
            continue
        key, _, raw = line.partition("=")
        vals[key.strip()] = raw.strip()
    try:
        per = {name: [float(tok) for tok in vals["per_" + name].split()]
               if vals["per_" + name] else []
               for name in ("nmse", "rmse", "psnr", "ssim")}
        return MetricsReport(
            nmse=float(vals["nmse"]), rmse=float(vals["rmse"]),
            psnr=float(vals["psnr"]), ssim=float(vals["ssim"]),
            per_nmse=per["nmse"], per_rmse=per["rmse"],
            per_psnr=per["psnr"], per_ssim=per["ssim"],
            count=int(vals["count"]),
        )
    except KeyError as exc:
        raise ValueError("report block is missing %s" % exc) from exc
