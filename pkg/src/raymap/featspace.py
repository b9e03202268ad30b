"""Frozen linear feature encoder and shift-direction geometry.

A fixed encoder maps radio maps to d-dimensional feature vectors by average
pooling to a P x P grid and applying a seeded Gaussian projection. Paired
main-path / multipath features then define an empirical shift direction; the
losses here penalize feature displacements that leave the half-line spanned
by that direction.

ShiftGeometry files are little-endian: magic ``RFW1``, int32 d, then w, v
(d float64 each), eta_bound (float64), and the per-sample eta list (float64
to end of file).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DegenerateShiftError, FormatError
from .fields import field_values

GEOMETRY_MAGIC = b"RFW1"

DEGENERATE_NORM = 1e-12


@dataclass(frozen=True)
class FeatureVector:
    components: np.ndarray  # (d,)

    def __post_init__(self):
        c = np.asarray(self.components, dtype=np.float64)
        if c.ndim != 1:
            raise ValueError("feature vector must be 1-D")
        if not np.all(np.isfinite(c)):
            raise ValueError("feature vector entries must be finite")
        object.__setattr__(self, "components", c)

    @property
    def d(self) -> int:
        return self.components.size


def _vec(x) -> np.ndarray:
    if isinstance(x, FeatureVector):
        return x.components
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError("expected a 1-D vector")
    return arr


# ----------------------------------------------------------------------
# encoder
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class Encoder:
    """Linear map: average-pool to pool_size x pool_size, flatten, project.

    `lipschitz` is a certified upper bound on the operator 2-norm of the
    composite map for inputs of `input_shape` (pooling pads by reflection
    when the dims do not divide evenly)."""

    pool_size: int
    d: int
    seed: int
    input_shape: tuple[int, int]
    projection: np.ndarray  # (d, pool_size**2)
    lipschitz: float

    def __post_init__(self):
        p = np.asarray(self.projection, dtype=np.float64)
        if p.shape != (self.d, self.pool_size ** 2):
            raise ValueError(
                f"projection shape {p.shape} does not match "
                f"({self.d}, {self.pool_size ** 2})"
            )
        object.__setattr__(self, "projection", p)


def _pool(values: np.ndarray, p: int) -> np.ndarray:
    h, w = values.shape
    if h < 1 or w < 1:
        raise ValueError("cannot pool an empty field")
    fh = -(-h // p)
    fw = -(-w // p)
    pad_h = fh * p - h
    pad_w = fw * p - w
    if pad_h or pad_w:
        values = np.pad(values, ((0, pad_h), (0, pad_w)), mode="symmetric")
    return values.reshape(p, fh, p, fw).mean(axis=(1, 3))


def _composite_matrix(pool_size: int, projection: np.ndarray,
                      shape: tuple[int, int]) -> np.ndarray:
    """Explicit (d, H*W) matrix of pad -> pool -> project."""
    h, w = shape
    basis = np.eye(h * w).reshape(h * w, h, w)
    fh = -(-h // pool_size)
    fw = -(-w // pool_size)
    pad_h = fh * pool_size - h
    pad_w = fw * pool_size - w
    if pad_h or pad_w:
        basis = np.pad(basis, ((0, 0), (0, pad_h), (0, pad_w)),
                       mode="symmetric")
    pooled = basis.reshape(h * w, pool_size, fh, pool_size, fw).mean(
        axis=(2, 4)).reshape(h * w, pool_size ** 2)
    return projection @ pooled.T


def _operator_norm_of(mat: np.ndarray, seed: int) -> float:
    """Largest singular value by power iteration on mat^T mat, converged to
    1e-10 relative change; raises ConvergenceError after 10k iterations."""
    n = mat.shape[1]
    rng = np.random.default_rng(np.random.SeedSequence([17, seed]))
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    prev = -1.0
    for _ in range(10_000):
        y = mat @ x
        sigma = float(np.linalg.norm(y))
        if sigma == 0.0:
            return 0.0
        if prev >= 0.0 and abs(sigma - prev) <= 1e-10 * sigma:
            return sigma
        prev = sigma
        x = mat.T @ y
        nx = float(np.linalg.norm(x))
        if nx == 0.0:
            return sigma
        x /= nx
    raise ConvergenceError(
        "operator-norm power iteration did not converge in 10000 steps")


def make_encoder(input_shape: tuple[int, int] = (32, 32),
                 pool_size: int = 8, d: int = 64, seed: int = 0,
                 projection: np.ndarray | None = None) -> Encoder:
    """Deterministic frozen encoder; the default projection has Gaussian
    entries with standard deviation 1/pool_size."""
    if pool_size < 1:
        raise ValueError("pool_size must be positive")
    if d < 1:
        raise ValueError("feature dimension must be positive")
    if projection is None:
        rng = np.random.default_rng(np.random.SeedSequence([13, seed]))
        projection = rng.standard_normal((d, pool_size ** 2)) / pool_size
    else:
        projection = np.asarray(projection, dtype=np.float64)
        if projection.shape != (d, pool_size ** 2):
            raise ValueError("projection shape mismatch")
    mat = _composite_matrix(pool_size, projection, input_shape)
    lip = 1.01 * _operator_norm_of(mat, seed)
    return Encoder(pool_size=pool_size, d=d, seed=seed,
                   input_shape=tuple(input_shape), projection=projection,
                   lipschitz=lip)


def identity_encoder(n: int) -> Encoder:
    """Encoder whose features are the raw pixels of an n x n map (pooling
    factor 1, identity projection). Useful where exact arithmetic matters."""
    return make_encoder(input_shape=(n, n), pool_size=n, d=n * n,
                        projection=np.eye(n * n))


def encode(enc: Encoder, field) -> FeatureVector:
    v = field_values(field)
    pooled = _pool(v, enc.pool_size)
    return FeatureVector(components=enc.projection @ pooled.ravel())


def encoder_matrix(enc: Encoder,
                   shape: tuple[int, int] | None = None) -> np.ndarray:
    """Explicit (d, H*W) matrix of the encoder for a given input shape."""
    return _composite_matrix(enc.pool_size, enc.projection,
                             enc.input_shape if shape is None else shape)


def operator_norm(enc: Encoder) -> float:
    """Raw operator 2-norm (no safety factor) for the declared input shape."""
    return _operator_norm_of(encoder_matrix(enc), enc.seed)


def lipschitz_bound(enc: Encoder) -> float:
    """Certified bound: power-iteration operator norm times 1.01."""
    return 1.01 * operator_norm(enc)


# ----------------------------------------------------------------------
# shift geometry
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class ShiftGeometry:
    w: np.ndarray               # (d,) mean feature shift
    v: np.ndarray               # (d,) unit direction w / ||w||
    eta_bound: float            # max_i ||delta_i||
    per_sample_eta: np.ndarray  # (N,) clamped target magnitudes
    clamped: int = 0            # how many raw magnitudes were negative

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        eta = np.asarray(self.per_sample_eta, dtype=np.float64)
        if w.shape != v.shape or w.ndim != 1:
            raise ValueError("w and v must be 1-D vectors of equal length")
        if abs(np.linalg.norm(v) - 1.0) > 1e-12:
            raise ValueError("v must be a unit vector")
        if self.eta_bound < 0.0:
            raise ValueError("eta_bound must be nonnegative")
        if eta.ndim != 1 or (eta.size and eta.min() < 0.0):
            raise ValueError("per-sample eta values must be nonnegative")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "per_sample_eta", eta)

    @property
    def d(self) -> int:
        return self.w.size


def _pair_diffs(enc: Encoder, pairs) -> np.ndarray:
    if len(pairs) < 1:
        raise ValueError("need at least one (mp, mu) pair")
    return np.stack([
        encode(enc, mu).components - encode(enc, mp).components
        for mp, mu in pairs
    ])


def estimate_shift(enc: Encoder, pairs) -> ShiftGeometry:
    """Empirical shift direction from paired maps.

    w is the mean feature difference; eta_bound is the largest per-sample
    deviation from that mean; per-sample eta is the (clamped) projection of
    each difference onto the unit direction. Raises DegenerateShiftError
    when the mean shift is numerically zero."""
    diffs = _pair_diffs(enc, pairs)
    w = diffs.mean(axis=0)
    norm = float(np.linalg.norm(w))
    if norm < DEGENERATE_NORM:
        raise DegenerateShiftError(
            f"mean feature shift has norm {norm:.3e}; the two domains are "
            "indistinguishable under this encoder")
    v = w / norm
    deltas = diffs - w
    eta_bound = float(np.linalg.norm(deltas, axis=1).max())
    raw = diffs @ v
    clamped = int(np.count_nonzero(raw < 0.0))
    per_sample = np.maximum(raw, 0.0)
    return ShiftGeometry(w=w, v=v, eta_bound=eta_bound,
                         per_sample_eta=per_sample, clamped=clamped)


@dataclass(frozen=True)
class IncrementReport:
    lhs: float        # ||phi(mu) - phi(mp)||
    rhs: float        # lipschitz * ||mu - mp||
    lipschitz: float
    passed: bool


def feature_increment_check(enc: Encoder, mp, mu) -> IncrementReport:
    """Deterministic feature-increment bound for one pair."""
    a = field_values(mp)
    b = field_values(mu)
    if a.shape != b.shape:
        raise ValueError("paired maps must share a shape")
    lhs = float(np.linalg.norm(
        encode(enc, b).components - encode(enc, a).components))
    rhs = enc.lipschitz * float(np.linalg.norm(b - a))
    return IncrementReport(lhs=lhs, rhs=rhs, lipschitz=enc.lipschitz,
                           passed=lhs <= rhs * (1.0 + 1e-12))


@dataclass(frozen=True)
class StabilityReport:
    max_deviation: float  # max over i<j of | ||dz_mu|| - ||dz_mp|| |
    bound: float          # 2 * eta_bound
    n_checked: int
    passed: bool


def distance_stability_check(enc: Encoder, pairs,
                             geometry: ShiftGeometry) -> StabilityReport:
    """Pairwise feature distances move by at most twice the fluctuation
    bound between the two domains."""
    if len(pairs) < 2:
        raise ValueError("need at least two pairs")
    z_mp = np.stack([encode(enc, mp).components for mp, _ in pairs])
    z_mu = np.stack([encode(enc, mu).components for _, mu in pairs])
    bound = 2.0 * geometry.eta_bound
    worst = 0.0
    n = 0
    for i in range(len(pairs)):
        for j in range(i + 1, len(pairs)):
            dmu = float(np.linalg.norm(z_mu[i] - z_mu[j]))
            dmp = float(np.linalg.norm(z_mp[i] - z_mp[j]))
            worst = max(worst, abs(dmu - dmp))
            n += 1
    return StabilityReport(max_deviation=worst, bound=bound, n_checked=n,
                           passed=worst <= bound * (1.0 + 1e-12) + 1e-15)


# ----------------------------------------------------------------------
# projection decomposition and cone membership
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class Projection:
    alpha: float
    parallel: np.ndarray
    perp: np.ndarray


def project(dz, w) -> Projection:
    """Split dz into its component along w and the orthogonal remainder."""
    dz = _vec(dz)
    w = _vec(w)
    ww = float(w @ w)
    if ww <= 0.0:
        raise ValueError("w must be nonzero")
    alpha = float(dz @ w) / ww
    parallel = alpha * w
    return Projection(alpha=alpha, parallel=parallel, perp=dz - parallel)


@dataclass(frozen=True)
class ConeResult:
    member: bool
    alpha: float
    e: np.ndarray  # orthogonal part


def cone_membership(vec, w, tol: float = 0.0) -> ConeResult:
    """Decompose vec = alpha*w + e with e orthogonal to w; membership in the
    direction-consistent cone means alpha >= -tol."""
    if tol < 0.0:
        raise ValueError("tol must be nonnegative")
    pr = project(vec, w)
    return ConeResult(member=pr.alpha >= -tol, alpha=pr.alpha, e=pr.perp)


# ----------------------------------------------------------------------
# direction-consistency losses
# ----------------------------------------------------------------------

def dcl_batch(dzs, w, beta: float) -> float:
    """Mean squared orthogonal residual plus a squared hinge on negative
    alignment: mean_i ||dz_i - (dz_i.w/||w||^2) w||^2
    + beta * mean_i max(0, -dz_i.w)^2."""
    if beta < 0.0:
        raise ValueError("beta must be nonnegative")
    vecs = [_vec(z) for z in dzs]
    if not vecs:
        raise ValueError("empty batch")
    w = _vec(w)
    ww = float(w @ w)
    if ww <= 0.0:
        raise ValueError("w must be nonzero")
    dz = np.stack(vecs)
    coef = (dz @ w) / ww
    perp = dz - coef[:, None] * w[None, :]
    perp_term = float(np.mean(np.sum(perp * perp, axis=1)))
    hinge = np.maximum(0.0, -(dz @ w))
    hinge_term = float(np.mean(hinge * hinge))
    return perp_term + beta * hinge_term


def dcl_finetune(dh, v, eta_c: float, beta: float) -> float:
    """Orthogonal distortion plus magnitude mismatch against a unit
    direction: ||dh_perp||^2 + beta * (dh.v - eta_c)^2."""
    if beta < 0.0:
        raise ValueError("beta must be nonnegative")
    if eta_c < 0.0:
        raise ValueError("eta_c must be nonnegative")
    dh = _vec(dh)
    v = _vec(v)
    if abs(float(np.linalg.norm(v)) - 1.0) > 1e-9:
        raise ValueError("v must be a unit vector")
    a = float(dh @ v)
    perp = dh - a * v
    return float(perp @ perp) + beta * (a - eta_c) ** 2


# ----------------------------------------------------------------------
# geometry file format
# ----------------------------------------------------------------------

def geometry_to_bytes(g: ShiftGeometry) -> bytes:
    head = struct.pack("<4si", GEOMETRY_MAGIC, g.d)
    return (head + g.w.astype("<f8").tobytes()
            + g.v.astype("<f8").tobytes()
            + struct.pack("<d", g.eta_bound)
            + g.per_sample_eta.astype("<f8").tobytes())


def geometry_from_bytes(buf: bytes) -> ShiftGeometry:
    head = struct.Struct("<4si")
    if len(buf) < head.size:
        raise FormatError("truncated shift-geometry header")
    magic, d = head.unpack_from(buf, 0)
    if magic != GEOMETRY_MAGIC:
        raise FormatError(f"bad shift-geometry magic {magic!r}")
    if d < 1:
        raise FormatError(f"bad feature dimension {d}")
    need = head.size + 8 * (2 * d + 1)
    if len(buf) < need or (len(buf) - need) % 8 != 0:
        raise FormatError("malformed shift-geometry payload")
    w = np.frombuffer(buf, "<f8", count=d, offset=head.size).copy()
    v = np.frombuffer(buf, "<f8", count=d, offset=head.size + 8 * d).copy()
    (eta,) = struct.unpack_from("<d", buf, head.size + 16 * d)
    n = (len(buf) - need) // 8
    per = np.frombuffer(buf, "<f8", count=n, offset=need).copy()
    clamped = int(np.count_nonzero(per == 0.0))
    return ShiftGeometry(w=w, v=v, eta_bound=eta, per_sample_eta=per,
                         clamped=clamped)


def save_geometry(g: ShiftGeometry, path) -> None:
    with open(path, "wb") as fh:
        fh.write(geometry_to_bytes(g))


def load_geometry(path) -> ShiftGeometry:
    with open(path, "rb") as fh:
        return geometry_from_bytes(fh.read())
