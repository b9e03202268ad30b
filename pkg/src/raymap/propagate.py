"""Multipath propagation on occupancy grids via the image-source method.

Per receiver cell center, valid propagation paths are the direct segment plus
specular reflection chains over building faces, up to a configurable
interaction order. Powers follow an inverse-square law with a per-reflection
loss factor:

    power = tx.power * RHO**reflections / max(length, 0.5 * cell_size)**2

The main-path map takes the maximum path power per cell; the multipath map
takes the sum. Their difference is the nonnegative residual whose spatial
behavior the low-pass bounds describe.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels, geometry
from .envgrid import Scene, scene_from_buffer, scene_to_bytes
from .errors import FormatError
from .fields import (RadioMap, field_values, map_from_values,
                     radiomap_from_buffer, radiomap_to_bytes)

RHO = 0.3
DEFAULT_MAX_ORDER = 2

# Residual values at or below this magnitude are floating-point dust and are
# clamped to zero; the reported support uses a relative threshold on top.
RESIDUAL_DUST = 1e-12
SUPPORT_REL_THRESHOLD = 1e-12


@dataclass(frozen=True)
class Path:
    """One propagation path from transmitter to receiver."""

    vertices: tuple[tuple[float, float], ...]  # tx, reflections..., rx (cells)
    faces: tuple[int, ...]                     # reflecting face indices
    reflections: int
    length: float                              # meters

    def polyline_length(self, cell_size: float) -> float:
        v = np.asarray(self.vertices, dtype=np.float64)
        return float(np.sum(np.hypot(*(np.diff(v, axis=0).T)))) * cell_size


@dataclass(frozen=True)
class PathSet:
    rx: tuple[float, float]
    k: int
    paths: tuple[Path, ...]

    def __len__(self) -> int:
        return len(self.paths)

    def __iter__(self):
        return iter(self.paths)

    def main_path(self, tx_power: float, cell_size: float) -> Path | None:
        """Highest-power path; ties prefer fewer reflections, then shorter
        length, then lexicographic face sequence."""
        best = None
        best_key = None
        for p in self.paths:
            key = (-path_power(p, tx_power, cell_size), p.reflections,
                   p.length, p.faces)
            if best_key is None or key < best_key:
                best, best_key = p, key
        return best


def eps_distance(cell_size: float) -> float:
    """Near-field length clamp (meters)."""
    return 0.5 * cell_size


def path_power(path: Path, tx_power: float, cell_size: float,
               rho: float = RHO) -> float:
    """Received power of one path under the inverse-square / reflection-loss
    law. `path.length` is in meters."""
    lm = max(path.length, eps_distance(cell_size))
    return tx_power * rho ** path.reflections / (lm * lm)


def _check_receiver(scene: Scene, rx) -> tuple[float, float]:
    g = scene.grid
    x, y = float(rx[0]), float(rx[1])
    if not (0.0 <= x <= g.width and 0.0 <= y <= g.height):
        raise ValueError(f"receiver ({x}, {y}) outside the grid")
    ix = min(int(x), g.width - 1)
    iy = min(int(y), g.height - 1)
    if g.cells[iy, ix]:
        raise ValueError(f"receiver ({x}, {y}) lies inside an obstacle")
    return x, y


def enumerate_paths(scene: Scene, rx, k: int = DEFAULT_MAX_ORDER) -> PathSet:
    """All valid paths of interaction order <= k to a receiver point."""
    if k < 0:
        raise ValueError("interaction order must be nonnegative")
    x, y = _check_receiver(scene, rx)
    faces, catalog, arrays = geometry.scene_candidates(scene, k)
    lengths, qxs, qys = _kernels.paths_at(
        scene.grid.cells, *arrays, scene.tx.x, scene.tx.y, x, y)
    cs = scene.grid.cell_size
    paths = []
    for s, seq in enumerate(catalog):
        if lengths[s] < 0.0:
            continue
        verts = [(scene.tx.x, scene.tx.y)]
        verts.extend((qxs[s, j], qys[s, j]) for j in range(len(seq)))
        verts.append((x, y))
        paths.append(Path(vertices=tuple(verts), faces=seq,
                          reflections=len(seq),
                          length=float(lengths[s]) * cs))
    return PathSet(rx=(x, y), k=k, paths=tuple(paths))


def _solve_arrays(scene: Scene, k: int):
    _, _, arrays = geometry.scene_candidates(scene, k)
    rho_pow = np.array([RHO ** b for b in range(max(k, 1) + 1)],
                       dtype=np.float64)
    return _kernels.solve_grid(
        scene.grid.cells, *arrays, scene.tx.x, scene.tx.y, scene.tx.power,
        rho_pow, eps_distance(scene.grid.cell_size), scene.grid.cell_size)


def solve_scene(scene: Scene, k: int = DEFAULT_MAX_ORDER):
    """Main-path map, multipath map, and per-cell path counts in one pass.

    The multipath value accumulates per-path powers in catalog order (orders
    ascending), so increasing k can only add trailing nonnegative terms.
    """
    if k < 0:
        raise ValueError("interaction order must be nonnegative")
    mp, mu, cnt = _solve_arrays(scene, k)
    return map_from_values(mp), map_from_values(mu), cnt


def solve_mp(scene: Scene, k: int = DEFAULT_MAX_ORDER) -> RadioMap:
    """Main-path map: per cell, the maximum path power (0 with no path)."""
    mp, _, _ = solve_scene(scene, k)
    return mp


def solve_mu(scene: Scene, k: int = DEFAULT_MAX_ORDER) -> RadioMap:
    """Multipath map: per cell, the incoherent sum of path powers."""
    _, mu, _ = solve_scene(scene, k)
    return mu


# ----------------------------------------------------------------------
# residual decomposition
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class ResidualResult:
    map: RadioMap
    support_fraction: float
    max_value: float


def residual(mu: RadioMap, mp: RadioMap) -> ResidualResult:
    """Multipath residual mu - mp, clamped to zero only for magnitudes at the
    floating-point dust level. Reports the support fraction (cells above
    SUPPORT_REL_THRESHOLD * max) and the maximum residual value."""
    if (mu.width, mu.height) != (mp.width, mp.height):
        raise ValueError("map shapes differ")
    d = mu.values - mp.values
    d = np.where(np.abs(d) < RESIDUAL_DUST, 0.0, d)
    rmax = float(d.max(initial=0.0))
    support = int(np.count_nonzero(d > SUPPORT_REL_THRESHOLD * rmax)) \
        if rmax > 0.0 else 0
    frac = support / d.size
    return ResidualResult(map=map_from_values(d), support_fraction=frac,
                          max_value=rmax)


# ----------------------------------------------------------------------
# visibility states
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class VisibilityState:
    """Which candidate sequences are valid at one receiver (one bit per
    catalog entry; the direct path is bit 0)."""

    bits: np.ndarray  # uint8, length = len(catalog)
    catalog: tuple[tuple[int, ...], ...]


def visibility_state(scene: Scene, rx, k: int = DEFAULT_MAX_ORDER) -> VisibilityState:
    if k < 0:
        raise ValueError("interaction order must be nonnegative")
    x, y = _check_receiver(scene, rx)
    faces, catalog, arrays = geometry.scene_candidates(scene, k)
    lengths, _, _ = _kernels.paths_at(
        scene.grid.cells, *arrays, scene.tx.x, scene.tx.y, x, y)
    bits = (lengths >= 0.0).astype(np.uint8)
    return VisibilityState(bits=bits, catalog=tuple(catalog))


def state_grid(scene: Scene, k: int = DEFAULT_MAX_ORDER):
    """Per-cell candidate validity over the whole grid.

    Returns (valid, catalog) where valid is a boolean (H, W, n_candidates)
    array; occupied cells have all-False rows.
    """
    _, catalog, arrays = geometry.scene_candidates(scene, k)
    lengths = _kernels.lengths_grid(
        scene.grid.cells, *arrays, scene.tx.x, scene.tx.y)
    return lengths >= 0.0, tuple(catalog)


def visibility_partition(scene: Scene, k: int = DEFAULT_MAX_ORDER):
    """Label grid of 4-connected regions with identical visibility state.

    Occupied cells get label -1. Returns (labels, valid, catalog).
    """
    valid, catalog = state_grid(scene, k)
    occ = scene.grid.cells.astype(bool)
    h, w = occ.shape
    labels = np.full((h, w), -1, dtype=np.int64)
    next_label = 0
    for sy in range(h):
        for sx in range(w):
            if occ[sy, sx] or labels[sy, sx] != -1:
                continue
            stack = [(sy, sx)]
            labels[sy, sx] = next_label
            ref = valid[sy, sx]
            while stack:
                cy, cx = stack.pop()
                for ny, nx in ((cy - 1, cx), (cy + 1, cx),
                               (cy, cx - 1), (cy, cx + 1)):
                    if not (0 <= ny < h and 0 <= nx < w):
                        continue
                    if occ[ny, nx] or labels[ny, nx] != -1:
                        continue
                    if np.array_equal(valid[ny, nx], ref):
                        labels[ny, nx] = next_label
                        stack.append((ny, nx))
            next_label += 1
    return labels, valid, catalog


def closed_form_sum(scene: Scene, rx, active, catalog) -> float:
    """Sum of closed-form per-path powers for a fixed set of active
    candidates, evaluated at an arbitrary receiver point (no visibility
    checks). Within a constant-visibility region this equals the multipath
    map exactly."""
    faces = geometry.extract_faces(scene.grid)
    tx = (scene.tx.x, scene.tx.y)
    cs = scene.grid.cell_size
    eps = eps_distance(cs)
    total = 0.0
    for s in np.flatnonzero(np.asarray(active)):
        seq = catalog[s]
        img = tx
        for fi in seq:
            img = geometry.mirror_point(img, faces[fi])
        ell = float(np.hypot(img[0] - rx[0], img[1] - rx[1]))
        lm = ell * cs
        if lm < eps:
            lm = eps
        total += scene.tx.power * RHO ** len(seq) / (lm * lm)
    return total


# ----------------------------------------------------------------------
# low-pass smoothing and bounds
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class LowPassKernel:
    sigma: float
    radius: int
    weights1d: np.ndarray           # (2r+1,) normalized
    weights: np.ndarray             # (2r+1, 2r+1) outer product, sums to 1


def gaussian_kernel(sigma: float) -> LowPassKernel:
    """Truncated normalized Gaussian, radius ceil(3 sigma)."""
    if not (sigma > 0.0):
        raise ValueError("sigma must be positive")
    r = int(np.ceil(3.0 * sigma))
    x = np.arange(-r, r + 1, dtype=np.float64)
    w = np.exp(-(x * x) / (2.0 * sigma * sigma))
    w /= w.sum()
    return LowPassKernel(sigma=sigma, radius=r, weights1d=w,
                         weights=np.outer(w, w))


def lowpass(field, sigma_or_kernel) -> RadioMap:
    """Separable Gaussian smoothing with reflective (edge-inclusive) boundary
    handling. The kernel is even and unit-mass, which makes the operator
    norm-contractive on the reflected extension."""
    if isinstance(sigma_or_kernel, LowPassKernel):
        kern = sigma_or_kernel
    else:
        kern = gaussian_kernel(float(sigma_or_kernel))
    v = field_values(field)
    h, w = v.shape
    r = kern.radius
    if r >= min(h, w):
        raise ValueError(
            f"kernel radius {r} too large for a {h}x{w} field")
    k1 = kern.weights1d
    padded = np.pad(v, r, mode="symmetric")
    rows = np.zeros((h + 2 * r, w))
    for i in range(2 * r + 1):
        rows += k1[i] * padded[:, i:i + w]
    out = np.zeros((h, w))
    for i in range(2 * r + 1):
        out += k1[i] * rows[i:i + h, :]
    return map_from_values(out)


@dataclass(frozen=True)
class BoundReport:
    l2_lhs: float
    l2_rhs: float
    linf_lhs: float
    linf_rhs: float
    support_cells: int
    passed: bool


def verify_lowfreq_bound(residual_map, kernel: LowPassKernel) -> BoundReport:
    """Check both smoothing bounds on a residual field.

    2-norm: the smoothed field's energy never exceeds the residual's
    (physical area elements cancel on both sides). Infinity norm: the
    smoothed peak is at most (max kernel weight / cell area) * max residual *
    support area; in discrete form the cell areas cancel, with the support
    counted over strictly positive cells so the inequality is exact up to
    rounding. Pass/fail uses a 1e-12 relative float tolerance.
    """
    v = field_values(residual_map)
    smooth = lowpass(v, kernel).values
    l2_lhs = float(np.linalg.norm(smooth))
    l2_rhs = float(np.linalg.norm(v))
    linf_lhs = float(np.abs(smooth).max(initial=0.0))
    support = int(np.count_nonzero(v > 0.0))
    vmax = float(v.max(initial=0.0))
    wmax = float(kernel.weights.max())
    linf_rhs = wmax * vmax * support
    tol = 1e-12
    passed = (l2_lhs <= l2_rhs * (1.0 + tol)) and \
             (linf_lhs <= linf_rhs * (1.0 + tol))
    return BoundReport(l2_lhs=l2_lhs, l2_rhs=l2_rhs, linf_lhs=linf_lhs,
                       linf_rhs=linf_rhs, support_cells=support,
                       passed=passed)


# ----------------------------------------------------------------------
# paired-sample files
# ----------------------------------------------------------------------

def pair_to_bytes(mp: RadioMap, mu: RadioMap, scene: Scene) -> bytes:
    return radiomap_to_bytes(mp) + radiomap_to_bytes(mu) + scene_to_bytes(scene)


def pair_from_bytes(buf: bytes, tag: str = ""):
    mp, off = radiomap_from_buffer(buf, 0)
    mu, off = radiomap_from_buffer(buf, off)
    scene, off = scene_from_buffer(buf, off, tag=tag)
    if off != len(buf):
        raise FormatError("trailing bytes after paired sample")
    return mp, mu, scene


def save_pair(mp: RadioMap, mu: RadioMap, scene: Scene, path) -> None:
    with open(path, "wb") as fh:
        fh.write(pair_to_bytes(mp, mu, scene))


def load_pair(path):
    from pathlib import Path as _P

    with open(path, "rb") as fh:
        buf = fh.read()
    return pair_from_bytes(buf, tag=_P(path).stem)
