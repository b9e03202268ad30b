"""Reflecting faces and image-source candidate catalogs.

Faces are the maximal axis-aligned boundary segments between occupied and
free cells, each with an outward normal into free space. A candidate is an
ordered face sequence of length <= k; the empty sequence is the direct path.
Catalogs are deterministic for a scene and ordered by (length, face indices),
so the catalog for order k is a prefix of the catalog for order k + 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envgrid import Scene


@dataclass(frozen=True)
class Face:
    axis: int    # 0: face on vertical line x = coord; 1: horizontal y = coord
    coord: float
    lo: float    # span along the other axis
    hi: float
    sign: int    # outward normal direction (+1 / -1) along `axis`

    def endpoints(self) -> tuple[tuple[float, float], tuple[float, float]]:
        if self.axis == 0:
            return (self.coord, self.lo), (self.coord, self.hi)
        return (self.lo, self.coord), (self.hi, self.coord)


def _runs(mask: np.ndarray):
    """Maximal runs of True values: yields (start, stop) with stop exclusive."""
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return
    breaks = np.flatnonzero(np.diff(idx) > 1)
    start = 0
    for b in breaks:
        yield int(idx[start]), int(idx[b]) + 1
        start = b + 1
    yield int(idx[start]), int(idx[-1]) + 1


def extract_faces(grid) -> list[Face]:
    """Maximal occupied/free boundary segments of the occupancy grid."""
    occ = grid.cells.astype(bool)
    h, w = occ.shape
    faces: list[Face] = []
    # vertical lines x = i
    for i in range(w + 1):
        left = occ[:, i - 1] if i > 0 else np.zeros(h, dtype=bool)
        right = occ[:, i] if i < w else np.zeros(h, dtype=bool)
        for sign, mask in ((1, left & ~right), (-1, right & ~left)):
            for j0, j1 in _runs(mask):
                faces.append(Face(axis=0, coord=float(i),
                                  lo=float(j0), hi=float(j1), sign=sign))
    # horizontal lines y = j
    for j in range(h + 1):
        below = occ[j - 1, :] if j > 0 else np.zeros(w, dtype=bool)
        above = occ[j, :] if j < h else np.zeros(w, dtype=bool)
        for sign, mask in ((1, below & ~above), (-1, above & ~below)):
            for i0, i1 in _runs(mask):
                faces.append(Face(axis=1, coord=float(j),
                                  lo=float(i0), hi=float(i1), sign=sign))
    return faces


def mirror_point(p: tuple[float, float], face: Face) -> tuple[float, float]:
    if face.axis == 0:
        return (2.0 * face.coord - p[0], p[1])
    return (p[0], 2.0 * face.coord - p[1])


def _side(p: tuple[float, float], face: Face) -> float:
    """Signed outward distance of p from the face line (> 0 means outward)."""
    return (p[face.axis] - face.coord) * face.sign


def _pair_feasible(f: Face, g: Face, faces_side_max) -> bool:
    """Can some reflection point on f feed a reflection on g?

    Requires a point of f strictly outward of g (incoming side) and a point
    of g strictly outward of f (outgoing side); side values are linear along
    a face, so endpoint maxima decide.
    """
    return faces_side_max[(f, g)] > 0.0 and faces_side_max[(g, f)] > 0.0


def build_catalog(faces: list[Face], tx: tuple[float, float],
                  k: int) -> list[tuple[int, ...]]:
    """Ordered candidate sequences of order <= k for one scene.

    Pruned to sequences that could be valid for some receiver: the first face
    must see the transmitter from its outward side, and consecutive faces
    must be mutually reachable. Order: lengths ascending, face indices
    lexicographic within a length.
    """
    if k < 0:
        raise ValueError("interaction order must be nonnegative")
    catalog: list[tuple[int, ...]] = [()]
    if k == 0 or not faces:
        return catalog

    side_max: dict[tuple[Face, Face], float] = {}
    for f in faces:
        for g in faces:
            if f is g:
                continue
            e1, e2 = f.endpoints()
            side_max[(f, g)] = max(_side(e1, g), _side(e2, g))

    first = [i for i, f in enumerate(faces) if _side(tx, f) > 0.0]
    level = [(i,) for i in first]
    catalog.extend(level)
    for _ in range(k - 1):
        nxt: list[tuple[int, ...]] = []
        for seq in level:
            last = faces[seq[-1]]
            for j, g in enumerate(faces):
                if j == seq[-1]:
                    continue
                if _pair_feasible(last, g, side_max):
                    nxt.append(seq + (j,))
        level = nxt
        catalog.extend(level)
    return catalog


def catalog_arrays(catalog: list[tuple[int, ...]], faces: list[Face],
                   tx: tuple[float, float]):
    """Pack faces, sequences, and precomputed transmitter images into the
    array layout the compiled kernels consume."""
    f_axis = np.array([f.axis for f in faces], dtype=np.int64)
    f_coord = np.array([f.coord for f in faces], dtype=np.float64)
    f_lo = np.array([f.lo for f in faces], dtype=np.float64)
    f_hi = np.array([f.hi for f in faces], dtype=np.float64)
    f_sign = np.array([float(f.sign) for f in faces], dtype=np.float64)

    ns = len(catalog)
    kmax = max((len(s) for s in catalog), default=0)
    width = max(kmax, 1)
    seqs = np.full((ns, width), -1, dtype=np.int64)
    seq_len = np.zeros(ns, dtype=np.int64)
    imgs = np.zeros((ns, width + 1, 2), dtype=np.float64)
    for si, seq in enumerate(catalog):
        seq_len[si] = len(seq)
        imgs[si, 0, 0] = tx[0]
        imgs[si, 0, 1] = tx[1]
        p = (tx[0], tx[1])
        for j, fi in enumerate(seq):
            seqs[si, j] = fi
            p = mirror_point(p, faces[fi])
            imgs[si, j + 1, 0] = p[0]
            imgs[si, j + 1, 1] = p[1]
    return f_axis, f_coord, f_lo, f_hi, f_sign, seqs, seq_len, imgs


def scene_candidates(scene: Scene, k: int):
    """Faces, catalog, and kernel arrays for a scene at interaction order k."""
    faces = extract_faces(scene.grid)
    tx = (scene.tx.x, scene.tx.y)
    catalog = build_catalog(faces, tx, k)
    arrays = catalog_arrays(catalog, faces, tx)
    return faces, catalog, arrays
