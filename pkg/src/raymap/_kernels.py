"""Compiled inner loops for grid visibility and image-source path solving.

Everything here is numba-compiled and operates on plain arrays so the
per-cell / per-candidate loops run at native speed. The public modules wrap
these with validated, typed interfaces.

Geometry conventions (shared across the package):
  - continuous coordinates are in cell units; cell (ix, iy) spans
    [ix, ix+1) x [iy, iy+1) and has center (ix + 0.5, iy + 0.5)
  - occupancy arrays are indexed [iy, ix] (row-major)
  - reflecting faces are axis-aligned segments on integer grid lines with an
    outward unit normal pointing into free space
"""

from __future__ import annotations

import numpy as np
from numba import njit

# Offset used to pull a reflection point off its face before a visibility
# walk, so the walk never starts inside the wall the point sits on.
NUDGE = 1e-9

# Two gridline crossings closer than this (in segment-parameter units) are
# treated as one lattice-corner crossing, conservatively touching all four
# adjacent cells.
CORNER_T_EPS = 1e-12


@njit(cache=True)
def supercover_blocked(occ, ax, ay, bx, by):
    """True if an occupied cell strictly between the endpoints' cells touches
    the segment (ax, ay) -> (bx, by).

    Conservative supercover: a segment passing exactly through a lattice
    corner touches all four surrounding cells. The endpoints' own cells are
    never tested. Endpoints are canonicalized so the result is symmetric.
    """
    if (bx < ax) or (bx == ax and by < ay):
        tx_ = ax; ax = bx; bx = tx_
        ty_ = ay; ay = by; by = ty_
    h, w = occ.shape
    dx = bx - ax
    dy = by - ay
    ix = int(np.floor(ax)); iy = int(np.floor(ay))
    jx = int(np.floor(bx)); jy = int(np.floor(by))
    if ix >= w: ix = w - 1
    if iy >= h: iy = h - 1
    if jx >= w: jx = w - 1
    if jy >= h: jy = h - 1
    if ix < 0: ix = 0
    if iy < 0: iy = 0
    if jx < 0: jx = 0
    if jy < 0: jy = 0

    sx = 0; sy = 0
    tmx = np.inf; tmy = np.inf
    tdx = np.inf; tdy = np.inf
    if dx > 0.0:
        sx = 1
        tmx = (np.floor(ax) + 1.0 - ax) / dx
        tdx = 1.0 / dx
    elif dx < 0.0:
        sx = -1
        tmx = (ax - np.floor(ax)) / (-dx)
        tdx = 1.0 / (-dx)
    if dy > 0.0:
        sy = 1
        tmy = (np.floor(ay) + 1.0 - ay) / dy
        tdy = 1.0 / dy
    elif dy < 0.0:
        sy = -1
        tmy = (ay - np.floor(ay)) / (-dy)
        tdy = 1.0 / (-dy)

    max_steps = 2 * (w + h) + 8
    for _ in range(max_steps):
        if ix == jx and iy == jy:
            return False
        if tmx >= 1.0 and tmy >= 1.0:
            # no further gridline crossing before b; the rest of the segment
            # stays in the current cell
            return False
        if tmx < tmy - CORNER_T_EPS:
            ix += sx
            tmx += tdx
        elif tmy < tmx - CORNER_T_EPS:
            iy += sy
            tmy += tdy
        else:
            # corner crossing: the two side cells are touched as well
            cx = ix + sx
            cy = iy + sy
            if 0 <= cx < w and 0 <= iy < h:
                if not (cx == jx and iy == jy) and occ[iy, cx] != 0:
                    return True
            if 0 <= ix < w and 0 <= cy < h:
                if not (ix == jx and cy == jy) and occ[cy, ix] != 0:
                    return True
            ix = cx
            iy = cy
            tmx += tdx
            tmy += tdy
        if ix < 0 or ix >= w or iy < 0 or iy >= h:
            return False
        if not (ix == jx and iy == jy) and occ[iy, ix] != 0:
            return True
    return False


@njit(cache=True)
def _seq_path(occ, f_axis, f_coord, f_lo, f_hi, f_sign, seqs, seq_len, imgs,
              s, txx, txy, rxx, rxy, qx, qy):
    """Solve candidate sequence `s` at receiver (rxx, rxy).

    Fills qx[:m], qy[:m] with reflection points ordered from the transmitter
    side. Returns the unfolded path length in cell units, or -1.0 if the
    candidate is geometrically invalid or occluded.
    """
    m = seq_len[s]

    # Back-solve reflection points from the receiver side: the j-th point is
    # where the segment from the j-fold transmitter image to the next point
    # crosses the j-th face line.
    nx = rxx
    ny = rxy
    for jj in range(m, 0, -1):
        f = seqs[s, jj - 1]
        c = f_coord[f]
        sg = f_sign[f]
        if f_axis[f] == 0:
            pn = nx; pi = imgs[s, jj, 0]
            on = ny; oi = imgs[s, jj, 1]
        else:
            pn = ny; pi = imgs[s, jj, 1]
            on = nx; oi = imgs[s, jj, 0]
        # the outgoing leg must leave on the face's outward side
        if (pn - c) * sg <= 0.0:
            return -1.0
        denom = pn - pi
        if denom == 0.0:
            return -1.0
        t = (c - pi) / denom
        if t <= 0.0 or t >= 1.0:
            return -1.0
        other = oi + t * (on - oi)
        if other <= f_lo[f] or other >= f_hi[f]:
            return -1.0
        if f_axis[f] == 0:
            qx[jj - 1] = c
            qy[jj - 1] = other
        else:
            qx[jj - 1] = other
            qy[jj - 1] = c
        nx = qx[jj - 1]
        ny = qy[jj - 1]

    # each face must be approached from its outward side
    px = txx
    py = txy
    for jj in range(m):
        f = seqs[s, jj]
        if f_axis[f] == 0:
            side_prev = (px - f_coord[f]) * f_sign[f]
        else:
            side_prev = (py - f_coord[f]) * f_sign[f]
        if side_prev <= 0.0:
            return -1.0
        px = qx[jj]
        py = qy[jj]

    # every leg must clear the occupancy grid (reflection points nudged off
    # their faces so the walk does not start inside the wall)
    px = txx
    py = txy
    for jj in range(m + 1):
        if jj > 0:
            g = seqs[s, jj - 1]
            if f_axis[g] == 0:
                sx_ = px + NUDGE * f_sign[g]; sy_ = py
            else:
                sx_ = px; sy_ = py + NUDGE * f_sign[g]
        else:
            sx_ = px; sy_ = py
        if jj < m:
            f = seqs[s, jj]
            if f_axis[f] == 0:
                ex_ = qx[jj] + NUDGE * f_sign[f]; ey_ = qy[jj]
            else:
                ex_ = qx[jj]; ey_ = qy[jj] + NUDGE * f_sign[f]
        else:
            ex_ = rxx; ey_ = rxy
        if supercover_blocked(occ, sx_, sy_, ex_, ey_):
            return -1.0
        if jj < m:
            px = qx[jj]
            py = qy[jj]

    dxm = imgs[s, m, 0] - rxx
    dym = imgs[s, m, 1] - rxy
    return np.sqrt(dxm * dxm + dym * dym)


@njit(cache=True)
def solve_grid(occ, f_axis, f_coord, f_lo, f_hi, f_sign, seqs, seq_len, imgs,
               txx, txy, power, rho_pow, eps_d, cell_size):
    """Main-path / multipath / path-count maps over every free cell.

    The multipath accumulator adds per-path powers in catalog order (orders
    ascending), so the value for a catalog prefix is a true partial sum.
    """
    h, w = occ.shape
    mp = np.zeros((h, w))
    mu = np.zeros((h, w))
    cnt = np.zeros((h, w), np.int64)
    ns = seqs.shape[0]
    kmax = seqs.shape[1]
    qx = np.empty(kmax)
    qy = np.empty(kmax)
    for iy in range(h):
        for ix in range(w):
            if occ[iy, ix] != 0:
                continue
            rxx = ix + 0.5
            rxy = iy + 0.5
            best = 0.0
            acc = 0.0
            n = 0
            for s in range(ns):
                ell = _seq_path(occ, f_axis, f_coord, f_lo, f_hi, f_sign,
                                seqs, seq_len, imgs, s, txx, txy, rxx, rxy,
                                qx, qy)
                if ell >= 0.0:
                    lm = ell * cell_size
                    if lm < eps_d:
                        lm = eps_d
                    p = power * rho_pow[seq_len[s]] / (lm * lm)
                    acc += p
                    n += 1
                    if p > best:
                        best = p
            mp[iy, ix] = best
            mu[iy, ix] = acc
            cnt[iy, ix] = n
    return mp, mu, cnt


@njit(cache=True)
def paths_at(occ, f_axis, f_coord, f_lo, f_hi, f_sign, seqs, seq_len, imgs,
             txx, txy, rxx, rxy):
    """Per-candidate unfolded lengths (cell units, -1 when invalid) and
    reflection points for a single receiver."""
    ns = seqs.shape[0]
    kmax = seqs.shape[1]
    lengths = np.full(ns, -1.0)
    qxs = np.zeros((ns, kmax))
    qys = np.zeros((ns, kmax))
    qx = np.empty(kmax)
    qy = np.empty(kmax)
    for s in range(ns):
        ell = _seq_path(occ, f_axis, f_coord, f_lo, f_hi, f_sign,
                        seqs, seq_len, imgs, s, txx, txy, rxx, rxy, qx, qy)
        if ell >= 0.0:
            lengths[s] = ell
            for j in range(seq_len[s]):
                qxs[s, j] = qx[j]
                qys[s, j] = qy[j]
    return lengths, qxs, qys


@njit(cache=True)
def lengths_grid(occ, f_axis, f_coord, f_lo, f_hi, f_sign, seqs, seq_len,
                 imgs, txx, txy):
    """Unfolded lengths (cell units) for every (cell, candidate) pair;
    -1 marks invalid candidates and occupied cells."""
    h, w = occ.shape
    ns = seqs.shape[0]
    kmax = seqs.shape[1]
    out = np.full((h, w, ns), -1.0)
    qx = np.empty(kmax)
    qy = np.empty(kmax)
    for iy in range(h):
        for ix in range(w):
            if occ[iy, ix] != 0:
                continue
            rxx = ix + 0.5
            rxy = iy + 0.5
            for s in range(ns):
                ell = _seq_path(occ, f_axis, f_coord, f_lo, f_hi, f_sign,
                                seqs, seq_len, imgs, s, txx, txy, rxx, rxy,
                                qx, qy)
                if ell >= 0.0:
                    out[iy, ix, s] = ell
    return out
