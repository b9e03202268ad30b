"""Brute-force path oracle: dense angular ray sweep with specular bounce
tracking, receiver-disc capture, and bisection refinement.

Discovers propagation paths by launching rays from the transmitter over a
dense fan of angles, reflecting them specularly off building faces, noting
which receivers each traced polyline passes near, and then bisecting the
launch angle until the polyline passes through the receiver exactly. Fully
independent of the image-source enumeration under test: it never mirrors
points or solves reflection equations. It shares only the scene's face
extraction and the conservative supercover blocking convention, which are
definitional for the geometry model.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from raymap import _kernels, geometry
from raymap.propagate import RHO, eps_distance

T_MAX = 1e18
OFFSET_TOL = 1e-10


@njit(cache=True)
def _trace(f_axis, f_coord, f_lo, f_hi, f_sign, w, h, px, py, dx, dy,
           kmax, verts, sig):
    """Trace one ray: specular reflections off faces, truncated at the
    domain border. Fills verts[:nlegs+1] and sig[:nlegs-1]; returns nlegs."""
    nf = f_axis.size
    verts[0, 0] = px
    verts[0, 1] = py
    nlegs = 0
    for leg in range(kmax + 1):
        t_exit = T_MAX
        if dx > 0.0:
            t_exit = min(t_exit, (w - px) / dx)
        elif dx < 0.0:
            t_exit = min(t_exit, (0.0 - px) / dx)
        if dy > 0.0:
            t_exit = min(t_exit, (h - py) / dy)
        elif dy < 0.0:
            t_exit = min(t_exit, (0.0 - py) / dy)
        if t_exit < 0.0:
            t_exit = 0.0

        best_t = t_exit
        best_f = -1
        for f in range(nf):
            c = f_coord[f]
            sg = f_sign[f]
            if f_axis[f] == 0:
                # ray must start on the outward side and approach the face
                if (px - c) * sg <= 0.0 or dx * sg >= 0.0:
                    continue
                t = (c - px) / dx
                if t >= best_t:
                    continue
                o = py + t * dy
                if f_lo[f] < o < f_hi[f]:
                    best_t = t
                    best_f = f
            else:
                if (py - c) * sg <= 0.0 or dy * sg >= 0.0:
                    continue
                t = (c - py) / dy
                if t >= best_t:
                    continue
                o = px + t * dx
                if f_lo[f] < o < f_hi[f]:
                    best_t = t
                    best_f = f

        if best_f < 0:
            verts[leg + 1, 0] = px + best_t * dx
            verts[leg + 1, 1] = py + best_t * dy
            nlegs = leg + 1
            return nlegs

        # land exactly on the face line for robustness
        if f_axis[best_f] == 0:
            ex = f_coord[best_f]
            ey = py + best_t * dy
        else:
            ex = px + best_t * dx
            ey = f_coord[best_f]
        verts[leg + 1, 0] = ex
        verts[leg + 1, 1] = ey
        nlegs = leg + 1
        if leg == kmax:
            return nlegs
        sig[leg] = best_f
        if f_axis[best_f] == 0:
            dx = -dx
        else:
            dy = -dy
        px = ex
        py = ey
    return nlegs


@njit(cache=True)
def _trace_all(f_axis, f_coord, f_lo, f_hi, f_sign, w, h, txx, txy, angles,
               kmax):
    """Trace every sweep angle; flatten legs into parallel arrays.

    Each leg also carries an integer code identifying its bounce-signature
    prefix: code 1 at launch, then code -> code * (nf + 1) + (face + 1) per
    bounce. Codes are unique per (stage, face sequence)."""
    n = angles.size
    nf = f_axis.size
    cap = n * (kmax + 1)
    leg_sx = np.empty(cap)
    leg_sy = np.empty(cap)
    leg_ex = np.empty(cap)
    leg_ey = np.empty(cap)
    leg_cum = np.empty(cap)
    leg_code = np.empty(cap, np.int64)
    leg_ray = np.empty(cap, np.int64)
    leg_stage = np.empty(cap, np.int64)
    sigs = np.full((n, max(kmax, 1)), -1, np.int64)
    verts = np.empty((kmax + 2, 2))
    sig = np.empty(max(kmax, 1), np.int64)
    count = 0
    for i in range(n):
        for j in range(max(kmax, 1)):
            sig[j] = -1
        dx = np.cos(angles[i])
        dy = np.sin(angles[i])
        nlegs = _trace(f_axis, f_coord, f_lo, f_hi, f_sign, w, h,
                       txx, txy, dx, dy, kmax, verts, sig)
        cum = 0.0
        code = np.int64(1)
        for j in range(nlegs):
            leg_sx[count] = verts[j, 0]
            leg_sy[count] = verts[j, 1]
            leg_ex[count] = verts[j + 1, 0]
            leg_ey[count] = verts[j + 1, 1]
            leg_cum[count] = cum
            leg_code[count] = code
            leg_ray[count] = i
            leg_stage[count] = j
            cum += np.hypot(verts[j + 1, 0] - verts[j, 0],
                            verts[j + 1, 1] - verts[j, 1])
            if j < nlegs - 1:
                code = code * (nf + 1) + (sig[j] + 1)
            count += 1
        for j in range(max(kmax, 1)):
            sigs[i, j] = sig[j]
    return (leg_sx[:count], leg_sy[:count], leg_ex[:count], leg_ey[:count],
            leg_cum[:count], leg_code[:count], leg_ray[:count],
            leg_stage[:count], sigs)


@njit(cache=True)
def _offset(f_axis, f_coord, f_lo, f_hi, f_sign, w, h, txx, txy, theta,
            kmax, sigma, stage, rxx, rxy, verts, sig):
    """Signed perpendicular offset of the receiver from the stage-th leg of
    the ray at angle theta, or NaN when the signature stops matching."""
    for j in range(max(kmax, 1)):
        sig[j] = -1
    nlegs = _trace(f_axis, f_coord, f_lo, f_hi, f_sign, w, h, txx, txy,
                   np.cos(theta), np.sin(theta), kmax, verts, sig)
    if nlegs < stage + 1:
        return np.nan
    for j in range(stage):
        if sig[j] != sigma[j]:
            return np.nan
    sx = verts[stage, 0]
    sy = verts[stage, 1]
    dx = verts[stage + 1, 0] - sx
    dy = verts[stage + 1, 1] - sy
    ln = np.hypot(dx, dy)
    if ln <= 0.0:
        return np.nan
    dx /= ln
    dy /= ln
    return dx * (rxy - sy) - dy * (rxx - sx)


@njit(cache=True)
def _refine_all(f_axis, f_coord, f_lo, f_hi, f_sign, w, h, txx, txy, kmax,
                cand_a, cand_b, cand_sig, cand_stage, cand_rx, cand_ry):
    """Bisect each same-signature bracket down to a tiny leg offset.

    Returns refined angles; NaN marks brackets that failed (signature broke
    inside and probing could not restore a valid sign change)."""
    nc = cand_a.size
    out = np.full(nc, np.nan)
    verts = np.empty((kmax + 2, 2))
    sig = np.empty(max(kmax, 1), np.int64)
    probes = np.array([0.25, 0.75, 0.375, 0.625, 0.125, 0.875])
    for c in range(nc):
        a = cand_a[c]
        b = cand_b[c]
        sigma = cand_sig[c]
        stage = cand_stage[c]
        rxx = cand_rx[c]
        rxy = cand_ry[c]
        ga = _offset(f_axis, f_coord, f_lo, f_hi, f_sign, w, h, txx, txy,
                     a, kmax, sigma, stage, rxx, rxy, verts, sig)
        gb = _offset(f_axis, f_coord, f_lo, f_hi, f_sign, w, h, txx, txy,
                     b, kmax, sigma, stage, rxx, rxy, verts, sig)
        if np.isnan(ga) or np.isnan(gb):
            continue
        if abs(ga) <= OFFSET_TOL:
            out[c] = a
            continue
        if abs(gb) <= OFFSET_TOL:
            out[c] = b
            continue
        if ga * gb > 0.0:
            continue
        for _ in range(80):
            mid = 0.5 * (a + b)
            gm = _offset(f_axis, f_coord, f_lo, f_hi, f_sign, w, h, txx,
                         txy, mid, kmax, sigma, stage, rxx, rxy, verts, sig)
            if np.isnan(gm):
                ok = False
                for p in probes:
                    t = a + p * (b - a)
                    gt = _offset(f_axis, f_coord, f_lo, f_hi, f_sign, w, h,
                                 txx, txy, t, kmax, sigma, stage, rxx, rxy,
                                 verts, sig)
                    if np.isnan(gt):
                        continue
                    if gt * ga > 0.0:
                        a = t
                        ga = gt
                    else:
                        b = t
                        gb = gt
                    ok = True
                    break
                if not ok:
                    break
                continue
            if abs(gm) <= OFFSET_TOL:
                out[c] = mid
                break
            if gm * ga > 0.0:
                a = mid
                ga = gm
            else:
                b = mid
                gb = gm
    return out


class _Tracer:
    """Per-scene geometry bundle with Python-side trace helpers."""

    def __init__(self, scene, kmax):
        self.scene = scene
        self.kmax = kmax
        faces = geometry.extract_faces(scene.grid)
        self.faces = faces
        self.f_axis = np.array([f.axis for f in faces], dtype=np.int64)
        self.f_coord = np.array([f.coord for f in faces], dtype=np.float64)
        self.f_lo = np.array([f.lo for f in faces], dtype=np.float64)
        self.f_hi = np.array([f.hi for f in faces], dtype=np.float64)
        self.f_sign = np.array([float(f.sign) for f in faces],
                               dtype=np.float64)
        g = scene.grid
        self.w = float(g.width)
        self.h = float(g.height)
        self._verts = np.empty((kmax + 2, 2))
        self._sig = np.empty(max(kmax, 1), np.int64)

    def trace(self, theta):
        self._sig[:] = -1
        nlegs = _trace(self.f_axis, self.f_coord, self.f_lo, self.f_hi,
                       self.f_sign, self.w, self.h,
                       self.scene.tx.x, self.scene.tx.y,
                       float(np.cos(theta)), float(np.sin(theta)),
                       self.kmax, self._verts, self._sig)
        return self._verts[:nlegs + 1].copy(), self._sig.copy()

    def leg_offset(self, theta, sigma, rx):
        sig_arr = np.full(max(self.kmax, 1), -1, np.int64)
        if sigma:
            sig_arr[:len(sigma)] = sigma
        g = _offset(self.f_axis, self.f_coord, self.f_lo, self.f_hi,
                    self.f_sign, self.w, self.h, self.scene.tx.x,
                    self.scene.tx.y, float(theta), self.kmax, sig_arr,
                    len(sigma), float(rx[0]), float(rx[1]),
                    self._verts, self._sig)
        return None if np.isnan(g) else float(g)

    def finalize(self, theta, sigma, rx):
        """Validate the refined path and return (bounces, length_cells),
        or None. Applies the same off-face endpoint nudging as the solver
        before the conservative occupancy walk."""
        stage = len(sigma)
        verts, sig = self.trace(theta)
        if verts.shape[0] < stage + 2:
            return None
        for j, f in enumerate(sigma):
            if sig[j] != f:
                return None
        s = verts[stage]
        e = verts[stage + 1]
        d = e - s
        leg_len = float(np.hypot(d[0], d[1]))
        if leg_len <= 0.0:
            return None
        d = d / leg_len
        rel = np.asarray(rx, dtype=np.float64) - s
        along = float(d @ rel)
        g = float(d[0] * rel[1] - d[1] * rel[0])
        if abs(g) > 1e-8:
            return None
        if not (0.0 < along < leg_len):
            return None
        occ = self.scene.grid.cells
        pts = [tuple(verts[j]) for j in range(stage + 1)]
        pts.append((float(rx[0]), float(rx[1])))
        for j in range(stage + 1):
            ax_, ay_ = pts[j]
            bx_, by_ = pts[j + 1]
            if j > 0:
                f = self.faces[sigma[j - 1]]
                if f.axis == 0:
                    ax_ += _kernels.NUDGE * f.sign
                else:
                    ay_ += _kernels.NUDGE * f.sign
            if j < stage:
                f = self.faces[sigma[j]]
                if f.axis == 0:
                    bx_ += _kernels.NUDGE * f.sign
                else:
                    by_ += _kernels.NUDGE * f.sign
            if _kernels.supercover_blocked(occ, ax_, ay_, bx_, by_):
                return None
        cum = 0.0
        for j in range(stage):
            cum += float(np.hypot(verts[j + 1][0] - verts[j][0],
                                  verts[j + 1][1] - verts[j][1]))
        return stage, cum + along


def _decode(code, nf):
    """Invert the signature prefix code from _trace_all."""
    digits = []
    while code > 1:
        digits.append(int(code % (nf + 1)) - 1)
        code //= nf + 1
    return tuple(reversed(digits))


def sweep_paths(scene, receivers, k, n_rays=16384, capture_radius=1.0):
    """Oracle path lists for many receivers.

    receivers: (m, 2) array of points in cell units.
    Returns a list of per-receiver lists of (bounces, length_meters).
    """
    tracer = _Tracer(scene, k)
    g = scene.grid
    nf = tracer.f_axis.size
    angles = (np.arange(n_rays, dtype=np.float64) + 0.5) * \
        (2.0 * np.pi / n_rays)
    (leg_sx, leg_sy, leg_ex, leg_ey, leg_cum, leg_code, leg_ray, leg_stage,
     sigs) = _trace_all(tracer.f_axis, tracer.f_coord, tracer.f_lo,
                        tracer.f_hi, tracer.f_sign, tracer.w, tracer.h,
                        scene.tx.x, scene.tx.y, angles, k)

    dxa = leg_ex - leg_sx
    dya = leg_ey - leg_sy
    ln = np.hypot(dxa, dya)
    ok = ln > 0.0
    safe = np.where(ok, ln, 1.0)
    dxa = np.where(ok, dxa / safe, 0.0)
    dya = np.where(ok, dya / safe, 0.0)

    receivers = np.asarray(receivers, dtype=np.float64)
    m = receivers.shape[0]

    hit_rx = []
    hit_leg = []
    hit_perp = []
    chunk = 4096
    for lo in range(0, leg_sx.size, chunk):
        hi = min(lo + chunk, leg_sx.size)
        relx = receivers[:, 0][None, :] - leg_sx[lo:hi][:, None]
        rely = receivers[:, 1][None, :] - leg_sy[lo:hi][:, None]
        along = relx * dxa[lo:hi][:, None] + rely * dya[lo:hi][:, None]
        perp = dxa[lo:hi][:, None] * rely - dya[lo:hi][:, None] * relx
        mask = (np.abs(perp) <= capture_radius) & ok[lo:hi][:, None] & \
               (along >= -0.5) & (along <= ln[lo:hi][:, None] + 0.5)
        li, ri = np.nonzero(mask)
        hit_rx.append(ri.astype(np.int64))
        hit_leg.append(li + lo)
        hit_perp.append(perp[li, ri])
    hit_rx = np.concatenate(hit_rx) if hit_rx else np.empty(0, np.int64)
    hit_leg = np.concatenate(hit_leg) if hit_leg else np.empty(0, np.int64)
    hit_perp = np.concatenate(hit_perp) if hit_perp else np.empty(0)

    hit_code = leg_code[hit_leg]
    hit_ray = leg_ray[hit_leg]
    order = np.lexsort((hit_ray, hit_code, hit_rx))
    hit_rx = hit_rx[order]
    hit_code = hit_code[order]
    hit_ray = hit_ray[order]
    hit_perp = hit_perp[order]

    # group boundaries: one group per (receiver, signature prefix)
    if hit_rx.size:
        change = (np.diff(hit_rx) != 0) | (np.diff(hit_code) != 0)
        starts = np.concatenate([[0], np.nonzero(change)[0] + 1])
        ends = np.concatenate([starts[1:], [hit_rx.size]])
    else:
        starts = ends = np.empty(0, np.int64)

    kpad = max(k, 1)
    cand_a, cand_b, cand_sig, cand_stage = [], [], [], []
    cand_rx, cand_ry, cand_group = [], [], []
    edge_scan = []  # (group, ray, side) follow-ups near window edges
    spacing = 2.0 * np.pi / n_rays
    group_sigma = []
    group_rx = []
    for gi in range(starts.size):
        s0 = int(starts[gi])
        s1 = int(ends[gi])
        ri = int(hit_rx[s0])
        sigma = _decode(int(hit_code[s0]), nf)
        group_sigma.append(sigma)
        group_rx.append(ri)
        rays = hit_ray[s0:s1]
        perps = hit_perp[s0:s1]
        got = False
        for i in range(rays.size - 1):
            if rays[i + 1] - rays[i] != 1:
                continue
            if perps[i] == 0.0 or perps[i + 1] == 0.0 or \
                    perps[i] * perps[i + 1] < 0.0:
                sig_arr = np.full(kpad, -1, np.int64)
                if sigma:
                    sig_arr[:len(sigma)] = sigma
                cand_a.append(angles[rays[i]])
                cand_b.append(angles[rays[i + 1]])
                cand_sig.append(sig_arr)
                cand_stage.append(len(sigma))
                cand_rx.append(receivers[ri, 0])
                cand_ry.append(receivers[ri, 1])
                cand_group.append(gi)
                got = True
        if got:
            continue
        # no bracket: a crossing can still hide within one spacing of the
        # window edge; flag edge rays that pass close to the receiver
        for i in range(rays.size):
            if abs(perps[i]) > 0.08:
                continue
            if i == 0 or rays[i] - rays[i - 1] != 1:
                edge_scan.append((gi, int(rays[i]), -1))
            if i == rays.size - 1 or rays[i + 1] - rays[i] != 1:
                edge_scan.append((gi, int(rays[i]), +1))

    found: list[dict[tuple[int, ...], tuple[int, float]]] = \
        [dict() for _ in range(m)]
    cs = g.cell_size

    def record(gi, theta):
        ri = group_rx[gi]
        sigma = group_sigma[gi]
        if sigma in found[ri]:
            return
        res = tracer.finalize(theta, sigma, receivers[ri])
        if res is None:
            return
        nb, length_cells = res
        found[ri][sigma] = (nb, length_cells * cs)

    if cand_a:
        thetas = _refine_all(
            tracer.f_axis, tracer.f_coord, tracer.f_lo, tracer.f_hi,
            tracer.f_sign, tracer.w, tracer.h, scene.tx.x, scene.tx.y, k,
            np.array(cand_a), np.array(cand_b), np.array(cand_sig),
            np.array(cand_stage, np.int64), np.array(cand_rx),
            np.array(cand_ry))
        for c in range(thetas.size):
            if np.isfinite(thetas[c]):
                record(cand_group[c], thetas[c])

    for gi, ray, side in edge_scan:
        ri = group_rx[gi]
        sigma = group_sigma[gi]
        if sigma in found[ri]:
            continue
        rx = receivers[ri]
        t0 = angles[ray]
        t1 = angles[ray] + side * 1.5 * spacing
        samples = np.linspace(t0, t1, 97)
        vals = [(t, tracer.leg_offset(t, sigma, rx)) for t in samples]
        vals = [(t, v) for t, v in vals if v is not None]
        for (ta, va), (tb, vb) in zip(vals, vals[1:]):
            if va == 0.0:
                record(gi, ta)
                break
            if va * vb < 0.0:
                sig_arr = np.full(kpad, -1, np.int64)
                if sigma:
                    sig_arr[:len(sigma)] = sigma
                th = _refine_all(
                    tracer.f_axis, tracer.f_coord, tracer.f_lo, tracer.f_hi,
                    tracer.f_sign, tracer.w, tracer.h, scene.tx.x,
                    scene.tx.y, k, np.array([ta]), np.array([tb]),
                    sig_arr[None, :], np.array([len(sigma)], np.int64),
                    np.array([rx[0]]), np.array([rx[1]]))
                if np.isfinite(th[0]):
                    record(gi, th[0])
                break

    return [sorted(found[ri].values()) for ri in range(m)]


def oracle_mu(scene, k, n_rays=16384):
    """Oracle multipath map over free cell centers; occupied cells get 0."""
    g = scene.grid
    occ = g.cells.astype(bool)
    ys, xs = np.nonzero(~occ)
    pts = np.stack([xs + 0.5, ys + 0.5], axis=1)
    per_rx = sweep_paths(scene, pts, k, n_rays=n_rays)
    eps = eps_distance(g.cell_size)
    out = np.zeros((g.height, g.width))
    for (iy, ix), paths in zip(zip(ys, xs), per_rx):
        total = 0.0
        for nb, length_m in paths:
            lm = max(length_m, eps)
            total += scene.tx.power * RHO ** nb / (lm * lm)
        out[iy, ix] = total
    return out
