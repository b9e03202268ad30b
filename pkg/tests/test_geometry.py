"""Face extraction and reflection-candidate catalog tests."""

import numpy as np

from raymap.envgrid import OccupancyGrid, Scene, Transmitter
from raymap.geometry import (Face, build_catalog, extract_faces,
                             mirror_point, scene_candidates)


def _grid(w, h, blocks):
    cells = np.zeros((h, w), dtype=np.uint8)
    for x0, y0, x1, y1 in blocks:
        cells[y0:y1, x0:x1] = 1
    return OccupancyGrid(width=w, height=h, cell_size=1.0, cells=cells)


def test_single_cell_faces():
    g = _grid(8, 8, [(2, 3, 3, 4)])
    faces = extract_faces(g)
    got = {(f.axis, f.coord, f.lo, f.hi, f.sign) for f in faces}
    want = {
        (0, 2.0, 3.0, 4.0, -1),
        (0, 3.0, 3.0, 4.0, 1),
        (1, 3.0, 2.0, 3.0, -1),
        (1, 4.0, 2.0, 3.0, 1),
    }
    assert got == want


def test_adjacent_cells_merge_into_runs():
    g = _grid(8, 8, [(2, 3, 4, 4)])
    faces = extract_faces(g)
    horiz = sorted((f.coord, f.lo, f.hi, f.sign)
                   for f in faces if f.axis == 1)
    assert horiz == [(3.0, 2.0, 4.0, -1), (4.0, 2.0, 4.0, 1)]
    vert = sorted((f.coord, f.lo, f.hi, f.sign)
                  for f in faces if f.axis == 0)
    assert vert == [(2.0, 3.0, 4.0, -1), (4.0, 3.0, 4.0, 1)]


def test_interior_walls_absent():
    # a 2x2 block exposes four outer faces and nothing between its own cells
    g = _grid(8, 8, [(3, 3, 5, 5)])
    faces = extract_faces(g)
    assert len(faces) == 4
    for f in faces:
        assert f.hi - f.lo == 2.0


def test_face_order_deterministic():
    rng = np.random.default_rng(5)
    for _ in range(10):
        cells = (rng.random((12, 12)) < 0.25).astype(np.uint8)
        g = OccupancyGrid(width=12, height=12, cell_size=1.0, cells=cells)
        assert extract_faces(g) == extract_faces(g)


def test_mirror_point_involution():
    rng = np.random.default_rng(11)
    for _ in range(50):
        p = (float(rng.uniform(-5, 15)), float(rng.uniform(-5, 15)))
        axis = int(rng.integers(0, 2))
        coord = float(rng.uniform(0, 10))
        f = Face(axis=axis, coord=coord, lo=0.0, hi=1.0, sign=1)
        q = mirror_point(mirror_point(p, f), f)
        assert abs(q[0] - p[0]) < 1e-12 and abs(q[1] - p[1]) < 1e-12


def test_mirror_point_fixed_coordinates():
    f = Face(axis=0, coord=5.0, lo=0.0, hi=2.0, sign=1)
    assert mirror_point((2.0, 7.0), f) == (8.0, 7.0)
    f = Face(axis=1, coord=5.0, lo=0.0, hi=2.0, sign=1)
    assert mirror_point((2.0, 7.0), f) == (2.0, 3.0)


def _scene(w, h, blocks, tx):
    g = _grid(w, h, blocks)
    return Scene(grid=g, tx=Transmitter(x=tx[0], y=tx[1], power=1.0))


def test_catalog_contains_empty_sequence_and_respects_order_cap():
    sc = _scene(12, 12, [(4, 4, 7, 7)], (1.3, 1.7))
    faces = extract_faces(sc.grid)
    for k in range(4):
        cat = build_catalog(faces, (sc.tx.x, sc.tx.y), k)
        assert cat[0] == ()
        assert all(len(s) <= k for s in cat)
        for s in cat:
            for a, b in zip(s, s[1:]):
                assert a != b


def test_catalog_prefix_property():
    # raising the order cap only appends longer sequences
    sc = _scene(16, 16, [(3, 3, 6, 9), (9, 10, 13, 13)], (1.4, 1.6))
    faces = extract_faces(sc.grid)
    prev = build_catalog(faces, (sc.tx.x, sc.tx.y), 0)
    for k in range(1, 4):
        cur = build_catalog(faces, (sc.tx.x, sc.tx.y), k)
        assert cur[:len(prev)] == prev
        prev = cur


def test_catalog_prunes_inward_first_faces():
    # tx left of a block: the block's right-side face cannot start a path
    sc = _scene(12, 12, [(5, 4, 8, 8)], (1.5, 6.0))
    faces = extract_faces(sc.grid)
    cat = build_catalog(faces, (sc.tx.x, sc.tx.y), 1)
    for s in cat:
        if not s:
            continue
        f = faces[s[0]]
        assert not (f.axis == 0 and f.coord == 8.0)


def test_scene_candidates_arrays_consistent():
    sc = _scene(14, 14, [(4, 5, 7, 9)], (2.2, 3.3))
    faces, cat, arrays = scene_candidates(sc, 2)
    f_axis, f_coord, f_lo, f_hi, f_sign, seqs, seq_len, imgs = arrays
    assert seqs.shape[0] == len(cat)
    assert f_axis.size == len(faces)
    for i, s in enumerate(cat):
        assert seq_len[i] == len(s)
        for j, fi in enumerate(s):
            assert seqs[i, j] == fi
        assert np.all(seqs[i, len(s):] == -1)
        # image chain starts at the tx and mirrors one face at a time
        assert imgs[i, 0, 0] == sc.tx.x and imgs[i, 0, 1] == sc.tx.y
        p = (sc.tx.x, sc.tx.y)
        for j, fi in enumerate(s):
            p = mirror_point(p, faces[fi])
            assert imgs[i, j + 1, 0] == p[0] and imgs[i, j + 1, 1] == p[1]
