"""Image-source solver against the independent angular-sweep oracle.

Fast spot checks live here; the wide 50-scene equivalence run is part of the
acceptance suite.
"""

import numpy as np

import sweep_oracle
from raymap.envgrid import SceneParams, generate_scene
from raymap.propagate import enumerate_paths, solve_scene


def test_path_multisets_match_on_small_scenes():
    p = SceneParams(width=12, height=12, building_count=(1, 2),
                    building_size=(2, 5))
    total = 0
    for seed in range(3):
        sc = generate_scene(300 + seed, p)
        occ = sc.grid.cells.astype(bool)
        ys, xs = np.nonzero(~occ)
        pts = np.stack([xs + 0.5, ys + 0.5], axis=1)
        oracle_lists = sweep_oracle.sweep_paths(sc, pts, 2, n_rays=8192)
        for (iy, ix), opaths in zip(zip(ys, xs), oracle_lists):
            ps = enumerate_paths(sc, (ix + 0.5, iy + 0.5), 2)
            mine = sorted((q.reflections, q.length) for q in ps.paths)
            assert len(mine) == len(opaths), (seed, ix, iy)
            for (nb_a, l_a), (nb_b, l_b) in zip(mine, opaths):
                assert nb_a == nb_b
                assert abs(l_a - l_b) <= 1e-6
            total += len(mine)
    assert total > 200  # the comparison actually exercised many paths


def test_solver_map_matches_oracle_map():
    p = SceneParams(width=16, height=16, building_count=(1, 2),
                    building_size=(2, 6))
    for seed in range(3):
        sc = generate_scene(310 + seed, p)
        _, mu, _ = solve_scene(sc, 2)
        oracle = sweep_oracle.oracle_mu(sc, 2, n_rays=8192)
        occ = sc.grid.cells.astype(bool)
        denom = np.where(mu.values > 0.0, mu.values, 1.0)
        rel = np.abs(oracle - mu.values) / denom
        rel[occ] = 0.0
        assert rel.max() <= 1e-6


def test_oracle_sees_pure_inverse_square_on_empty_grid():
    p = SceneParams(width=10, height=10, building_count=(0, 0))
    sc = generate_scene(5, p)
    _, mu, _ = solve_scene(sc, 2)
    oracle = sweep_oracle.oracle_mu(sc, 2, n_rays=4096)
    denom = np.where(mu.values > 0.0, mu.values, 1.0)
    assert (np.abs(oracle - mu.values) / denom).max() <= 1e-9
