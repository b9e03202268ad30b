"""
Feature-space shift geometry
============================

Encodes paired main-path / multipath maps with a frozen linear encoder
and estimates the direction the multipath physics moves features in.
The estimated direction supports a cone test and the two
direction-consistency losses used during fine-tuning.
"""

import numpy as np

from raymap.diffuse import compute_stats, normalize_map
from raymap.envgrid import SceneParams, generate_scene
from raymap.featspace import (cone_membership, dcl_batch,
                              distance_stability_check, encode,
                              estimate_shift, make_encoder, project)
from raymap.propagate import solve_scene

# a dozen paired maps from disjoint random layouts
params = SceneParams(width=32, height=32)
raw = []
for seed in range(12):
    scene = generate_scene(100 + seed, params)
    mp, mu, _ = solve_scene(scene, k=2)
    raw.append((mp, mu))

# work on the normalized (log + min-max) scale the models train on
stats = compute_stats([m for pair in raw for m in pair])
pairs = [(normalize_map(mp, stats), normalize_map(mu, stats))
         for mp, mu in raw]

enc = make_encoder(input_shape=(32, 32), pool_size=8, d=64, seed=0)
geometry = estimate_shift(enc, pairs)
print(f"shift norm |w| = {np.linalg.norm(geometry.w):.4f}")
print(f"eta bound      = {geometry.eta_bound:.4f} "
      f"(per-sample spread around the mean shift)")

# every observed per-pair shift should sit inside the cone around w
members = []
for mp_n, mu_n in pairs:
    dz = encode(enc, mu_n).components - encode(enc, mp_n).components
    members.append(cone_membership(dz, geometry.w).member)
print(f"cone membership: {sum(members)}/{len(members)} pairs")

# pairwise feature distances barely move under the shift
stab = distance_stability_check(enc, pairs, geometry)
print(f"distance stability: max deviation {stab.max_deviation:.4f} "
      f"<= bound {stab.bound:.4f} ({stab.n_checked} pairs checked)")

# projection splits any feature move into along-w and off-w parts
dz = encode(enc, pairs[0][1]).components - encode(enc, pairs[0][0]).components
pr = project(dz, geometry.w)
print(f"example pair: alpha={pr.alpha:.4f} "
      f"|perp|={np.linalg.norm(pr.perp):.4f}")

# the batch loss is zero exactly when all moves stay in the cone
dzs = [encode(enc, mu_n).components - encode(enc, mp_n).components
       for mp_n, mu_n in pairs]
print(f"dcl on the observed shifts:   {dcl_batch(dzs, geometry.w, 1.0):.6f}")
dzs_on = [pr.alpha * geometry.w for pr in (project(dz, geometry.w)
                                           for dz in dzs)]
print(f"dcl with perp parts removed:  "
      f"{dcl_batch(dzs_on, geometry.w, 1.0):.6f}")
