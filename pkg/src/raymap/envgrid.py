"""Scenes: occupancy grids, transmitters, generation, and visibility.

Coordinates are in cell units: cell (ix, iy) spans [ix, ix+1) x [iy, iy+1)
with center (ix + 0.5, iy + 0.5); physical lengths are cells * cell_size
meters. Occupancy arrays are indexed [iy, ix].

Scene files are little-endian: magic ``RFS1``, uint32 width, uint32 height,
float64 cell_size, float64 tx x, y, power, then width*height occupancy bytes
row-major.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import FormatError, GenerationError
from .fields import RadioMap

SCENE_MAGIC = b"RFS1"


@dataclass(frozen=True)
class OccupancyGrid:
    width: int
    height: int
    cell_size: float
    cells: np.ndarray  # (height, width) uint8, 0 free / 1 occupied

    def __post_init__(self):
        if self.width < 4 or self.height < 4:
            raise ValueError("grid must be at least 4x4 cells")
        if not (self.cell_size > 0.0):
            raise ValueError("cell_size must be positive")
        c = np.ascontiguousarray(np.asarray(self.cells, dtype=np.uint8))
        if c.shape != (self.height, self.width):
            raise ValueError(
                f"cells shape {c.shape} does not match "
                f"{self.height}x{self.width}"
            )
        if c.max(initial=0) > 1:
            raise ValueError("occupancy values must be 0 or 1")
        object.__setattr__(self, "cells", c)


@dataclass(frozen=True)
class Transmitter:
    x: float  # cell units, fractional allowed
    y: float
    power: float = 1.0

    def __post_init__(self):
        if not (self.power > 0.0):
            raise ValueError("transmit power must be positive")


@dataclass(frozen=True)
class Scene:
    grid: OccupancyGrid
    tx: Transmitter
    seed: int = 0
    tag: str = ""

    def __post_init__(self):
        g = self.grid
        if not (0.0 <= self.tx.x <= g.width and 0.0 <= self.tx.y <= g.height):
            raise ValueError("transmitter lies outside the grid")


@dataclass(frozen=True)
class SceneParams:
    """Layout knobs for generate_scene.

    building_count / building_size are inclusive (lo, hi) ranges in cells;
    margin keeps a free ring at the border; tx_index selects among
    deterministic transmitter placements for one layout seed.
    """

    width: int = 32
    height: int = 32
    cell_size: float = 1.0
    building_count: tuple[int, int] = (2, 5)
    building_size: tuple[int, int] = (2, 7)
    margin: int = 1
    power: float = 1.0
    tx_index: int = 0
    max_tries: int = 200


def generate_scene(seed: int, params: SceneParams | None = None) -> Scene:
    """Deterministic random scene: axis-aligned rectangular buildings plus a
    transmitter in free space.

    The transmitter cell is drawn uniformly over free cells, then jittered
    inside the cell (uniform in [0.25, 0.75) per axis) so its continuous
    position is generic with respect to the cell-center / grid-corner
    lattice. Raises GenerationError when placement retries run out.
    """
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    p = params if params is not None else SceneParams()
    clo, chi = p.building_count
    slo, shi = p.building_size
    if clo < 0 or chi < clo:
        raise ValueError("bad building_count range")
    if slo < 1 or shi < slo:
        raise ValueError("bad building_size range")
    if p.margin < 0:
        raise ValueError("margin must be nonnegative")
    if p.tx_index < 0:
        raise ValueError("tx_index must be nonnegative")

    layout_rng = np.random.default_rng(np.random.SeedSequence([7, seed]))
    cells = np.zeros((p.height, p.width), dtype=np.uint8)
    n_buildings = int(layout_rng.integers(clo, chi + 1))
    for _ in range(n_buildings):
        placed = False
        for _ in range(p.max_tries):
            bw = int(layout_rng.integers(slo, shi + 1))
            bh = int(layout_rng.integers(slo, shi + 1))
            x_max = p.width - p.margin - bw
            y_max = p.height - p.margin - bh
            if x_max < p.margin or y_max < p.margin:
                continue
            x0 = int(layout_rng.integers(p.margin, x_max + 1))
            y0 = int(layout_rng.integers(p.margin, y_max + 1))
            cells[y0:y0 + bh, x0:x0 + bw] = 1
            placed = True
            break
        if not placed:
            raise GenerationError(
                f"could not place a building after {p.max_tries} tries"
            )

    free_iy, free_ix = np.nonzero(cells == 0)
    if free_ix.size == 0:
        raise GenerationError("no free cell left for the transmitter")
    tx_rng = np.random.default_rng(np.random.SeedSequence([11, seed, p.tx_index]))
    pick = int(tx_rng.integers(free_ix.size))
    jx, jy = 0.25 + 0.5 * tx_rng.random(2)
    tx = Transmitter(
        x=float(free_ix[pick]) + float(jx),
        y=float(free_iy[pick]) + float(jy),
        power=p.power,
    )
    grid = OccupancyGrid(width=p.width, height=p.height,
                         cell_size=p.cell_size, cells=cells)
    return Scene(grid=grid, tx=tx, seed=seed, tag=f"s{seed}t{p.tx_index}")


def los_visible(grid: OccupancyGrid, a, b) -> bool:
    """Line-of-sight between two continuous points (cell units).

    True iff no occupied cell strictly between the endpoints' cells touches
    the segment (conservative supercover: a corner touch counts as touching
    all four adjacent cells). The endpoints' own cells are excluded, and the
    result is symmetric in (a, b).
    """
    ax, ay = float(a[0]), float(a[1])
    bx, by = float(b[0]), float(b[1])
    for (x, y) in ((ax, ay), (bx, by)):
        if not (0.0 <= x <= grid.width and 0.0 <= y <= grid.height):
            raise ValueError(f"point ({x}, {y}) outside the grid")
    return not _kernels.supercover_blocked(grid.cells, ax, ay, bx, by)


def distance_field(scene: Scene) -> RadioMap:
    """Euclidean distance (meters) from the transmitter to each cell center."""
    g = scene.grid
    iy, ix = np.indices((g.height, g.width), dtype=np.float64)
    d = np.hypot(ix + 0.5 - scene.tx.x, iy + 0.5 - scene.tx.y) * g.cell_size
    return RadioMap(width=g.width, height=g.height, values=d)


# ----------------------------------------------------------------------
# binary blocks
# ----------------------------------------------------------------------

def scene_to_bytes(scene: Scene) -> bytes:
    g = scene.grid
    head = struct.pack("<4sIIdddd", SCENE_MAGIC, g.width, g.height,
                       g.cell_size, scene.tx.x, scene.tx.y, scene.tx.power)
    return head + g.cells.tobytes(order="C")


def scene_from_buffer(buf: bytes, offset: int = 0,
                      tag: str = "") -> tuple[Scene, int]:
    header = struct.Struct("<4sIIdddd")
    if len(buf) < offset + header.size:
        raise FormatError("truncated scene block")
    magic, w, h, cs, txx, txy, power = header.unpack_from(buf, offset)
    if magic != SCENE_MAGIC:
        raise FormatError(f"bad scene magic {magic!r}")
    offset += header.size
    end = offset + w * h
    if len(buf) < end:
        raise FormatError("truncated occupancy payload")
    cells = np.frombuffer(buf, dtype=np.uint8, count=w * h,
                          offset=offset).reshape(h, w).copy()
    grid = OccupancyGrid(width=w, height=h, cell_size=cs, cells=cells)
    tx = Transmitter(x=txx, y=txy, power=power)
    return Scene(grid=grid, tx=tx, seed=0, tag=tag), end


def save_scene(scene: Scene, path) -> None:
    with open(path, "wb") as fh:
        fh.write(scene_to_bytes(scene))


def load_scene(path) -> Scene:
    from pathlib import Path

    with open(path, "rb") as fh:
        buf = fh.read()
    scene, end = scene_from_buffer(buf, tag=Path(path).stem)
    if end != len(buf):
        raise FormatError("trailing bytes after scene payload")
    return scene
