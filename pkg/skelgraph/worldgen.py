"""Deterministic synthetic worlds built from axis-aligned solid boxes.

Interior free space spans [0, W] x [0, D] x [0, H]; floor and ceiling slabs sit
just outside it. Outer and inner walls are centred on cell boundaries.
"""

import math
import random
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Set, Tuple

import numpy as np

from .config import WorldSpec, write_config_file
from .errors import ConfigError
from .maps import OccupancyGridMap, PointCloudMap, save_occupancy_grid, save_point_cloud

logger = logging.getLogger(__name__)

Cell = Tuple[int, int]

_NEIGHBOURS = ((1, 0), (-1, 0), (0, 1), (0, -1))


@dataclass
class World:
    """A union of solid boxes, each row of lo/hi one box."""

    spec: WorldSpec
    lo: np.ndarray
    hi: np.ndarray

    @property
    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.lo.min(axis=0), self.hi.max(axis=0)

    @property
    def box_count(self) -> int:
        return len(self.lo)

    def surface_distance(self, points) -> np.ndarray:
        """Distance from each point to the nearest solid (0 inside a box)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        below = np.maximum(self.lo[None, :, :] - points[:, None, :], 0.0)
        above = np.maximum(points[:, None, :] - self.hi[None, :, :], 0.0)
        gap = below + above
        return np.linalg.norm(gap, axis=2).min(axis=1)

    def sample_surfaces(self) -> np.ndarray:
        """Points on every box face on a square lattice of spacing 1/sqrt(density)."""
        spacing = 1.0 / math.sqrt(self.spec.surface_point_density)
        chunks = []
        for lo, hi in zip(self.lo, self.hi):
            for axis in range(3):
                u, v = [a for a in range(3) if a != axis]
                us = np.linspace(lo[u], hi[u], max(2, int(math.ceil((hi[u] - lo[u]) / spacing)) + 1))
                vs = np.linspace(lo[v], hi[v], max(2, int(math.ceil((hi[v] - lo[v]) / spacing)) + 1))
                grid_u, grid_v = np.meshgrid(us, vs, indexing="ij")
                for level in (lo[axis], hi[axis]):
                    face = np.empty((grid_u.size, 3))
                    face[:, axis] = level
                    face[:, u] = grid_u.ravel()
                    face[:, v] = grid_v.ravel()
                    chunks.append(face)
        return np.concatenate(chunks)

    def point_cloud(self, clearance: Optional[float] = None) -> PointCloudMap:
        return PointCloudMap(self.sample_surfaces(), clearance=clearance or self.spec.clearance, bounds=self.bounds)

    def occupancy_grid(self, voxel_size: Optional[float] = None, clearance: Optional[float] = None) -> OccupancyGridMap:
        """Voxels whose centre lies inside a box are occupied."""
        voxel = voxel_size or self.spec.voxel_size
        origin, top = self.bounds
        shape = np.maximum(1, np.ceil((top - origin) / voxel - 1e-9).astype(int))
        occupancy = np.zeros(tuple(shape), dtype=bool)
        first = np.ceil((self.lo - origin) / voxel - 0.5 - 1e-9).astype(int)
        last = np.floor((self.hi - origin) / voxel - 0.5 + 1e-9).astype(int)
        first = np.maximum(first, 0)
        last = np.minimum(last, shape - 1)
        for (i0, j0, k0), (i1, j1, k1) in zip(first, last):
            occupancy[i0 : i1 + 1, j0 : j1 + 1, k0 : k1 + 1] = True
        return OccupancyGridMap(origin, voxel, occupancy, clearance=clearance or self.spec.clearance)


class _BoxBuilder:
    def __init__(self, height: float, thickness: float):
        self.height = height
        self.t = thickness
        self.boxes: List[Tuple[Tuple[float, ...], Tuple[float, ...]]] = []

    def box(self, lo, hi):
        self.boxes.append((tuple(float(v) for v in lo), tuple(float(v) for v in hi)))

    def wall_x(self, y: float, x0: float, x1: float, z0: float = 0.0, z1: Optional[float] = None):
        """Full-height wall along x centred on the line y, closing corners by half a thickness."""
        h = self.t / 2.0
        self.box((x0 - h, y - h, z0), (x1 + h, y + h, self.height if z1 is None else z1))

    def wall_y(self, x: float, y0: float, y1: float, z0: float = 0.0, z1: Optional[float] = None):
        h = self.t / 2.0
        self.box((x - h, y0 - h, z0), (x + h, y1 + h, self.height if z1 is None else z1))

    def shell(self, width: float, depth: float):
        """Outer walls plus the floor slab below z=0 and the ceiling slab above the height."""
        h = self.t / 2.0
        self.wall_x(0.0, 0.0, width)
        self.wall_x(depth, 0.0, width)
        self.wall_y(0.0, 0.0, depth)
        self.wall_y(width, 0.0, depth)
        self.box((-h, -h, -self.t), (width + h, depth + h, 0.0))
        self.box((-h, -h, self.height), (width + h, depth + h, self.height + self.t))

    def world(self, spec: WorldSpec) -> World:
        lo = np.array([b[0] for b in self.boxes], dtype=float)
        hi = np.array([b[1] for b in self.boxes], dtype=float)
        return World(spec, lo, hi)


def _cell_counts(spec: WorldSpec, size: float) -> Tuple[int, int]:
    return max(1, int(round(spec.extents[0] / size))), max(1, int(round(spec.extents[1] / size)))


def carve_maze(nx: int, ny: int, rng_seed: int) -> Set[Tuple[Cell, Cell]]:
    """Recursive backtracker over an nx x ny cell grid; returns the carved passages as sorted cell pairs."""
    rng = random.Random(rng_seed)
    visited = {(0, 0)}
    stack: List[Cell] = [(0, 0)]
    passages: Set[Tuple[Cell, Cell]] = set()
    while stack:
        cx, cy = stack[-1]
        options = [
            (cx + dx, cy + dy)
            for dx, dy in _NEIGHBOURS
            if 0 <= cx + dx < nx and 0 <= cy + dy < ny and (cx + dx, cy + dy) not in visited
        ]
        if not options:
            stack.pop()
            continue
        nxt = rng.choice(options)
        visited.add(nxt)
        passages.add(tuple(sorted(((cx, cy), nxt))))
        stack.append(nxt)
    return passages


def _maze(spec: WorldSpec) -> World:
    c = spec.cell_size
    nx, ny = _cell_counts(spec, c)
    builder = _BoxBuilder(spec.extents[2], spec.wall_thickness)
    builder.shell(nx * c, ny * c)
    passages = carve_maze(nx, ny, spec.rng_seed)
    for i in range(nx):
        for j in range(ny):
            if i + 1 < nx and ((i, j), (i + 1, j)) not in passages:
                builder.wall_y((i + 1) * c, j * c, (j + 1) * c)
            if j + 1 < ny and ((i, j), (i, j + 1)) not in passages:
                builder.wall_x((j + 1) * c, i * c, (i + 1) * c)
    return builder.world(spec)


def _rooms(spec: WorldSpec) -> World:
    r = spec.room_size
    if spec.door_width >= r - spec.wall_thickness:
        raise ConfigError(f"door_width {spec.door_width} does not fit in a {r} m wall")
    nx, ny = _cell_counts(spec, r)
    builder = _BoxBuilder(spec.extents[2], spec.wall_thickness)
    builder.shell(nx * r, ny * r)
    half_door = spec.door_width / 2.0
    h = spec.wall_thickness / 2.0
    for i in range(nx):
        for j in range(ny):
            mid_y, mid_x = (j + 0.5) * r, (i + 0.5) * r
            if i + 1 < nx:
                x = (i + 1) * r
                builder.wall_y(x, j * r, mid_y - half_door - h)
                builder.wall_y(x, mid_y + half_door + h, (j + 1) * r)
            if j + 1 < ny:
                y = (j + 1) * r
                builder.wall_x(y, i * r, mid_x - half_door - h)
                builder.wall_x(y, mid_x + half_door + h, (i + 1) * r)
    return builder.world(spec)


def _ring(spec: WorldSpec) -> World:
    width, depth, height = spec.extents
    cw = spec.corridor_width
    if width <= 2 * cw + spec.wall_thickness or depth <= 2 * cw + spec.wall_thickness:
        raise ConfigError(f"a {width}x{depth} m ring cannot hold {cw} m corridors")
    builder = _BoxBuilder(height, spec.wall_thickness)
    builder.shell(width, depth)
    builder.box((cw, cw, 0.0), (width - cw, depth - cw, height))
    if spec.blocked:
        builder.wall_y(width / 2.0, 0.0, cw)
    return builder.world(spec)


def _multifloor(spec: WorldSpec) -> World:
    width, depth, height = spec.extents
    floors = max(1, int(round(height / spec.floor_height)))
    hole = min(max(spec.corridor_width, 2.0), width / 2.0, depth / 2.0)
    t = spec.wall_thickness
    builder = _BoxBuilder(height, t)
    builder.shell(width, depth)
    for k in range(1, floors):
        z = k * spec.floor_height
        z0, z1 = z - t / 2.0, z + t / 2.0
        # Stairwell openings alternate between opposite corners
        if k % 2:
            builder.box((0.0, 0.0, z0), (width - hole, depth, z1))
            builder.box((width - hole, 0.0, z0), (width, depth - hole, z1))
        else:
            builder.box((hole, 0.0, z0), (width, depth, z1))
            builder.box((0.0, hole, z0), (hole, depth, z1))
    return builder.world(spec)


def _hall(spec: WorldSpec) -> World:
    width, depth, height = spec.extents
    builder = _BoxBuilder(height, spec.wall_thickness)
    builder.shell(width, depth)
    rng = np.random.default_rng(spec.rng_seed)
    hint = seed_hint(spec)
    placed = 0
    attempts = 0
    while placed < spec.obstacle_count and attempts < 50 * max(1, spec.obstacle_count):
        attempts += 1
        size = rng.uniform(0.5, 2.0, size=2)
        top = rng.uniform(0.5, height)
        x = rng.uniform(1.0, max(1.0, width - 1.0 - size[0]))
        y = rng.uniform(1.0, max(1.0, depth - 1.0 - size[1]))
        # Keep machinery 1.5 m away from the canonical seed
        near_x = min(max(hint[0], x), x + size[0])
        near_y = min(max(hint[1], y), y + size[1])
        if math.hypot(hint[0] - near_x, hint[1] - near_y) < 1.5:
            continue
        builder.box((x, y, 0.0), (x + size[0], y + size[1], top))
        placed += 1
    return builder.world(spec)


_BUILDERS = {"maze": _maze, "rooms": _rooms, "ring": _ring, "multifloor": _multifloor, "hall": _hall}


def build_world(spec: WorldSpec) -> World:
    spec.validate()
    world = _BUILDERS[spec.archetype](spec)
    logger.info(f"Built {spec.archetype} world {'x'.join(f'{v:g}' for v in spec.extents)} from {world.box_count} boxes")
    return world


def seed_hint(spec: WorldSpec) -> np.ndarray:
    """Canonical interior point of a world: the default seed and the noise keep-clear centre."""
    width, depth, height = spec.extents
    if spec.archetype in ("maze", "rooms"):
        size = spec.cell_size if spec.archetype == "maze" else spec.room_size
        nx, ny = _cell_counts(spec, size)
        return np.array([(nx // 2 + 0.5) * size, (ny // 2 + 0.5) * size, height / 2.0])
    if spec.archetype == "ring":
        return np.array([spec.corridor_width / 2.0, depth / 2.0, height / 2.0])
    if spec.archetype == "multifloor":
        return np.array([width / 2.0, depth / 2.0, min(spec.floor_height, height) / 2.0])
    return np.array([width / 2.0, depth / 2.0, height / 2.0])


def add_noise(cloud: PointCloudMap, density: float, rng_seed: int, keep_clear=None) -> PointCloudMap:
    """Add Poisson(density * volume) uniform outliers inside the cloud bounds.

    Outliers within 2 * clearance of keep_clear are dropped so generation can start there.
    """
    if density < 0:
        raise ConfigError(f"noise density must not be negative, got {density}")
    if density == 0:
        return cloud
    rng = np.random.default_rng(rng_seed)
    lo, hi = cloud.bounds
    count = int(rng.poisson(density * float(np.prod(hi - lo))))
    noise = rng.uniform(lo, hi, size=(count, 3))
    if keep_clear is not None:
        noise = noise[np.linalg.norm(noise - np.asarray(keep_clear, dtype=float), axis=1) > 2.0 * cloud.clearance]
    logger.info(f"Added {len(noise)} noise points (density {density}/m^3)")
    return PointCloudMap(np.concatenate([cloud.points, noise]), clearance=cloud.clearance, bounds=(lo, hi))


def generate_world(spec: WorldSpec) -> Tuple[PointCloudMap, OccupancyGridMap]:
    """Point cloud and occupancy grid renderings of the same world; noise shows up in both."""
    world = build_world(spec)
    cloud = world.point_cloud()
    grid = world.occupancy_grid()
    if spec.noise_density > 0:
        surfaces = len(cloud.points)
        cloud = add_noise(cloud, spec.noise_density, spec.rng_seed, keep_clear=seed_hint(spec))
        if len(cloud.points) > surfaces:
            index = grid.voxel_index(cloud.points[surfaces:])
            index = np.minimum(np.maximum(index, 0), np.array(grid.shape) - 1)
            occupancy = grid.occupancy.copy()
            occupancy[index[:, 0], index[:, 1], index[:, 2]] = True
            grid = OccupancyGridMap(grid.origin, grid.voxel_size, occupancy, clearance=grid.clearance)
    logger.info(f"World rendered: {len(cloud)} points, grid {grid.shape} at {grid.voxel_size} m")
    return cloud, grid


def save_world(spec: WorldSpec, out_dir: str, fmt: str = "ply") -> Dict[str, str]:
    """Write world.<fmt>, world.grid.json and world.yaml into out_dir."""
    if fmt not in ("ply", "xyz"):
        raise ConfigError(f"unknown point cloud format '{fmt}'")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cloud, grid = generate_world(spec)
    paths = {
        "cloud": str(out / f"world.{fmt}"),
        "grid": str(out / "world.grid.json"),
        "spec": str(out / "world.yaml"),
    }
    save_point_cloud(cloud, paths["cloud"])
    save_occupancy_grid(grid, paths["grid"])
    write_config_file({"world": spec.to_dict()}, paths["spec"])
    return paths
