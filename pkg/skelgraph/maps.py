"""Environment maps and the collision-checking contract.

Both map types answer the same three questions (is a point free, where does a
ray first enter occupied space, is a segment traversable) at a fixed robot
clearance, which is all the skeleton generator needs from a map.
"""

import json
import math
import logging
from abc import ABC, abstractmethod
from functools import cached_property
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import MapError

logger = logging.getLogger(__name__)

DEFAULT_CLEARANCE = 0.3
GRID_FORMAT = "skelgraph-grid"


def _as_point(q) -> np.ndarray:
    return np.asarray(q, dtype=float).reshape(3)


def march_samples(max_dist: float, step: float) -> np.ndarray:
    """Sample distances along a ray: every multiple of step, plus max_dist itself."""
    count = int(math.floor(max_dist / step + 1e-9))
    ts = step * np.arange(1, count + 1, dtype=float)
    ts = ts[ts <= max_dist]
    if ts.size == 0 or ts[-1] < max_dist - 1e-12:
        ts = np.append(ts, max_dist)
    return ts


class CollisionMap(ABC):
    """Collision checking contract shared by point clouds and occupancy grids.

    Points outside the bounds are never free. All queries are read-only.
    """

    def __init__(self, clearance: float, bounds_min: np.ndarray, bounds_max: np.ndarray):
        if not clearance > 0:
            raise MapError(f"clearance must be positive, got {clearance}")
        self.clearance = float(clearance)
        self.bounds_min = np.asarray(bounds_min, dtype=float)
        self.bounds_max = np.asarray(bounds_max, dtype=float)

    @property
    def march_step(self) -> float:
        return self.clearance / 2.0

    @property
    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.bounds_min, self.bounds_max

    @property
    def center(self) -> np.ndarray:
        return (self.bounds_min + self.bounds_max) / 2.0

    def in_bounds(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        return np.all((points >= self.bounds_min) & (points <= self.bounds_max), axis=1)

    @abstractmethod
    def is_free_many(self, points: np.ndarray) -> np.ndarray:
        """Vectorised freeness test for an (N, 3) array."""

    def is_free(self, q) -> bool:
        return bool(self.is_free_many(_as_point(q)[None, :])[0])

    def raycast_many(self, origin, dirs: np.ndarray, max_dist: float) -> np.ndarray:
        """March every ray in dirs from origin; returns hit distances, inf for no hit."""
        origin = _as_point(origin)
        dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
        if max_dist <= 0:
            raise MapError(f"max_dist must be positive, got {max_dist}")
        if not self.is_free(origin):
            raise MapError(f"raycast from occupied space at {origin.tolist()}")
        ts = march_samples(max_dist, self.march_step)
        samples = origin[None, None, :] + ts[None, :, None] * dirs[:, None, :]
        blocked = ~self.is_free_many(samples.reshape(-1, 3)).reshape(len(dirs), len(ts))
        first = np.argmax(blocked, axis=1)
        return np.where(blocked.any(axis=1), ts[first], np.inf)

    def raycast_occupied(self, origin, direction, max_dist: float) -> Optional[float]:
        direction = _as_point(direction)
        if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
            raise MapError("ray direction must be a unit vector")
        hit = self.raycast_many(origin, direction[None, :], max_dist)[0]
        return None if math.isinf(hit) else float(hit)

    def segment_is_free(self, a, b) -> bool:
        """True when every march-step sample of segment ab (endpoints included) is free."""
        a, b = _as_point(a), _as_point(b)
        length = float(np.linalg.norm(b - a))
        count = max(1, int(math.ceil(length / self.march_step)))
        ts = np.linspace(0.0, 1.0, count + 1)
        samples = a[None, :] + ts[:, None] * (b - a)[None, :]
        return bool(self.is_free_many(samples).all())


class PointCloudMap(CollisionMap):
    """Point cloud with a KD-tree index; collision = a point within clearance."""

    def __init__(self, points, clearance: float = DEFAULT_CLEARANCE, bounds=None):
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        if len(points) == 0:
            raise MapError("empty cloud")
        if bounds is None:
            bounds = (points.min(axis=0), points.max(axis=0))
        super().__init__(clearance, bounds[0], bounds[1])
        if not self.in_bounds(points).all():
            raise MapError("every point must lie inside the map bounds")
        self.points = points
        self.index = cKDTree(points)

    def __len__(self) -> int:
        return len(self.points)

    def radius_query(self, q, radius: float) -> List[int]:
        """Indices of all points within radius of q, ascending."""
        return sorted(self.index.query_ball_point(_as_point(q), radius))

    def nearest_distance(self, points: np.ndarray) -> np.ndarray:
        distances, _ = self.index.query(np.atleast_2d(points), k=1)
        return distances

    def is_free_many(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        free = self.in_bounds(points)
        if free.any():
            bound = self.clearance * (1.0 + 1e-6) + 1e-12
            distances, _ = self.index.query(points[free], k=1, distance_upper_bound=bound)
            free[free] = distances > self.clearance
        return free


class OccupancyGridMap(CollisionMap):
    """Dense boolean voxel grid; occupied voxel centres act as obstacle points."""

    def __init__(self, origin, voxel_size: float, occupancy, clearance: float = DEFAULT_CLEARANCE):
        occupancy = np.asarray(occupancy, dtype=bool)
        if occupancy.ndim != 3 or min(occupancy.shape) < 1:
            raise MapError(f"occupancy must be a 3D array with every dimension >= 1, got {occupancy.shape}")
        if not voxel_size > 0:
            raise MapError(f"voxel_size must be positive, got {voxel_size}")
        self.origin = _as_point(origin)
        self.voxel_size = float(voxel_size)
        self.occupancy = occupancy
        super().__init__(clearance, self.origin, self.origin + np.array(occupancy.shape) * self.voxel_size)
        centers = self.voxel_centers(np.argwhere(occupancy))
        self.index = cKDTree(centers) if len(centers) else None

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(self.occupancy.shape)

    def voxel_centers(self, indices: np.ndarray) -> np.ndarray:
        return self.origin + (np.asarray(indices, dtype=float) + 0.5) * self.voxel_size

    def voxel_index(self, points: np.ndarray) -> np.ndarray:
        return np.floor((np.atleast_2d(points) - self.origin) / self.voxel_size).astype(int)

    def contains_index(self, indices: np.ndarray) -> np.ndarray:
        indices = np.atleast_2d(indices)
        return np.all((indices >= 0) & (indices < np.array(self.shape)), axis=1)

    def is_free_many(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        free = self.in_bounds(points)
        if free.any() and self.index is not None:
            bound = self.clearance * (1.0 + 1e-6) + 1e-12
            distances, _ = self.index.query(points[free], k=1, distance_upper_bound=bound)
            free[free] = distances > self.clearance
        return free

    @cached_property
    def inflated(self) -> np.ndarray:
        """Voxels that may contain a non-free point: an occupied centre within clearance + half diagonal."""
        reach = self.clearance + self.voxel_size * math.sqrt(3.0) / 2.0
        r = int(math.ceil(reach / self.voxel_size))
        offsets = np.indices((2 * r + 1,) * 3) - r
        structure = np.linalg.norm(offsets, axis=0) * self.voxel_size <= reach
        return ndimage.binary_dilation(self.occupancy, structure=structure)

    def traversable(self) -> np.ndarray:
        """Voxels whose centre is free at clearance."""
        if not self.occupancy.any():
            return np.ones(self.shape, dtype=bool)
        distance = ndimage.distance_transform_edt(~self.occupancy, sampling=self.voxel_size)
        return distance > self.clearance

    def traverse_voxels(
        self, origin, direction, max_dist: float
    ) -> Iterator[Tuple[Tuple[int, int, int], float, float]]:
        """Amanatides–Woo DDA: yield (voxel, t_enter, t_exit) for every voxel the ray crosses inside the grid."""
        origin = (_as_point(origin) - self.origin) / self.voxel_size
        direction = _as_point(direction)
        scale = self.voxel_size
        voxel = [int(math.floor(c)) for c in origin]
        step, t_max, t_delta = [], [], []
        for axis in range(3):
            d = direction[axis]
            if d > 0:
                step.append(1)
                t_max.append((voxel[axis] + 1 - origin[axis]) / d * scale)
                t_delta.append(scale / d)
            elif d < 0:
                step.append(-1)
                t_max.append((voxel[axis] - origin[axis]) / d * scale)
                t_delta.append(-scale / d)
            else:
                step.append(0)
                t_max.append(math.inf)
                t_delta.append(math.inf)

        shape = self.shape
        t = 0.0
        while t <= max_dist:
            if not all(0 <= voxel[a] < shape[a] for a in range(3)):
                return
            axis = int(np.argmin(t_max))
            t_next = min(t_max[axis], max_dist)
            yield tuple(voxel), t, t_next
            if t_max[axis] > max_dist:
                return
            t = t_max[axis]
            voxel[axis] += step[axis]
            t_max[axis] += t_delta[axis]

    def raycast_many(self, origin, dirs: np.ndarray, max_dist: float) -> np.ndarray:
        origin = _as_point(origin)
        dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
        if max_dist <= 0:
            raise MapError(f"max_dist must be positive, got {max_dist}")
        if not self.is_free(origin):
            raise MapError(f"raycast from occupied space at {origin.tolist()}")
        ts = march_samples(max_dist, self.march_step)
        inflated = self.inflated
        hits = np.full(len(dirs), np.inf)
        for i, direction in enumerate(dirs):
            # Only samples inside flagged voxels or past the grid exit can be blocked
            candidate = np.zeros(len(ts), dtype=bool)
            exit_t = math.inf
            last_t = 0.0
            for voxel, t0, t1 in self.traverse_voxels(origin, direction, max_dist):
                last_t = t1
                if inflated[voxel]:
                    candidate |= (ts >= t0 - 1e-12) & (ts <= t1 + 1e-12)
            if last_t < max_dist:
                exit_t = last_t
                candidate |= ts >= exit_t - 1e-12
            if not candidate.any():
                continue
            sample_ts = ts[candidate]
            free = self.is_free_many(origin[None, :] + sample_ts[:, None] * direction[None, :])
            if not free.all():
                hits[i] = sample_ts[np.argmin(free)]
        return hits


def is_free(map: CollisionMap, q) -> bool:
    """True iff q is inside the bounds and no obstacle lies within clearance of it."""
    return map.is_free(q)


def raycast_occupied(map: CollisionMap, origin, direction, max_dist: float) -> Optional[float]:
    """First march sample along the ray that is not free, or None."""
    return map.raycast_occupied(origin, direction, max_dist)


def shell_offsets(k: int) -> np.ndarray:
    """Integer lattice offsets whose largest absolute component is exactly k."""
    if k == 0:
        return np.zeros((1, 3), dtype=int)
    ticks = np.arange(-k, k + 1)
    a, b = (g.ravel() for g in np.meshgrid(ticks, ticks, indexing="ij"))
    faces = []
    for axis in range(3):
        others = [i for i in range(3) if i != axis]
        for side in (-k, k):
            face = np.empty((a.size, 3), dtype=int)
            face[:, axis] = side
            face[:, others[0]] = a
            face[:, others[1]] = b
            faces.append(face)
    return np.unique(np.concatenate(faces), axis=0)


def find_free_seed(map: CollisionMap, near=None, max_radius: Optional[float] = None) -> np.ndarray:
    """Outward spiral search for the free point nearest to near (default: bounds centre).

    Candidates sit on a lattice of clearance spacing, visited shell by shell and
    within a shell by distance, then by offset. The search ends early once a
    whole shell lies outside the map bounds.
    """
    near = map.center if near is None else _as_point(near)
    spacing = map.clearance
    if max_radius is None:
        max_radius = float(np.linalg.norm(map.bounds_max - map.bounds_min))
    shells = int(math.ceil(max_radius / spacing))
    for k in range(shells + 1):
        reach = k * spacing
        if np.all(near - reach < map.bounds_min) and np.all(near + reach > map.bounds_max):
            break
        offsets = shell_offsets(k)
        order = np.lexsort((offsets[:, 2], offsets[:, 1], offsets[:, 0], np.linalg.norm(offsets, axis=1)))
        candidates = near[None, :] + offsets[order] * spacing
        free = map.is_free_many(candidates)
        if free.any():
            seed = candidates[np.argmax(free)]
            logger.info(f"Seed position found at {seed.round(3).tolist()} ({k} shells from {near.round(3).tolist()})")
            return seed
    raise MapError("no free seed position found inside the map")


def _parse_xyz(lines: Sequence[str], first_line: int) -> np.ndarray:
    points = []
    for offset, line in enumerate(lines):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        parts = text.split()
        if len(parts) < 3:
            raise MapError("malformed record: expected 'x y z'", line=first_line + offset)
        try:
            points.append([float(parts[0]), float(parts[1]), float(parts[2])])
        except ValueError:
            raise MapError(f"malformed record: '{text}'", line=first_line + offset)
    return np.asarray(points, dtype=float).reshape(-1, 3)


def _parse_ply(lines: List[str]) -> np.ndarray:
    if not lines or lines[0].strip() != "ply":
        raise MapError("not a PLY file: missing 'ply' magic", line=1)
    vertex_count = None
    properties: List[str] = []
    in_vertex = False
    header_end = None
    for number, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if not parts:
            continue
        keyword = parts[0]
        if keyword == "format":
            if len(parts) < 2 or parts[1] != "ascii":
                raise MapError("only ASCII PLY is supported", line=number)
        elif keyword == "element":
            in_vertex = len(parts) >= 3 and parts[1] == "vertex"
            if in_vertex:
                try:
                    vertex_count = int(parts[2])
                except ValueError:
                    raise MapError("malformed vertex element count", line=number)
        elif keyword == "property" and in_vertex:
            properties.append(parts[-1])
        elif keyword == "end_header":
            header_end = number
            break
    if header_end is None:
        raise MapError("PLY header has no end_header")
    if vertex_count is None:
        raise MapError("PLY header declares no vertex element")
    try:
        axes = [properties.index(name) for name in ("x", "y", "z")]
    except ValueError:
        raise MapError("PLY vertex element needs x, y and z properties")

    body = lines[header_end : header_end + vertex_count]
    if len(body) < vertex_count:
        raise MapError(f"PLY declares {vertex_count} vertices but holds {len(body)}", line=header_end + len(body) + 1)
    points = np.empty((vertex_count, 3))
    for i, line in enumerate(body):
        parts = line.split()
        try:
            points[i] = [float(parts[a]) for a in axes]
        except (ValueError, IndexError):
            raise MapError(f"malformed vertex record: '{line.strip()}'", line=header_end + i + 1)
    return points


def load_point_cloud(path: str, clearance: float = DEFAULT_CLEARANCE) -> PointCloudMap:
    """Load an ASCII PLY or XYZ point cloud.

    Raises:
        MapError: file missing or unreadable, malformed record (with line number), empty cloud
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.read().splitlines()
    except FileNotFoundError:
        raise MapError(f"map not found: {path}")
    except (OSError, UnicodeDecodeError) as e:
        raise MapError(f"unreadable map file {path}: {e}")

    if Path(path).suffix.lower() == ".ply":
        points = _parse_ply(lines)
    else:
        points = _parse_xyz(lines, first_line=1)
    if len(points) == 0:
        raise MapError(f"empty cloud: {path}")
    cloud = PointCloudMap(points, clearance=clearance)
    logger.info(
        f"Loaded {len(cloud)} points from {path}, bounds {cloud.bounds_min.tolist()} - {cloud.bounds_max.tolist()}"
    )
    return cloud


def save_point_cloud(cloud: PointCloudMap, path: str):
    """Write an ASCII PLY (".ply") or XYZ (anything else) file."""
    with open(path, "w", encoding="utf-8") as f:
        if Path(path).suffix.lower() == ".ply":
            f.write("ply\nformat ascii 1.0\n")
            f.write(f"element vertex {len(cloud.points)}\n")
            f.write("property float x\nproperty float y\nproperty float z\nend_header\n")
        np.savetxt(f, cloud.points, fmt="%.6f")


def encode_rle(occupancy: np.ndarray) -> List[int]:
    """Run lengths of the C-order flattened array, starting with a (possibly empty) free run."""
    flat = occupancy.ravel(order="C").astype(np.int8)
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat.size and flat[0]:
        runs.insert(0, 0)
    return runs


def decode_rle(runs: Sequence[int], shape: Sequence[int]) -> np.ndarray:
    values = np.arange(len(runs)) % 2 == 1
    flat = np.repeat(values, np.asarray(runs, dtype=int))
    if flat.size != int(np.prod(shape)):
        raise MapError(f"grid payload holds {flat.size} voxels, header declares {int(np.prod(shape))}")
    return flat.reshape(tuple(shape), order="C")


def save_occupancy_grid(grid: OccupancyGridMap, path: str):
    payload = {
        "format": GRID_FORMAT,
        "version": 1,
        "origin": grid.origin.tolist(),
        "voxel_size": grid.voxel_size,
        "shape": list(grid.shape),
        "rle": encode_rle(grid.occupancy),
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f)
        f.write("\n")


def load_occupancy_grid(path: str, clearance: float = DEFAULT_CLEARANCE) -> OccupancyGridMap:
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
    except FileNotFoundError:
        raise MapError(f"map not found: {path}")
    except (OSError, json.JSONDecodeError) as e:
        raise MapError(f"unreadable grid file {path}: {e}")
    if payload.get("format") != GRID_FORMAT:
        raise MapError(f"{path} is not a {GRID_FORMAT} file")
    try:
        occupancy = decode_rle(payload["rle"], payload["shape"])
        return OccupancyGridMap(payload["origin"], payload["voxel_size"], occupancy, clearance=clearance)
    except KeyError as e:
        raise MapError(f"grid file {path} misses field {e}")


def load_map(path: str, clearance: float = DEFAULT_CLEARANCE) -> CollisionMap:
    """Load any supported map file, dispatching on suffix."""
    if Path(path).suffix.lower() == ".json":
        return load_occupancy_grid(path, clearance=clearance)
    return load_point_cloud(path, clearance=clearance)


def voxelize(cloud: PointCloudMap, voxel_size: float) -> OccupancyGridMap:
    """Occupancy grid over the cloud bounds; a voxel is occupied iff it holds a point."""
    extent = cloud.bounds_max - cloud.bounds_min
    shape = np.maximum(1, np.ceil(extent / voxel_size - 1e-9).astype(int))
    indices = np.floor((cloud.points - cloud.bounds_min) / voxel_size).astype(int)
    indices = np.minimum(indices, shape - 1)
    occupancy = np.zeros(tuple(shape), dtype=bool)
    occupancy[indices[:, 0], indices[:, 1], indices[:, 2]] = True
    return OccupancyGridMap(cloud.bounds_min, voxel_size, occupancy, clearance=cloud.clearance)
