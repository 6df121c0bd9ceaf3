"""Geometric primitives: direction sampling, convex hulls, projection and ray–mesh tests."""

import math
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import GeometryError

logger = logging.getLogger(__name__)

RAY_EPSILON = 1e-9
HULL_JITTER = 1e-8
GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


@dataclass(eq=False)
class TriangleMesh:
    """Triangulated surface. facets index into vertices; normals are unit length."""

    vertices: np.ndarray
    facets: np.ndarray
    facet_normals: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.facets = np.asarray(self.facets, dtype=int).reshape(-1, 3)
        self.facet_normals = np.asarray(self.facet_normals, dtype=float).reshape(-1, 3)
        if len(self.facets) and (self.facets.min() < 0 or self.facets.max() >= len(self.vertices)):
            raise GeometryError("facet index out of range")
        if len(self.facet_normals) != len(self.facets):
            raise GeometryError("one normal per facet is required")

    @classmethod
    def from_facets(cls, vertices, facets, fallback_normals=None) -> "TriangleMesh":
        """Build a mesh, deriving normals from the winding; zero-area facets take the fallback normal."""
        vertices = np.asarray(vertices, dtype=float).reshape(-1, 3)
        facets = np.asarray(facets, dtype=int).reshape(-1, 3)
        a, b, c = (vertices[facets[:, k]] for k in range(3))
        normals = np.cross(b - a, c - a)
        lengths = np.linalg.norm(normals, axis=1)
        degenerate = lengths < 1e-15
        normals[~degenerate] /= lengths[~degenerate, None]
        if degenerate.any():
            if fallback_normals is None:
                # Point away from the vertex centroid
                fallback_normals = (a + b + c) / 3.0 - vertices.mean(axis=0)
                fallback_normals /= np.maximum(np.linalg.norm(fallback_normals, axis=1), 1e-15)[:, None]
            normals[degenerate] = np.asarray(fallback_normals, dtype=float)[degenerate]
        return cls(vertices, facets, normals)

    @property
    def facet_count(self) -> int:
        return len(self.facets)

    def triangles(self, facets: Optional[Sequence[int]] = None) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        chosen = self.facets if facets is None else self.facets[np.asarray(facets, dtype=int)]
        return self.vertices[chosen[:, 0]], self.vertices[chosen[:, 1]], self.vertices[chosen[:, 2]]

    def facet_centers(self) -> np.ndarray:
        return self.vertices[self.facets].mean(axis=1)

    def volume(self) -> float:
        """Signed enclosed volume; positive for outward-wound closed meshes."""
        a, b, c = self.triangles()
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted (i, j) rows."""
        pairs = np.concatenate([self.facets[:, [0, 1]], self.facets[:, [1, 2]], self.facets[:, [2, 0]]])
        return np.unique(np.sort(pairs, axis=1), axis=0)

    def euler_characteristic(self) -> int:
        used = len(np.unique(self.facets))
        return used - len(self.edges()) + self.facet_count

    def facet_adjacency(self) -> List[List[int]]:
        """For every facet, the facets sharing one of its edges (ascending)."""
        owners: Dict[Tuple[int, int], List[int]] = {}
        for index, (i, j, k) in enumerate(self.facets.tolist()):
            for edge in ((i, j), (j, k), (k, i)):
                owners.setdefault((min(edge), max(edge)), []).append(index)
        neighbours: List[Set[int]] = [set() for _ in range(self.facet_count)]
        for sharing in owners.values():
            for f in sharing:
                neighbours[f].update(g for g in sharing if g != f)
        return [sorted(n) for n in neighbours]

    def vertex_adjacency(self) -> List[Set[int]]:
        neighbours: List[Set[int]] = [set() for _ in range(len(self.vertices))]
        for i, j in self.edges().tolist():
            neighbours[i].add(j)
            neighbours[j].add(i)
        return neighbours

    def bounding_sphere(self) -> Tuple[np.ndarray, float]:
        """Centre and radius of a sphere enclosing all referenced vertices."""
        used = self.vertices[np.unique(self.facets)] if self.facet_count else self.vertices
        center = (used.min(axis=0) + used.max(axis=0)) / 2.0
        return center, float(np.linalg.norm(used - center, axis=1).max())

    def to_obj(self, name: str = "mesh", vertex_offset: int = 0) -> str:
        lines = [f"o {name}"]
        lines += [f"v {x:.6f} {y:.6f} {z:.6f}" for x, y, z in self.vertices]
        base = 1 + vertex_offset
        lines += [f"f {i + base} {j + base} {k + base}" for i, j, k in self.facets]
        return "\n".join(lines) + "\n"


@dataclass(eq=False)
class Polyhedron:
    """A node's boundary: unit-sphere hull topology carried onto the black sample positions.

    The mesh is not necessarily convex.
    """

    mesh: TriangleMesh
    owner_node: int

    @classmethod
    def from_hull(cls, hull: TriangleMesh, positions, owner_node: int) -> "Polyhedron":
        mesh = TriangleMesh.from_facets(positions, hull.facets.copy(), fallback_normals=hull.facet_normals)
        return cls(mesh, owner_node)


@dataclass(eq=False)
class DirectionSet:
    dirs: np.ndarray
    count: int

    def __len__(self) -> int:
        return self.count


@lru_cache(maxsize=16)
def _fibonacci_directions(count: int) -> np.ndarray:
    i = np.arange(count, dtype=float)
    z = 1.0 - (2.0 * i + 1.0) / count
    radius = np.sqrt(1.0 - z * z)
    theta = GOLDEN_ANGLE * i
    dirs = np.stack([radius * np.cos(theta), radius * np.sin(theta), z], axis=1)
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    dirs.setflags(write=False)
    return dirs


def sample_unit_directions(count: int) -> DirectionSet:
    """Deterministic Fibonacci-sphere directions."""
    if count < 4:
        raise GeometryError(f"at least 4 directions are required, got {count}")
    return DirectionSet(_fibonacci_directions(int(count)), int(count))


@lru_cache(maxsize=16)
def _direction_hull_adjacency(count: int) -> Tuple[frozenset, ...]:
    hull = convex_hull_mesh(_fibonacci_directions(count))
    return tuple(frozenset(n) for n in hull.vertex_adjacency())


def direction_adjacency(dirs: DirectionSet) -> Tuple[frozenset, ...]:
    """Neighbour indices of every direction: the edges of the hull over all directions."""
    return _direction_hull_adjacency(dirs.count)


def project_to_unit_sphere(c, p) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    offset = np.asarray(p, dtype=float) - c
    length = float(np.linalg.norm(offset))
    if length == 0.0:
        raise GeometryError("cannot project the sphere centre onto the sphere")
    return c + offset / length


def project_many(c, points) -> np.ndarray:
    """Row-wise project_to_unit_sphere."""
    c = np.asarray(c, dtype=float)
    offsets = np.atleast_2d(points) - c
    lengths = np.linalg.norm(offsets, axis=1)
    if np.any(lengths == 0.0):
        raise GeometryError("cannot project the sphere centre onto the sphere")
    return c + offsets / lengths[:, None]


def _oriented_hull(points: np.ndarray) -> TriangleMesh:
    hull = ConvexHull(points)
    facets = hull.simplices.copy()
    normals = hull.equations[:, :3]
    a, b, c = points[facets[:, 0]], points[facets[:, 1]], points[facets[:, 2]]
    # Qhull winding is arbitrary; align it with the outward plane normal
    flipped = np.einsum("ij,ij->i", np.cross(b - a, c - a), normals) < 0
    facets[flipped] = facets[flipped][:, [0, 2, 1]]
    return TriangleMesh(points, facets, normals / np.linalg.norm(normals, axis=1)[:, None])


def convex_hull_mesh(points) -> TriangleMesh:
    """Triangulated convex hull with outward normals; vertices are the input points.

    A degenerate (flat or collinear) set is retried once with a deterministic
    1e-8 jitter per point index before giving up.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(points) < 4:
        raise GeometryError(f"convex hull needs at least 4 points, got {len(points)}")
    try:
        return _oriented_hull(points)
    except QhullError:
        logger.debug(f"Degenerate hull input ({len(points)} points), retrying with jitter")
    jitter = np.random.default_rng(0).uniform(-1.0, 1.0, size=points.shape) * HULL_JITTER
    try:
        mesh = _oriented_hull(points + jitter)
    except QhullError as e:
        raise GeometryError(f"degenerate point set: {str(e).splitlines()[0] if str(e) else 'qhull failure'}")
    return TriangleMesh(points, mesh.facets, mesh.facet_normals)


def _moller_trumbore(origins: np.ndarray, dirs: np.ndarray, a, b, c):
    """Parametric hits of R rays against F triangles: (t, inside) arrays of shape (R, F)."""
    e1 = b - a
    e2 = c - a
    p = np.cross(dirs[:, None, :], e2[None, :, :])
    det = np.einsum("fj,rfj->rf", e1, p)
    valid = np.abs(det) > RAY_EPSILON
    inv = np.where(valid, 1.0 / np.where(valid, det, 1.0), 0.0)
    s = origins[:, None, :] - a[None, :, :]
    u = np.einsum("rfj,rfj->rf", s, p) * inv
    q = np.cross(s, e1[None, :, :])
    v = np.einsum("rj,rfj->rf", dirs, q) * inv
    t = np.einsum("fj,rfj->rf", e2, q) * inv
    inside = valid & (u >= -RAY_EPSILON) & (v >= -RAY_EPSILON) & (u + v <= 1.0 + RAY_EPSILON)
    return t, inside


def rays_mesh_intersect(origins, dirs, max_dist: float, mesh: TriangleMesh) -> Tuple[np.ndarray, np.ndarray]:
    """Nearest facet hit per ray with t in (0, max_dist].

    Returns (t, facet): t is inf and facet -1 where a ray misses. Equal distances
    resolve to the lowest facet index, so an edge hit is counted once.
    """
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    origins = np.broadcast_to(np.asarray(origins, dtype=float), dirs.shape)
    if mesh.facet_count == 0:
        return np.full(len(dirs), np.inf), np.full(len(dirs), -1)
    a, b, c = mesh.triangles()
    t, inside = _moller_trumbore(origins, dirs, a, b, c)
    hit = inside & (t > RAY_EPSILON) & (t <= max_dist)
    t = np.where(hit, t, np.inf)
    facet = np.argmin(t, axis=1)
    nearest = t[np.arange(len(dirs)), facet]
    return nearest, np.where(np.isinf(nearest), -1, facet)


def ray_mesh_intersect(origin, direction, max_dist: float, mesh: TriangleMesh) -> Optional[Tuple[float, int]]:
    direction = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(direction) - 1.0) > RAY_EPSILON:
        raise GeometryError("ray direction must be a unit vector")
    t, facet = rays_mesh_intersect(origin, direction[None, :], max_dist, mesh)
    if facet[0] < 0:
        return None
    return float(t[0]), int(facet[0])


def line_facet_intersections(
    point, direction, mesh: TriangleMesh, facets: Sequence[int]
) -> Tuple[np.ndarray, np.ndarray]:
    """Signed parameters s where point + s*direction crosses each listed facet, and a hit mask."""
    a, b, c = mesh.triangles(facets)
    origin = np.asarray(point, dtype=float)[None, :]
    t, inside = _moller_trumbore(origin, np.asarray(direction, dtype=float)[None, :], a, b, c)
    return t[0], inside[0]


def _segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.linalg.norm(points - a, axis=1)
    s = np.clip((points - a) @ ab / denom, 0.0, 1.0)
    return np.linalg.norm(points - (a + s[:, None] * ab), axis=1)


def point_triangle_distance(points, a, b, c) -> np.ndarray:
    """Euclidean distance from each point to the closed triangle abc."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    a, b, c = (np.asarray(x, dtype=float) for x in (a, b, c))
    edge_distance = np.minimum.reduce(
        [_segment_distance(points, a, b), _segment_distance(points, b, c), _segment_distance(points, c, a)]
    )
    normal = np.cross(b - a, c - a)
    length = np.linalg.norm(normal)
    if length < 1e-15:
        return edge_distance
    normal = normal / length
    plane = (points - a) @ normal
    foot = points - plane[:, None] * normal
    # Barycentric sign test on the foot of the perpendicular
    s1 = np.cross(b - a, foot - a) @ normal
    s2 = np.cross(c - b, foot - b) @ normal
    s3 = np.cross(a - c, foot - c) @ normal
    inside = (s1 >= 0) & (s2 >= 0) & (s3 >= 0)
    return np.where(inside, np.abs(plane), edge_distance)


def write_obj(meshes: Iterable[Tuple[str, TriangleMesh]], path: str):
    """Write named meshes into one OBJ file, one object block each."""
    offset = 0
    with open(path, "w", encoding="utf-8") as f:
        for name, mesh in meshes:
            f.write(mesh.to_obj(name, vertex_offset=offset))
            offset += len(mesh.vertices)


class PolyhedronRegistry:
    """Every accepted node's boundary mesh, queryable by ray.

    Entries keep a bounding sphere so rays that cannot reach a mesh skip the
    triangle test.
    """

    def __init__(self):
        self._owners: List[int] = []
        self._meshes: List[TriangleMesh] = []
        self._centers: List[np.ndarray] = []
        self._radii: List[float] = []

    def __len__(self) -> int:
        return len(self._owners)

    def __contains__(self, owner_node: int) -> bool:
        return owner_node in self._owners

    def __iter__(self):
        return (Polyhedron(mesh, owner) for owner, mesh in zip(self._owners, self._meshes))

    def push(self, polyhedron: Polyhedron):
        if polyhedron.owner_node in self._owners:
            raise GeometryError(f"node {polyhedron.owner_node} already has a polyhedron")
        center, radius = polyhedron.mesh.bounding_sphere()
        self._owners.append(polyhedron.owner_node)
        self._meshes.append(polyhedron.mesh)
        self._centers.append(center)
        self._radii.append(radius)

    def get(self, owner_node: int) -> Polyhedron:
        return Polyhedron(self._meshes[self._owners.index(owner_node)], owner_node)

    def raycast_many(self, origin, dirs, max_dist: float) -> Tuple[np.ndarray, np.ndarray]:
        """Nearest registry hit per ray: (t, owner node), inf and -1 on a miss.

        Equal distances keep the earlier registered polyhedron.
        """
        dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
        origin = np.asarray(origin, dtype=float)
        best_t = np.full(len(dirs), np.inf)
        best_owner = np.full(len(dirs), -1)
        if not self._owners:
            return best_t, best_owner

        centers = np.asarray(self._centers)
        radii = np.asarray(self._radii)
        offsets = centers - origin
        along = np.clip(dirs @ offsets.T, 0.0, max_dist)
        closest = origin[None, None, :] + along[:, :, None] * dirs[:, None, :]
        reachable = np.linalg.norm(closest - centers[None, :, :], axis=2) <= radii[None, :] + RAY_EPSILON

        for entry in np.flatnonzero(reachable.any(axis=0)):
            rays = np.flatnonzero(reachable[:, entry])
            t, _ = rays_mesh_intersect(origin, dirs[rays], max_dist, self._meshes[entry])
            closer = t < best_t[rays]
            best_t[rays[closer]] = t[closer]
            best_owner[rays[closer]] = self._owners[entry]
        return best_t, best_owner

    def raycast(self, origin, direction, max_dist: float) -> Optional[Tuple[float, int]]:
        t, owner = self.raycast_many(origin, np.asarray(direction, dtype=float)[None, :], max_dist)
        if owner[0] < 0:
            return None
        return float(t[0]), int(owner[0])
