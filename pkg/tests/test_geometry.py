"""
Tests for the geometric primitives: direction sampling, projection, convex
hulls and ray–mesh intersection.
"""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from skelgraph.errors import GeometryError
from skelgraph.geometry import (
    Polyhedron,
    PolyhedronRegistry,
    TriangleMesh,
    convex_hull_mesh,
    direction_adjacency,
    point_triangle_distance,
    project_many,
    project_to_unit_sphere,
    ray_mesh_intersect,
    rays_mesh_intersect,
    sample_unit_directions,
    write_obj,
)

coordinate = st.floats(min_value=-50.0, max_value=50.0, allow_nan=False, allow_infinity=False)
point = st.tuples(coordinate, coordinate, coordinate)

CUBE = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=float)
UNIT_CUBE = (CUBE + 1.0) / 2.0


def brute_force_hit(origin, direction, max_dist, mesh):
    """Reference ray–mesh test: every triangle on its own, in plain Python."""
    best = None
    for index, (i, j, k) in enumerate(mesh.facets):
        a, b, c = mesh.vertices[i], mesh.vertices[j], mesh.vertices[k]
        e1, e2 = b - a, c - a
        p = np.cross(direction, e2)
        det = e1 @ p
        if abs(det) <= 1e-9:
            continue
        s = origin - a
        u = (s @ p) / det
        q = np.cross(s, e1)
        v = (direction @ q) / det
        t = (e2 @ q) / det
        if u < -1e-9 or v < -1e-9 or u + v > 1 + 1e-9 or t <= 1e-9 or t > max_dist:
            continue
        if best is None or t < best[0]:
            best = (t, index)
    return best


class TestDirectionSampling:
    def test_minimum_set(self):
        """Four directions are unit length and pairwise distinct."""
        dirs = sample_unit_directions(4)
        assert dirs.count == 4
        assert np.allclose(np.linalg.norm(dirs.dirs, axis=1), 1.0, atol=1e-9)
        for i in range(4):
            for j in range(i + 1, 4):
                assert np.linalg.norm(dirs.dirs[i] - dirs.dirs[j]) > 1e-6

    def test_too_few_directions(self):
        """Fewer than four directions cannot span a hull."""
        with pytest.raises(GeometryError):
            sample_unit_directions(3)

    def test_deterministic(self):
        """The same count gives the same set."""
        assert np.array_equal(sample_unit_directions(256).dirs, sample_unit_directions(256).dirs)

    def test_coverage(self):
        """Every random direction is within 15 degrees of some direction."""
        dirs = sample_unit_directions(256).dirs
        queries = np.random.default_rng(0).normal(size=(10_000, 3))
        queries /= np.linalg.norm(queries, axis=1)[:, None]
        gaps = np.degrees(np.arccos(np.clip((queries @ dirs.T).max(axis=1), -1.0, 1.0)))
        assert gaps.max() < 15.0

    def test_spacing_more_even_than_random(self):
        """Nearest-neighbour spacing varies less than for uniform random directions."""
        dirs = sample_unit_directions(256).dirs
        rng_dirs = np.random.default_rng(1).normal(size=(256, 3))
        rng_dirs /= np.linalg.norm(rng_dirs, axis=1)[:, None]

        def nearest_angles(d):
            cos = d @ d.T
            np.fill_diagonal(cos, -1.0)
            return np.arccos(np.clip(cos.max(axis=1), -1.0, 1.0))

        assert nearest_angles(dirs).var() < nearest_angles(rng_dirs).var()

    def test_adjacency_is_symmetric(self):
        """Direction neighbourhoods come from hull edges, so they are symmetric."""
        dirs = sample_unit_directions(128)
        adjacency = direction_adjacency(dirs)
        assert len(adjacency) == 128
        for i, neighbours in enumerate(adjacency):
            assert len(neighbours) >= 3
            for j in neighbours:
                assert i in adjacency[j]


class TestProjection:
    def test_axis_case(self):
        """A point on the x axis lands on (1, 0, 0)."""
        assert np.allclose(project_to_unit_sphere((0, 0, 0), (2, 0, 0)), (1, 0, 0))

    def test_offset_center(self):
        """Projection is relative to the centre."""
        assert np.allclose(project_to_unit_sphere((1, 1, 1), (1, 1, 4)), (1, 1, 2))

    def test_zero_length(self):
        """The centre itself has no projection."""
        with pytest.raises(GeometryError):
            project_to_unit_sphere((1, 2, 3), (1, 2, 3))

    @given(point, point)
    def test_unit_distance_and_idempotence(self, c, p):
        """Projected points sit at distance 1 and project onto themselves."""
        c, p = np.array(c), np.array(p)
        if np.linalg.norm(p - c) < 1e-6:
            return
        q = project_to_unit_sphere(c, p)
        assert abs(np.linalg.norm(q - c) - 1.0) <= 1e-12 * max(1.0, np.abs(c).max())
        assert np.allclose(project_to_unit_sphere(c, q), q, atol=1e-12 * max(1.0, np.abs(c).max()))

    def test_many_points(self):
        """Batched projection keeps every point at unit distance."""
        rng = np.random.default_rng(3)
        c = rng.uniform(-10, 10, size=3)
        p = rng.uniform(-10, 10, size=(1_000_000, 3))
        q = project_many(c, p)
        assert np.abs(np.linalg.norm(q - c, axis=1) - 1.0).max() <= 1e-12


class TestConvexHull:
    def test_octahedron(self):
        """Six axis points make eight triangles."""
        points = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=float)
        mesh = convex_hull_mesh(points)
        assert mesh.facet_count == 8
        assert mesh.euler_characteristic() == 2

    def test_cube_volume(self):
        """Eight cube corners triangulate into 12 facets enclosing volume 8."""
        mesh = convex_hull_mesh(CUBE)
        assert mesh.facet_count == 12
        assert mesh.volume() == pytest.approx(8.0, abs=1e-9)

    def test_normals_point_outward(self):
        """Every facet normal points away from the centroid."""
        mesh = convex_hull_mesh(CUBE * 3 + 5)
        centroid = mesh.vertices.mean(axis=0)
        assert np.all(np.einsum("ij,ij->i", mesh.facet_centers() - centroid, mesh.facet_normals) > 0)
        assert np.allclose(np.linalg.norm(mesh.facet_normals, axis=1), 1.0)

    def test_winding_matches_normals(self):
        """Recomputing normals from the winding reproduces the stored ones."""
        mesh = convex_hull_mesh(np.random.default_rng(5).normal(size=(40, 3)))
        rewound = TriangleMesh.from_facets(mesh.vertices, mesh.facets)
        assert np.allclose(rewound.facet_normals, mesh.facet_normals, atol=1e-9)

    def test_sphere_points(self):
        """Points on a sphere are all hull vertices; the hull is smaller than the sphere."""
        points = np.random.default_rng(7).normal(size=(100, 3))
        points /= np.linalg.norm(points, axis=1)[:, None]
        mesh = convex_hull_mesh(points)
        assert len(np.unique(mesh.facets)) == 100
        assert 0 < mesh.volume() < 4.0 / 3.0 * math.pi

    def test_too_few_points(self):
        """Three points never make a hull."""
        with pytest.raises(GeometryError):
            convex_hull_mesh(np.eye(3))

    def test_random_sets_contain_their_points(self):
        """Containment and Euler checks on many random point sets."""
        rng = np.random.default_rng(11)
        for _ in range(1000):
            points = rng.uniform(-1, 1, size=(rng.integers(4, 30), 3))
            mesh = convex_hull_mesh(points)
            planes = np.einsum("ij,ij->i", mesh.facet_normals, mesh.vertices[mesh.facets[:, 0]])
            offsets = mesh.facet_normals @ points.T - planes[:, None]
            assert offsets.max() <= 1e-9
            assert mesh.euler_characteristic() == 2

    def test_mapped_polyhedron_keeps_topology(self):
        """Carrying a unit-sphere hull onto scaled positions keeps the facet triples."""
        dirs = sample_unit_directions(64).dirs
        hull = convex_hull_mesh(dirs)
        distances = np.random.default_rng(2).uniform(0.5, 3.0, size=64)
        poly = Polyhedron.from_hull(hull, dirs * distances[:, None], owner_node=4)
        assert poly.owner_node == 4
        assert np.array_equal(poly.mesh.facets, hull.facets)
        assert np.allclose(np.linalg.norm(poly.mesh.facet_normals, axis=1), 1.0)


class TestMeshQueries:
    def test_facet_adjacency_on_closed_mesh(self):
        """On a closed triangulated surface every facet has three edge neighbours."""
        mesh = convex_hull_mesh(sample_unit_directions(32).dirs)
        assert all(len(n) == 3 for n in mesh.facet_adjacency())

    def test_point_triangle_distance(self):
        """Distances to the face interior, an edge and a vertex."""
        a, b, c = np.array([0.0, 0, 0]), np.array([1.0, 0, 0]), np.array([0.0, 1, 0])
        points = np.array([[0.2, 0.2, 2.0], [0.5, -1.0, 0.0], [-1.0, -1.0, 0.0]])
        assert np.allclose(point_triangle_distance(points, a, b, c), [2.0, 1.0, math.sqrt(2.0)])

    def test_obj_export(self, temp_dir):
        """OBJ export writes one object block per mesh with shifted indices."""
        mesh = convex_hull_mesh(CUBE)
        write_obj([("a", mesh), ("b", mesh)], "meshes.obj")
        with open("meshes.obj") as f:
            lines = f.read().splitlines()
        assert [l for l in lines if l.startswith("o ")] == ["o a", "o b"]
        assert sum(l.startswith("v ") for l in lines) == 16
        faces = [l for l in lines if l.startswith("f ")]
        assert len(faces) == 24
        assert max(int(i) for f in faces for i in f.split()[1:]) == 16


class TestRayMesh:
    def test_axis_aligned_box(self):
        """A ray along +x from (-2, 0, 0) enters the unit cube at t = 1.5 through a -x facet."""
        mesh = convex_hull_mesh(UNIT_CUBE - 0.5)
        hit = ray_mesh_intersect((-2.0, 0.0, 0.0), (1.0, 0.0, 0.0), 10.0, mesh)
        assert hit is not None
        t, facet = hit
        assert t == pytest.approx(1.5)
        assert np.allclose(mesh.facet_normals[facet], (-1, 0, 0))

    def test_miss(self):
        """A ray passing beside the mesh reports no hit."""
        mesh = convex_hull_mesh(UNIT_CUBE)
        assert ray_mesh_intersect((-2.0, 5.0, 0.0), (1.0, 0.0, 0.0), 10.0, mesh) is None

    def test_beyond_max_dist(self):
        """Hits further than max_dist are ignored."""
        mesh = convex_hull_mesh(UNIT_CUBE + np.array([3.0, -0.5, -0.5]))
        assert ray_mesh_intersect((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), 2.5, mesh) is None
        assert ray_mesh_intersect((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), 3.5, mesh)[0] == pytest.approx(3.0)

    def test_non_unit_direction(self):
        """Directions must be unit vectors."""
        with pytest.raises(GeometryError):
            ray_mesh_intersect((0, 0, 0), (2.0, 0, 0), 1.0, convex_hull_mesh(CUBE))

    def test_against_exhaustive_oracle(self):
        """Batched hits agree with the per-triangle reference on 1000 random rays."""
        rng = np.random.default_rng(13)
        mesh = convex_hull_mesh(rng.normal(size=(30, 3)))
        origins = rng.uniform(-3, 3, size=(1000, 3))
        dirs = rng.normal(size=(1000, 3))
        dirs /= np.linalg.norm(dirs, axis=1)[:, None]
        t, facets = rays_mesh_intersect(origins, dirs, 4.0, mesh)
        mismatches = 0
        for i in range(1000):
            expected = brute_force_hit(origins[i], dirs[i], 4.0, mesh)
            if expected is None:
                mismatches += int(facets[i] != -1)
            else:
                mismatches += int(facets[i] == -1 or abs(t[i] - expected[0]) > 1e-9)
        assert mismatches == 0


class TestRegistry:
    def test_nearest_owner(self):
        """The registry reports the nearest polyhedron and its owner."""
        registry = PolyhedronRegistry()
        registry.push(Polyhedron(convex_hull_mesh(UNIT_CUBE + [2.0, -0.5, -0.5]), 7))
        registry.push(Polyhedron(convex_hull_mesh(UNIT_CUBE + [5.0, -0.5, -0.5]), 9))
        assert len(registry) == 2 and 9 in registry
        t, owner = registry.raycast((0, 0, 0), (1.0, 0, 0), 10.0)
        assert owner == 7 and t == pytest.approx(2.0)
        assert registry.raycast((0, 0, 0), (-1.0, 0, 0), 10.0) is None

    def test_duplicate_owner_rejected(self):
        """One polyhedron per node."""
        registry = PolyhedronRegistry()
        registry.push(Polyhedron(convex_hull_mesh(CUBE), 0))
        with pytest.raises(GeometryError):
            registry.push(Polyhedron(convex_hull_mesh(CUBE), 0))

    def test_batched_matches_single(self):
        """raycast_many agrees with per-ray queries."""
        registry = PolyhedronRegistry()
        for owner, offset in enumerate(([3, 0, 0], [0, 3, 0], [-2, -2, 1])):
            registry.push(Polyhedron(convex_hull_mesh(UNIT_CUBE + offset), owner))
        dirs = sample_unit_directions(64).dirs
        t, owners = registry.raycast_many((0.5, 0.5, 0.5), dirs, 6.0)
        for i, d in enumerate(dirs):
            single = registry.raycast((0.5, 0.5, 0.5), d, 6.0)
            if single is None:
                assert owners[i] == -1
            else:
                assert owners[i] == single[1] and t[i] == pytest.approx(single[0])
