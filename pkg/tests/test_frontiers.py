"""
Tests for node construction pieces: ray sampling, polyhedron and frontier
extraction, frontier splitting, blind frontiers, frontier verification and
cycle formation.
"""

import numpy as np
import pytest

from conftest import chamber, wall_points
from skelgraph.config import GenerationParams
from skelgraph.errors import GeometryError
from skelgraph.geometry import (
    Polyhedron,
    PolyhedronRegistry,
    TriangleMesh,
    convex_hull_mesh,
    direction_adjacency,
    point_triangle_distance,
    sample_unit_directions,
)
from skelgraph.graph import NODE
from skelgraph.skeleton import (
    Frontier,
    Node,
    SkeletonGenerator,
    VertexKind,
    VertexSample,
    build_poly_and_frontiers,
    detect_blind_frontiers,
    generate_vertices,
    make_frontier,
    split_frontier,
    verify_frontier,
)

UNIT_CUBE = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)


def samples_at(dirs, radii, white_mask=None):
    """Black/white samples around the origin: direction i at radii[i], white where white_mask is set."""
    white_mask = np.zeros(dirs.count, dtype=bool) if white_mask is None else white_mask
    black, white = [], []
    for i, d in enumerate(dirs.dirs):
        sample = VertexSample(d * radii[i], VertexKind.WHITE if white_mask[i] else VertexKind.BLACK, d.copy(), i)
        (white if white_mask[i] else black).append(sample)
    return black, white


def distance_to_facets(point, mesh, facets):
    return min(float(point_triangle_distance(point, *mesh.vertices[mesh.facets[f]])[0]) for f in facets)


def l_shaped_mesh():
    """Two flat 2x2 patches meeting at a right angle along the y axis: +z facing and +x facing."""
    index = {}
    vertices = []

    def vertex(p):
        if p not in index:
            index[p] = len(vertices)
            vertices.append(p)
        return index[p]

    facets, normals = [], []
    for a in range(2):
        for b in range(2):
            # floor patch in z = 0, x from 0 to 2
            v00, v10 = vertex((a, b, 0)), vertex((a + 1, b, 0))
            v01, v11 = vertex((a, b + 1, 0)), vertex((a + 1, b + 1, 0))
            facets += [(v00, v10, v11), (v00, v11, v01)]
            normals += [(0, 0, 1)] * 2
    for a in range(2):
        for b in range(2):
            # wall patch in x = 0, z from 0 down to -2
            v00, v10 = vertex((0, b, -a)), vertex((0, b, -a - 1))
            v01, v11 = vertex((0, b + 1, -a)), vertex((0, b + 1, -a - 1))
            facets += [(v00, v10, v11), (v00, v11, v01)]
            normals += [(1, 0, 0)] * 2
    return TriangleMesh(np.array(vertices, dtype=float), np.array(facets), np.array(normals, dtype=float))


class TestBuildPolyAndFrontiers:
    def test_hemisphere_frontier_facets(self):
        """Frontier facets are exactly the hull facets whose three vertices border white directions."""
        dirs = sample_unit_directions(128)
        white_mask = dirs.dirs[:, 2] > 0
        black, white = samples_at(dirs, np.where(white_mask, 5.0, 1.0), white_mask)
        polyhedron, frontiers = build_poly_and_frontiers(0, np.zeros(3), black, white, dirs, GenerationParams())

        neighbours = direction_adjacency(dirs)
        white_dirs = set(np.flatnonzero(white_mask).tolist())
        grouped = {i for i, b in enumerate(black) if neighbours[b.source_direction] & white_dirs}
        hull = convex_hull_mesh(np.array([b.projected_position for b in black]))
        expected = {f for f, tri in enumerate(hull.facets.tolist()) if set(tri) <= grouped}

        found = [f for frontier in frontiers for f in frontier.facets]
        assert expected
        assert len(found) == len(set(found))
        assert set(found) == expected
        assert not any(f.blind for f in frontiers)
        assert polyhedron.owner_node == 0
        assert len(polyhedron.mesh.vertices) == len(black)

    def test_lid_frontier_faces_the_open_side(self):
        """The facets capping the open hemisphere form a frontier looking up."""
        dirs = sample_unit_directions(128)
        white_mask = dirs.dirs[:, 2] > 0
        black, white = samples_at(dirs, np.where(white_mask, 5.0, 1.0), white_mask)
        _, frontiers = build_poly_and_frontiers(0, np.zeros(3), black, white, dirs, GenerationParams())
        assert any(f.normal[2] > 0.9 for f in frontiers)

    def test_sorted_by_size_and_centres_on_facets(self):
        """Frontiers come largest first and each centre lies on one of its own facets."""
        dirs = sample_unit_directions(128)
        white_mask = dirs.dirs[:, 2] > 0
        black, white = samples_at(dirs, np.where(white_mask, 5.0, 1.0), white_mask)
        polyhedron, frontiers = build_poly_and_frontiers(0, np.zeros(3), black, white, dirs, GenerationParams())
        counts = [f.facet_count for f in frontiers]
        assert counts == sorted(counts, reverse=True)
        for f in frontiers:
            assert distance_to_facets(f.center, polyhedron.mesh, f.facets) < 1e-6
            assert np.linalg.norm(f.normal) == pytest.approx(1.0)

    def test_all_black_sphere_has_no_frontiers(self):
        """A closed, evenly distant surround produces a polyhedron with nothing to explore."""
        dirs = sample_unit_directions(128)
        black, white = samples_at(dirs, np.full(128, 2.0))
        polyhedron, frontiers = build_poly_and_frontiers(3, np.zeros(3), black, white, dirs, GenerationParams())
        assert frontiers == []
        assert polyhedron.mesh.volume() > 0

    def test_too_few_black_samples(self):
        """Three black samples cannot span a polyhedron."""
        dirs = sample_unit_directions(16)
        white_mask = np.arange(16) >= 3
        black, white = samples_at(dirs, np.full(16, 1.0), white_mask)
        with pytest.raises(GeometryError):
            build_poly_and_frontiers(0, np.zeros(3), black, white, dirs, GenerationParams())


class TestSplitFrontier:
    def test_right_angle_splits(self):
        """Two patches at 90 degrees separate at a 60 degree threshold."""
        mesh = l_shaped_mesh()
        whole = make_frontier(mesh, range(mesh.facet_count), parent_node=0)
        parts = split_frontier(whole, mesh, 60.0)
        assert sorted(p.facet_count for p in parts) == [8, 8]
        assert {tuple(np.round(p.normal, 6)) for p in parts} == {(0.0, 0.0, 1.0), (1.0, 0.0, 0.0)}
        assert sorted(f for p in parts for f in p.facets) == list(range(16))

    def test_wide_threshold_keeps_one_part(self):
        """Above the angle between the patches nothing is split."""
        mesh = l_shaped_mesh()
        whole = make_frontier(mesh, range(mesh.facet_count), parent_node=0)
        parts = split_frontier(whole, mesh, 100.0)
        assert len(parts) == 1 and parts[0].facet_count == 16

    def test_parts_keep_parent_and_blind_flag(self):
        """Split parts inherit the parent node and the blind marker."""
        mesh = l_shaped_mesh()
        whole = make_frontier(mesh, range(mesh.facet_count), parent_node=5, blind=True)
        assert all(p.parent_node == 5 and p.blind for p in split_frontier(whole, mesh, 60.0))

    def test_flat_patch_centre(self):
        """A flat patch's centre is the mean of its facet centres, on the patch."""
        mesh = l_shaped_mesh()
        floor = make_frontier(mesh, range(8), parent_node=0)
        assert np.allclose(floor.center, (1.0, 1.0, 0.0))
        assert np.allclose(floor.normal, (0.0, 0.0, 1.0))


class TestBlindFrontiers:
    def spiked_polyhedron(self, spike=17, radius=4.0):
        dirs = sample_unit_directions(64)
        radii = np.ones(64)
        radii[spike] = radius
        hull = convex_hull_mesh(dirs.dirs)
        return Polyhedron.from_hull(hull, dirs.dirs * radii[:, None], owner_node=2), spike

    def test_spike_facets_are_blind(self):
        """Facets around a depth jump are flagged; the rest of the surface is not."""
        polyhedron, spike = self.spiked_polyhedron()
        frontiers = detect_blind_frontiers(polyhedron, np.zeros(3), GenerationParams())
        expected = {f for f, tri in enumerate(polyhedron.mesh.facets.tolist()) if spike in tri}
        assert {f for frontier in frontiers for f in frontier.facets} == expected
        assert all(f.blind and f.parent_node == 2 for f in frontiers)

    def test_spike_is_one_unsplit_frontier(self):
        """The facets around one depth jump stay a single frontier facing out along the spike."""
        polyhedron, spike = self.spiked_polyhedron()
        frontiers = detect_blind_frontiers(polyhedron, np.zeros(3), GenerationParams(split_angle_threshold=10.0))
        assert len(frontiers) == 1
        assert float(frontiers[0].normal @ sample_unit_directions(64).dirs[spike]) > 0.0

    def test_small_jump_is_ignored(self):
        """A depth ratio under the threshold is not blind."""
        polyhedron, _ = self.spiked_polyhedron(radius=1.5)
        assert detect_blind_frontiers(polyhedron, np.zeros(3), GenerationParams()) == []

    def test_claimed_facets_are_excluded(self):
        """Facets already in a frontier are not reported again."""
        polyhedron, spike = self.spiked_polyhedron()
        claimed = [f for f, tri in enumerate(polyhedron.mesh.facets.tolist()) if spike in tri]
        assert detect_blind_frontiers(polyhedron, np.zeros(3), GenerationParams(), exclude=claimed) == []


class TestGenerateVertices:
    def test_open_space_is_all_white(self):
        """With nothing within range every sample is white, at full ray length."""
        dirs = sample_unit_directions(64)
        black, white = generate_vertices(np.zeros(3), dirs, chamber(), PolyhedronRegistry(), GenerationParams())
        assert black == [] and len(white) == 64
        for w in white:
            assert np.allclose(w.position, 5.0 * dirs.dirs[w.source_direction])
            assert np.allclose(w.projected_position, dirs.dirs[w.source_direction])

    def test_wall_splits_black_and_white(self):
        """Rays towards a wall stop on the last free step before it; rays away from it run free."""
        dirs = sample_unit_directions(128)
        cloud = chamber(extra_points=wall_points(1.0))
        black, white = generate_vertices(np.zeros(3), dirs, cloud, PolyhedronRegistry(), GenerationParams())
        black_dirs = {b.source_direction for b in black}
        for i, d in enumerate(dirs.dirs):
            if d[0] > 0.5:
                assert i in black_dirs
            elif d[0] < 0:
                assert i not in black_dirs
        for b in black:
            if dirs.dirs[b.source_direction][0] > 0.5:
                assert 0.55 - 1e-9 <= b.position[0] <= 0.71
                assert b.detected_polyhedron is None
            assert cloud.is_free(b.position)
        assert len(black) + len(white) == 128

    def test_existing_polyhedron_is_detected(self):
        """Rays ending on a registered polyhedron remember its owner."""
        registry = PolyhedronRegistry()
        registry.push(Polyhedron(convex_hull_mesh(UNIT_CUBE + [2.0, -0.5, -0.5]), 7))
        dirs = sample_unit_directions(256)
        black, _ = generate_vertices(np.zeros(3), dirs, chamber(), registry, GenerationParams())
        assert black
        assert all(b.detected_polyhedron == 7 for b in black)
        assert np.allclose([b.position[0] for b in black], 2.0)


class TestVerifyFrontier:
    def frontier(self, center=(0.0, 0.0, 0.0)):
        return Frontier(facets=[0], normal=np.array([1.0, 0.0, 0.0]), center=np.array(center), parent_node=0)

    def test_open_space(self):
        """A clear normal ray validates; the new node starts half way along it."""
        verdict = verify_frontier(self.frontier(), chamber(), PolyhedronRegistry(), GenerationParams())
        assert verdict.valid
        assert verdict.hit_distance == pytest.approx(5.0)
        assert np.allclose(verdict.initial_position, (2.5, 0.0, 0.0))

    def test_wall_too_close(self):
        """An obstacle within the clear distance invalidates the frontier."""
        cloud = chamber(extra_points=wall_points(0.8))
        verdict = verify_frontier(self.frontier(), cloud, PolyhedronRegistry(), GenerationParams())
        assert not verdict.valid
        assert verdict.hit_distance == pytest.approx(0.6)

    def test_polyhedron_too_close(self):
        """Explored space counts as an obstacle for verification."""
        registry = PolyhedronRegistry()
        registry.push(Polyhedron(convex_hull_mesh(UNIT_CUBE + [0.4, -0.5, -0.5]), 1))
        verdict = verify_frontier(self.frontier(), chamber(), registry, GenerationParams())
        assert not verdict.valid
        assert verdict.hit_distance == pytest.approx(0.4)

    def test_centre_in_collision(self):
        """A frontier centred inside an obstacle's clearance with no anchor to move towards is invalid."""
        cloud = chamber(extra_points=[[0.1, 0.0, 0.0]])
        assert not verify_frontier(self.frontier(), cloud, PolyhedronRegistry(), GenerationParams()).valid

    def anchored_frontier(self):
        f = self.frontier()
        f.anchor = np.array([-1.0, -1.0, 0.0])
        return f

    def test_blocked_centre_moves_towards_anchor(self):
        """A centre inside an obstacle's clearance verifies from the first free step towards its node."""
        cloud = chamber(extra_points=[[0.1, 0.25, 0.0]])
        verdict = verify_frontier(self.anchored_frontier(), cloud, PolyhedronRegistry(), GenerationParams())
        step = 0.15 / np.sqrt(2.0)
        assert verdict.valid
        assert np.allclose(verdict.start, (-step, -step, 0.0))
        assert cloud.is_free(verdict.start)
        assert verdict.hit_distance == pytest.approx(5.0)
        assert np.allclose(verdict.initial_position, (2.5 - step, -step, 0.0))

    def test_moved_centre_skips_own_polyhedron(self):
        """Once moved inside its own polyhedron the ray only counts the polyhedra beyond it."""
        cloud = chamber(extra_points=[[0.1, 0.25, 0.0]])
        registry = PolyhedronRegistry()
        registry.push(Polyhedron(convex_hull_mesh(UNIT_CUBE - 0.5), 0))
        registry.push(Polyhedron(convex_hull_mesh(UNIT_CUBE + [1.0, -0.5, -0.5]), 1))
        verdict = verify_frontier(self.anchored_frontier(), cloud, registry, GenerationParams())
        assert verdict.valid
        assert verdict.hit_distance == pytest.approx(1.0 + 0.15 / np.sqrt(2.0))

    def test_unmoved_centre_is_the_start(self):
        """A free centre is where the ray and the gate start."""
        verdict = verify_frontier(self.anchored_frontier(), chamber(), PolyhedronRegistry(), GenerationParams())
        assert np.allclose(verdict.start, (0.0, 0.0, 0.0))

    def test_clear_distance_threshold(self):
        """Raising the clear distance above the free run invalidates an otherwise clear frontier."""
        params = GenerationParams(max_ray_length=2.0, frontier_clear_distance=3.0)
        assert not verify_frontier(self.frontier(), chamber(), PolyhedronRegistry(), params).valid


class TestFormCycles:
    def generator_with_owner(self, cloud, ray_count=128):
        """Generator holding node 0: a unit cube spanning x in [1, 2] with frontiers on its -x and +y faces."""
        generator = SkeletonGenerator(cloud, GenerationParams(ray_count=ray_count))
        mesh = convex_hull_mesh(UNIT_CUBE + [1.0, -0.5, -0.5])
        facing_x = make_frontier(mesh, np.flatnonzero(mesh.facet_normals[:, 0] < -0.9), parent_node=0)
        facing_y = make_frontier(mesh, np.flatnonzero(mesh.facet_normals[:, 1] > 0.9), parent_node=0)
        center = np.array([1.5, 0.0, 0.0])
        owner = Node(0, center, center, Polyhedron(mesh, 0), [facing_x, facing_y], 0.5, 0)
        generator.nodes[0] = owner
        generator.graph.add_vertex(0, NODE, center)
        generator.registry.push(owner.polyhedron)
        generator._next_id = 1
        return generator

    def generator_with_nodes(self, cloud):
        """The owner generator plus node 1 at the origin, not yet registered."""
        generator = self.generator_with_owner(cloud)
        node = Node(1, np.zeros(3), np.zeros(3), Polyhedron(convex_hull_mesh(UNIT_CUBE - 0.5), 1), [], 0.5, 1)
        generator.nodes[1] = node
        generator.graph.add_vertex(1, NODE, node.center)
        generator._next_id = 2
        return generator, node

    def hits(self):
        on_x_face = [(1.0, 0.0, 0.0), (1.0, 0.2, 0.1), (1.0, -0.2, -0.1)]
        on_y_face = [(1.5, 0.5, 0.0)]
        return [
            VertexSample(np.array(p), VertexKind.BLACK, np.array(p) / np.linalg.norm(p), i, detected_polyhedron=0)
            for i, p in enumerate(on_x_face + on_y_face)
        ]

    def test_gate_on_best_frontier(self):
        """The owner frontier carrying most detected samples receives the cycle gate."""
        generator, node = self.generator_with_nodes(chamber())
        formed = generator.form_cycles(node, self.hits(), parent=None)
        assert len(formed) == 1
        gate, to_node, to_owner = formed[0]
        assert np.allclose(gate.position, (1.0, 0.0, 0.0))
        assert gate.linked_nodes == (1, 0)
        assert {to_node.endpoint_b, to_owner.endpoint_b} == {0, 1}
        assert generator.stats.cycle_gates == 1
        assert generator.graph.edge_count == 2

    def test_blocked_connection_is_revoked(self):
        """An obstacle between the gate and the new node cancels the cycle."""
        generator, node = self.generator_with_nodes(chamber(extra_points=[[0.5, 0.0, 0.0]]))
        assert generator.form_cycles(node, self.hits(), parent=None) == []
        assert generator.stats.revoked_cycles == 1
        assert generator.graph.edge_count == 0

    def test_parent_is_skipped(self):
        """The polyhedron the node grew from never gets a second gate."""
        generator, node = self.generator_with_nodes(chamber())
        assert generator.form_cycles(node, self.hits(), parent=0) == []
        assert generator.stats.revoked_cycles == 0

    def test_samples_off_every_frontier(self):
        """Detections that touch no owner frontier form nothing."""
        generator, node = self.generator_with_nodes(chamber())
        off = [VertexSample(np.array([2.0, 0.0, 0.0]), VertexKind.BLACK, np.array([1.0, 0.0, 0.0]), 0, 0)]
        assert generator.form_cycles(node, off, parent=None) == []

    def test_expansion_revokes_occluded_cycle(self):
        """A node whose rays reach the owner around an obstacle sitting on the owner's gate keeps no cycle."""
        generator = self.generator_with_owner(chamber(extra_points=[[1.2, 0.0, 0.0]]), ray_count=256)
        node = generator.expand_node(None, np.zeros(3))
        assert node is not None
        assert any(b.detected_polyhedron == 0 for b in node.black_samples)
        assert generator.stats.revoked_cycles == 1
        assert generator.stats.cycle_gates == 0
        assert generator.gates == {}
        assert generator.graph.edge_count == 0
        assert 1 in generator.registry
