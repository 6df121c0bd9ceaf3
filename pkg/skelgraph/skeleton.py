"""Skeleton graph generation by frontier-driven breadth-first node expansion.

A node is grown by casting rays from a centre: rays that hit the map or an
existing node's boundary leave black samples, rays that run to full length leave
white ones. The black samples span the node's polyhedron; facets bordering
white (unexplored) directions become frontiers, which are verified and expanded
in FIFO order. Gates sit on frontier centres between neighbouring nodes.
"""

import math
import time
import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Deque, Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from .config import GenerationParams
from .errors import GenerationError, GeometryError
from .geometry import (
    DirectionSet,
    Polyhedron,
    PolyhedronRegistry,
    TriangleMesh,
    convex_hull_mesh,
    direction_adjacency,
    line_facet_intersections,
    point_triangle_distance,
    project_many,
    ray_mesh_intersect,
    sample_unit_directions,
)
from .graph import GATE, NODE, SkeletonGraph
from .maps import CollisionMap

logger = logging.getLogger(__name__)

REGISTRY_RAY_OFFSET = 1e-6


class VertexKind(str, Enum):
    BLACK = "black"
    WHITE = "white"


@dataclass
class VertexSample:
    position: np.ndarray
    kind: VertexKind
    projected_position: np.ndarray
    source_direction: int
    detected_polyhedron: Optional[int] = None


@dataclass
class Frontier:
    """Contiguous facets of a parent polyhedron that border unexplored space.

    anchor is the parent node's centre; gate_position is set by verification,
    normally equal to center.
    """

    facets: List[int]
    normal: np.ndarray
    center: np.ndarray
    parent_node: int
    initial_position: Optional[np.ndarray] = None
    blind: bool = False
    index: int = -1
    anchor: Optional[np.ndarray] = None
    gate_position: Optional[np.ndarray] = None

    @property
    def facet_count(self) -> int:
        return len(self.facets)


@dataclass
class Node:
    id: int
    center: np.ndarray
    initial_center: np.ndarray
    polyhedron: Polyhedron
    frontiers: List[Frontier]
    size: float
    index: int
    parent: Optional[int] = None
    black_samples: List[VertexSample] = field(default_factory=list, repr=False)


@dataclass
class Gate:
    id: int
    position: np.ndarray
    linked_nodes: Tuple[int, int]


@dataclass
class Connection:
    endpoint_a: int
    endpoint_b: int
    length: float


@dataclass
class FrontierVerdict:
    valid: bool
    hit_distance: float
    initial_position: Optional[np.ndarray] = None
    start: Optional[np.ndarray] = None


@dataclass
class GenerationStats:
    expansions: int = 0
    rejected_nodes: int = 0
    invalid_frontiers: int = 0
    revoked_cycles: int = 0
    cycle_gates: int = 0
    generation_seconds: float = 0.0

    def to_dict(self) -> Dict[str, float]:
        return dict(self.__dict__)


@dataclass
class SkeletonResult:
    graph: SkeletonGraph
    nodes: Dict[int, Node]
    gates: Dict[int, Gate]
    connections: List[Connection]
    stats: GenerationStats
    params: GenerationParams

    @property
    def registry(self) -> PolyhedronRegistry:
        return self.graph.registry

    def frontier_meshes(self) -> List[Tuple[str, TriangleMesh]]:
        """One sub-mesh per frontier, for OBJ inspection."""
        meshes = []
        for node in self.nodes.values():
            mesh = node.polyhedron.mesh
            for frontier in node.frontiers:
                prefix = "blind" if frontier.blind else "frontier"
                facets = mesh.facets[frontier.facets]
                sub_mesh = TriangleMesh(mesh.vertices, facets, mesh.facet_normals[frontier.facets])
                meshes.append((f"{prefix}_{node.id}_{frontier.index}", sub_mesh))
        return meshes


def _unit(v: np.ndarray) -> Optional[np.ndarray]:
    length = float(np.linalg.norm(v))
    return v / length if length > 1e-12 else None


def make_frontier(mesh: TriangleMesh, facets: Sequence[int], parent_node: int, blind: bool = False) -> Frontier:
    """Frontier with the mean outward normal and a centre lying on one of its facets.

    The centre is the mean of the facet centres moved along the normal onto the
    nearest member facet; when that line misses every member facet the member
    facet centre nearest to the mean is used.
    """
    facets = sorted(int(f) for f in facets)
    normal = _unit(mesh.facet_normals[facets].mean(axis=0))
    if normal is None:
        normal = mesh.facet_normals[facets[0]].copy()
    centers = mesh.facet_centers()[facets]
    mean = centers.mean(axis=0)
    s, hit = line_facet_intersections(mean, normal, mesh, facets)
    if hit.any():
        candidates = np.flatnonzero(hit)
        best = candidates[np.argmin(np.abs(s[candidates]))]
        center = mean + s[best] * normal
    else:
        center = centers[np.argmin(np.linalg.norm(centers - mean, axis=1))].copy()
    return Frontier(facets=facets, normal=normal, center=center, parent_node=parent_node, blind=blind)


def split_frontier(
    frontier: Frontier, mesh: TriangleMesh, threshold: float, adjacency: Optional[List[List[int]]] = None
) -> List[Frontier]:
    """Region-grow the frontier's facets into parts of similar normal.

    Seeds are taken in ascending facet order; a neighbouring facet joins the
    growing part when its normal is within threshold degrees of the part's
    running mean normal.
    """
    adjacency = mesh.facet_adjacency() if adjacency is None else adjacency
    normals = mesh.facet_normals
    cos_limit = math.cos(math.radians(threshold))
    remaining = set(frontier.facets)
    parts = []
    while remaining:
        seed = min(remaining)
        remaining.discard(seed)
        part = [seed]
        normal_sum = normals[seed].copy()
        queue = deque([seed])
        while queue:
            current = queue.popleft()
            for neighbour in adjacency[current]:
                if neighbour not in remaining:
                    continue
                mean = _unit(normal_sum)
                if mean is not None and float(normals[neighbour] @ mean) < cos_limit:
                    continue
                remaining.discard(neighbour)
                part.append(neighbour)
                normal_sum += normals[neighbour]
                queue.append(neighbour)
        parts.append(part)
    if len(parts) > 1:
        logger.debug(f"Frontier of {frontier.facet_count} facets split into {len(parts)} parts")
    return [make_frontier(mesh, part, frontier.parent_node, blind=frontier.blind) for part in parts]


def _facet_components(facets: Sequence[int], adjacency: List[List[int]]) -> List[List[int]]:
    chosen = set(facets)
    g = nx.Graph()
    g.add_nodes_from(chosen)
    g.add_edges_from((f, n) for f in chosen for n in adjacency[f] if n in chosen)
    return sorted((sorted(c) for c in nx.connected_components(g)), key=lambda c: c[0])


def detect_blind_frontiers(
    polyhedron: Polyhedron,
    center,
    params: GenerationParams,
    exclude: Sequence[int] = (),
    adjacency: Optional[List[List[int]]] = None,
) -> List[Frontier]:
    """Facets whose vertex distances to the node centre differ by more than blind_distance_ratio.

    Flagged facets are clustered by edge adjacency, one frontier per cluster.
    Clusters are not split: the sides of an opening face each other and only
    their mean normal points through it. Facets listed in exclude already
    belong to a frontier.
    """
    mesh = polyhedron.mesh
    adjacency = mesh.facet_adjacency() if adjacency is None else adjacency
    distances = np.linalg.norm(mesh.vertices - np.asarray(center, dtype=float), axis=1)[mesh.facets]
    ratio = distances.max(axis=1) / np.maximum(distances.min(axis=1), 1e-12)
    flagged = set(np.flatnonzero(ratio > params.blind_distance_ratio).tolist()) - set(exclude)
    return [
        make_frontier(mesh, cluster, polyhedron.owner_node, blind=True)
        for cluster in _facet_components(sorted(flagged), adjacency)
    ]


def build_poly_and_frontiers(
    node_id: int,
    initial_center,
    black: List[VertexSample],
    white: List[VertexSample],
    dirs: DirectionSet,
    params: GenerationParams,
) -> Tuple[Polyhedron, List[Frontier]]:
    """Hull the projected black samples, map it onto their positions and find frontiers.

    Black samples whose direction neighbours include a white one are grouped;
    groups are the connected components of those samples along polyhedron
    edges. A group's frontier holds the facets with all three vertices in the
    group. The result is sorted by facet count, largest first.

    Raises:
        GeometryError: fewer than 4 black samples, or the hull cannot be built
    """
    if len(black) < 4:
        raise GeometryError(f"polyhedron needs at least 4 black samples, got {len(black)}")
    hull = convex_hull_mesh(np.array([b.projected_position for b in black]))
    polyhedron = Polyhedron.from_hull(hull, np.array([b.position for b in black]), node_id)
    mesh = polyhedron.mesh
    facet_adjacency = mesh.facet_adjacency()

    neighbours = direction_adjacency(dirs)
    white_dirs = {w.source_direction for w in white}
    grouped = {i for i, b in enumerate(black) if neighbours[b.source_direction] & white_dirs}

    frontiers: List[Frontier] = []
    claimed: set = set()
    if grouped:
        g = nx.Graph()
        g.add_nodes_from(grouped)
        g.add_edges_from((i, j) for i, j in mesh.edges().tolist() if i in grouped and j in grouped)
        groups = sorted((c for c in nx.connected_components(g)), key=min)
        for group in groups:
            facets = [f for f, tri in enumerate(mesh.facets.tolist()) if all(v in group for v in tri)]
            if not facets:
                continue
            claimed.update(facets)
            whole = make_frontier(mesh, facets, node_id)
            frontiers.extend(split_frontier(whole, mesh, params.split_angle_threshold, facet_adjacency))

    frontiers.extend(detect_blind_frontiers(polyhedron, initial_center, params, claimed, facet_adjacency))
    frontiers.sort(key=lambda f: -f.facet_count)
    return polyhedron, frontiers


def generate_vertices(
    initial_center, dirs: DirectionSet, map: CollisionMap, registry: PolyhedronRegistry, params: GenerationParams
) -> Tuple[List[VertexSample], List[VertexSample]]:
    """One sample per direction: black at the first map or polyhedron hit, white at full range.

    A map hit leaves its black sample on the last free march sample before the
    blocked one; a polyhedron hit leaves it on the polyhedron surface.

    Raises:
        MapError: initial_center is not free
    """
    center = np.asarray(initial_center, dtype=float)
    max_len = params.max_ray_length
    step = map.march_step
    map_t = map.raycast_many(center, dirs.dirs, max_len)
    poly_t, owners = registry.raycast_many(center, dirs.dirs, max_len)

    hit_t = np.minimum(map_t, poly_t)
    sample_t = np.where(map_t <= poly_t, np.maximum(map_t - step, step / 2.0), poly_t)
    positions = center + np.where(np.isinf(hit_t), max_len, sample_t)[:, None] * dirs.dirs
    projected = project_many(center, positions)

    black, white = [], []
    for i in range(dirs.count):
        if math.isinf(hit_t[i]):
            white.append(VertexSample(positions[i], VertexKind.WHITE, projected[i], i))
        else:
            detected = int(owners[i]) if poly_t[i] < map_t[i] else None
            black.append(VertexSample(positions[i], VertexKind.BLACK, projected[i], i, detected))
    return black, white


def verify_frontier(
    f: Frontier, map: CollisionMap, registry: PolyhedronRegistry, params: GenerationParams
) -> FrontierVerdict:
    """Cast one ray from the frontier centre along its normal.

    Valid when nothing (map or polyhedron) is hit within frontier_clear_distance;
    the new node then starts at the mid-point of the clear ray segment. A centre
    within clearance of the map is first moved towards the frontier's anchor
    (see pull_towards_anchor); the ray then starts inside the parent polyhedron,
    which only counts from where the ray leaves it.
    """
    start, moved = f.center, False
    if not map.is_free(start):
        start, moved = pull_towards_anchor(f, map), True
        if start is None:
            return FrontierVerdict(False, 0.0)
    max_len = params.max_ray_length
    distance = max_len
    map_hit = map.raycast_occupied(start, f.normal, max_len)
    if map_hit is not None:
        distance = min(distance, map_hit)

    skip = 0.0
    if moved and f.parent_node in registry:
        exit_hit = ray_mesh_intersect(start, f.normal, max_len, registry.get(f.parent_node).mesh)
        if exit_hit is not None:
            skip = exit_hit[0]
    if max_len - skip > REGISTRY_RAY_OFFSET:
        origin = start + (skip + REGISTRY_RAY_OFFSET) * f.normal
        poly_hit = registry.raycast(origin, f.normal, max_len - skip)
        if poly_hit is not None:
            distance = min(distance, poly_hit[0] + skip + REGISTRY_RAY_OFFSET)

    if distance <= params.frontier_clear_distance:
        return FrontierVerdict(False, distance)
    return FrontierVerdict(True, distance, start + (distance / 2.0) * f.normal, start)


def pull_towards_anchor(f: Frontier, map: CollisionMap) -> Optional[np.ndarray]:
    """First free march sample from the frontier centre towards its anchor, at most half way there."""
    if f.anchor is None:
        return None
    offset = np.asarray(f.anchor, dtype=float) - f.center
    length = float(np.linalg.norm(offset))
    count = int(math.floor(length / 2.0 / map.march_step))
    if count < 1:
        return None
    candidates = f.center + (map.march_step * np.arange(1, count + 1) / length)[:, None] * offset
    free = map.is_free_many(candidates)
    if not free.any():
        return None
    return candidates[int(np.argmax(free))].copy()


class SkeletonGenerator:
    """Owns the growing graph, the polyhedron registry and the pending frontier FIFO."""

    def __init__(self, map: CollisionMap, params: GenerationParams):
        self.map = map
        self.params = params.validate()
        self.dirs = sample_unit_directions(params.ray_count)
        self.graph = SkeletonGraph()
        self.nodes: Dict[int, Node] = {}
        self.gates: Dict[int, Gate] = {}
        self.connections: List[Connection] = []
        self.pending: Deque[Frontier] = deque()
        self.stats = GenerationStats()
        self._next_id = 0
        self._next_frontier = 0

    @property
    def registry(self) -> PolyhedronRegistry:
        return self.graph.registry

    def _allocate_id(self) -> int:
        vertex_id = self._next_id
        self._next_id += 1
        return vertex_id

    def _connect(self, a: int, b: int) -> Connection:
        connection = Connection(a, b, self.graph.add_edge(a, b))
        self.connections.append(connection)
        return connection

    def _add_gate(self, position, node_a: int, node_b: int) -> Gate:
        gate = Gate(self._allocate_id(), np.asarray(position, dtype=float), (node_a, node_b))
        self.gates[gate.id] = gate
        self.graph.add_vertex(gate.id, GATE, gate.position)
        self._connect(gate.id, node_a)
        self._connect(gate.id, node_b)
        return gate

    def _settle_center(
        self, black: List[VertexSample], initial_center: np.ndarray, gate_position
    ) -> Optional[np.ndarray]:
        """Mean of the black samples when it is free and reachable from the gate, else the initial centre."""
        rectified = np.mean([b.position for b in black], axis=0)
        for candidate in (rectified, initial_center):
            if not self.map.is_free(candidate):
                continue
            if gate_position is None or self.map.segment_is_free(gate_position, candidate):
                return candidate
        return None

    def form_cycles(
        self, node: Node, black: List[VertexSample], parent: Optional[int]
    ) -> List[Tuple[Gate, Connection, Connection]]:
        """Close loops towards every previously built polyhedron the node's rays hit.

        For each detected polyhedron (parent excluded) the owner's frontier with
        most of this node's black samples on it gets a gate; the gate and both
        connections must be collision-free or the attempt is revoked.
        """
        tolerance = self.map.march_step
        detected = sorted({b.detected_polyhedron for b in black if b.detected_polyhedron is not None} - {parent})
        formed = []
        for owner_id in detected:
            owner = self.nodes[owner_id]
            points = np.array([b.position for b in black if b.detected_polyhedron == owner_id])
            mesh = owner.polyhedron.mesh
            best, best_count = None, 0
            for frontier in owner.frontiers:
                on_frontier = np.zeros(len(points), dtype=bool)
                for facet in frontier.facets:
                    a, b, c = mesh.vertices[mesh.facets[facet]]
                    on_frontier |= point_triangle_distance(points, a, b, c) <= tolerance
                count = int(on_frontier.sum())
                if count > best_count:
                    best, best_count = frontier, count
            if best is None:
                continue

            position = best.center
            if not (
                self.map.is_free(position)
                and self.map.segment_is_free(position, node.center)
                and self.map.segment_is_free(position, owner.center)
            ):
                self.stats.revoked_cycles += 1
                logger.warning(f"Cycle between nodes {node.id} and {owner_id} revoked: gate or connection in collision")
                continue
            gate = self._add_gate(position, node.id, owner_id)
            self.stats.cycle_gates += 1
            formed.append((gate, self.connections[-2], self.connections[-1]))
            logger.debug(f"Cycle closed: node {node.id} <-> node {owner_id} via gate {gate.id} ({best_count} samples)")
        return formed

    def expand_node(self, frontier: Optional[Frontier], seed=None) -> Optional[Node]:
        """Grow one node from a verified frontier (or from the seed when frontier is None).

        Returns None when the node is rejected: fewer than 4 black samples, a
        failed hull, no free centre, or no white sample and size <= epsilon.
        """
        params = self.params
        if frontier is None:
            initial_center, gate_position, parent = np.asarray(seed, dtype=float), None, None
        else:
            initial_center, parent = frontier.initial_position, frontier.parent_node
            gate_position = frontier.center if frontier.gate_position is None else frontier.gate_position
            if not self.map.is_free(initial_center):
                return self._reject("initial position in collision", initial_center)

        black, white = generate_vertices(initial_center, self.dirs, self.map, self.registry, params)
        if len(black) < 4:
            return self._reject(f"only {len(black)} black samples", initial_center)
        center = self._settle_center(black, initial_center, gate_position)
        if center is None:
            return self._reject("no free centre reachable from its gate", initial_center)
        size = float(np.mean([np.linalg.norm(b.position - center) for b in black]))
        if not white and size <= params.node_size_epsilon:
            return self._reject(f"sealed and small (size {size:.3f} m)", initial_center)

        node_id = self._next_id
        try:
            polyhedron, frontiers = build_poly_and_frontiers(node_id, initial_center, black, white, self.dirs, params)
        except GeometryError as e:
            return self._reject(f"polyhedron failed: {e}", initial_center)
        self._allocate_id()

        node = Node(node_id, center, initial_center, polyhedron, frontiers, size, self.stats.expansions, parent, black)
        self.nodes[node_id] = node
        self.graph.add_vertex(node_id, NODE, center)
        self.stats.expansions += 1
        if params.form_cycles:
            self.form_cycles(node, black, parent)

        self.registry.push(polyhedron)
        for f in frontiers:
            f.anchor = center
            f.index = self._next_frontier
            self._next_frontier += 1
            self.pending.append(f)
        logger.debug(
            f"Node {node_id}: {len(black)} black / {len(white)} white, size {size:.2f} m, {len(frontiers)} frontiers"
        )
        return node

    def _reject(self, reason: str, initial_center) -> None:
        self.stats.rejected_nodes += 1
        logger.debug(f"Expansion at {np.round(initial_center, 3).tolist()} rejected: {reason}")
        return None

    def run(self, seed) -> SkeletonResult:
        started = time.perf_counter()
        seed = np.asarray(seed, dtype=float).reshape(3)
        if not self.map.in_bounds(seed)[0]:
            raise GenerationError(f"seed {seed.tolist()} is outside the map bounds")
        if not self.map.is_free(seed):
            raise GenerationError(f"seed {seed.tolist()} is in collision")
        if self.expand_node(None, seed) is None:
            raise GenerationError(f"initial node at {seed.tolist()} was rejected")

        while self.pending:
            if self.stats.expansions >= self.params.max_expansions:
                raise GenerationError(f"expansion cap of {self.params.max_expansions} reached")
            frontier = self.pending.popleft()
            verdict = verify_frontier(frontier, self.map, self.registry, self.params)
            parent = self.nodes[frontier.parent_node]
            if verdict.valid and not self.map.segment_is_free(verdict.start, parent.center):
                verdict.valid = False
            if not verdict.valid:
                self.stats.invalid_frontiers += 1
                continue
            frontier.initial_position = verdict.initial_position
            frontier.gate_position = verdict.start
            node = self.expand_node(frontier)
            if node is None:
                continue
            self._add_gate(frontier.gate_position, node.id, parent.id)

        self.stats.generation_seconds = time.perf_counter() - started
        logger.info(
            f"Skeleton generated in {self.stats.generation_seconds:.3f}s: "
            f"{len(self.nodes)} nodes, {len(self.gates)} gates, "
            f"{len(self.connections)} connections ({self.stats.invalid_frontiers} invalid frontiers, "
            f"{self.stats.rejected_nodes} rejected nodes, {self.stats.revoked_cycles} revoked cycles)"
        )
        return SkeletonResult(self.graph, self.nodes, self.gates, self.connections, self.stats, self.params)


def generate_skeleton(map: CollisionMap, seed, params: Optional[GenerationParams] = None) -> SkeletonResult:
    """Build the skeleton graph of map's free space starting from seed.

    Raises:
        GenerationError: seed outside the bounds or in collision, initial node rejected, expansion cap hit
    """
    return SkeletonGenerator(map, params or GenerationParams()).run(seed)
