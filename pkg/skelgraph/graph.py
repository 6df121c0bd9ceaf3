"""Skeleton graph container, A* over the skeleton and the grid A* baseline."""

import csv
import heapq
import json
import math
import time
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np
from scipy.spatial import cKDTree

from .errors import MapError, PlanningError
from .geometry import Polyhedron, PolyhedronRegistry, TriangleMesh
from .maps import CollisionMap, OccupancyGridMap

logger = logging.getLogger(__name__)

NODE = "node"
GATE = "gate"
ATTACH_CANDIDATES = 30


class SkeletonGraph:
    """Undirected graph of nodes and gates joined by straight connections.

    Wraps a networkx.Graph: vertex attributes ``kind`` and ``pos``, edge
    attribute ``length`` (Euclidean endpoint distance).
    """

    def __init__(self, registry: Optional[PolyhedronRegistry] = None):
        self.graph = nx.Graph()
        self.registry = registry if registry is not None else PolyhedronRegistry()

    def add_vertex(self, vertex_id: int, kind: str, pos):
        if kind not in (NODE, GATE):
            raise ValueError(f"unknown vertex kind '{kind}'")
        if vertex_id in self.graph:
            raise ValueError(f"vertex {vertex_id} already exists")
        self.graph.add_node(int(vertex_id), kind=kind, pos=np.asarray(pos, dtype=float).reshape(3))

    def add_edge(self, a: int, b: int) -> float:
        if a == b:
            raise ValueError(f"self-loop on vertex {a}")
        if self.graph.has_edge(a, b):
            raise ValueError(f"duplicate edge {a}-{b}")
        length = float(np.linalg.norm(self.position(a) - self.position(b)))
        self.graph.add_edge(int(a), int(b), length=length)
        return length

    def position(self, vertex_id: int) -> np.ndarray:
        return self.graph.nodes[vertex_id]["pos"]

    def kind(self, vertex_id: int) -> str:
        return self.graph.nodes[vertex_id]["kind"]

    @property
    def vertex_ids(self) -> List[int]:
        return sorted(self.graph.nodes)

    @property
    def vertex_count(self) -> int:
        return self.graph.number_of_nodes()

    @property
    def edge_count(self) -> int:
        return self.graph.number_of_edges()

    def count(self, kind: str) -> int:
        return sum(1 for _, k in self.graph.nodes(data="kind") if k == kind)

    def positions(self) -> Tuple[List[int], np.ndarray]:
        ids = self.vertex_ids
        return ids, np.array([self.position(v) for v in ids]).reshape(-1, 3)

    def to_dict(self, include_polyhedra: bool = True) -> Dict[str, Any]:
        edges = sorted((min(a, b), max(a, b), data["length"]) for a, b, data in self.graph.edges(data=True))
        payload: Dict[str, Any] = {
            "vertices": [{"id": v, "kind": self.kind(v), "pos": self.position(v).tolist()} for v in self.vertex_ids],
            "edges": [{"a": a, "b": b, "len": length} for a, b, length in edges],
        }
        if include_polyhedra:
            payload["polyhedra"] = [
                {"node": p.owner_node, "vertices": p.mesh.vertices.tolist(), "facets": p.mesh.facets.tolist()}
                for p in sorted(self.registry, key=lambda p: p.owner_node)
            ]
        return payload

    def to_json(self, include_polyhedra: bool = True) -> str:
        return json.dumps(self.to_dict(include_polyhedra)) + "\n"

    def save(self, path: str, include_polyhedra: bool = True):
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_json(include_polyhedra))

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "SkeletonGraph":
        registry = PolyhedronRegistry()
        for entry in payload.get("polyhedra", []):
            mesh = TriangleMesh.from_facets(entry["vertices"], entry["facets"])
            registry.push(Polyhedron(mesh, int(entry["node"])))
        graph = cls(registry)
        for vertex in payload["vertices"]:
            graph.add_vertex(int(vertex["id"]), vertex["kind"], vertex["pos"])
        for edge in payload["edges"]:
            graph.add_edge(int(edge["a"]), int(edge["b"]))
        return graph

    def to_obj(self) -> str:
        """Vertices as ``v`` records, connections as ``l`` polylines."""
        ids, positions = self.positions()
        line_index = {v: i + 1 for i, v in enumerate(ids)}
        lines = ["o skeleton"]
        lines += [f"v {x:.6f} {y:.6f} {z:.6f}" for x, y, z in positions]
        lines += [f"l {line_index[a]} {line_index[b]}" for a, b in sorted(self.graph.edges)]
        return "\n".join(lines) + "\n"


def load_graph(path: str) -> SkeletonGraph:
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
    except FileNotFoundError:
        raise MapError(f"graph not found: {path}")
    except json.JSONDecodeError as e:
        raise MapError(f"unreadable graph file {path}: {e}")
    try:
        return SkeletonGraph.from_dict(payload)
    except (KeyError, TypeError, ValueError) as e:
        raise MapError(f"malformed graph file {path}: {e}")


@dataclass
class PlanResult:
    waypoints: List[np.ndarray]
    length: float
    expanded_count: int
    elapsed: float
    vertex_path: List[int] = field(default_factory=list)

    @staticmethod
    def path_length(waypoints: Sequence[np.ndarray]) -> float:
        return float(sum(np.linalg.norm(np.asarray(b) - np.asarray(a)) for a, b in zip(waypoints, waypoints[1:])))


class GraphMetrics(NamedTuple):
    vertex_count: int
    edge_count: int
    component_count: int
    cycle_rank: int


def graph_metrics(graph: Union[SkeletonGraph, nx.Graph]) -> GraphMetrics:
    g = graph.graph if isinstance(graph, SkeletonGraph) else graph
    vertices = g.number_of_nodes()
    edges = g.number_of_edges()
    components = nx.number_connected_components(g) if vertices else 0
    return GraphMetrics(vertices, edges, components, edges - vertices + components)


def _attach(graph: SkeletonGraph, tree: cKDTree, ids: List[int], point: np.ndarray, map: CollisionMap) -> Optional[int]:
    """Nearest vertex (ties by id) reachable from point along a collision-free segment."""
    k = min(ATTACH_CANDIDATES, len(ids))
    distances, indices = tree.query(point, k=k)
    pairs = zip(np.atleast_1d(distances).tolist(), np.atleast_1d(indices).tolist())
    candidates = sorted(pairs, key=lambda c: (c[0], ids[c[1]]))
    for _, index in candidates:
        if map.segment_is_free(point, graph.position(ids[index])):
            return ids[index]
    return None


def _graph_astar(graph: SkeletonGraph, source: int, target: int) -> Tuple[Optional[List[int]], int]:
    """A* with a Euclidean heuristic; heap entries are (f, id) so lower ids win ties."""
    goal_pos = graph.position(target)
    g_score = {source: 0.0}
    came_from: Dict[int, int] = {}
    closed = set()
    heap = [(float(np.linalg.norm(graph.position(source) - goal_pos)), source)]
    expanded = 0
    while heap:
        _, current = heapq.heappop(heap)
        if current in closed:
            continue
        closed.add(current)
        expanded += 1
        if current == target:
            path = [current]
            while path[-1] in came_from:
                path.append(came_from[path[-1]])
            return path[::-1], expanded
        for neighbour in sorted(graph.graph.neighbors(current)):
            if neighbour in closed:
                continue
            tentative = g_score[current] + graph.graph.edges[current, neighbour]["length"]
            if tentative < g_score.get(neighbour, math.inf):
                g_score[neighbour] = tentative
                came_from[neighbour] = current
                h = float(np.linalg.norm(graph.position(neighbour) - goal_pos))
                heapq.heappush(heap, (tentative + h, neighbour))
    return None, expanded


def plan_astar(graph: SkeletonGraph, start, goal, map: CollisionMap) -> PlanResult:
    """Plan start -> goal over the skeleton.

    Start and goal attach to the nearest vertex with a free straight segment
    (up to 30 candidates); the path is start, the vertex chain, goal.

    Raises:
        MapError: start or goal in collision
        PlanningError: attachment failed or the vertices are disconnected
    """
    started = time.perf_counter()
    start = np.asarray(start, dtype=float).reshape(3)
    goal = np.asarray(goal, dtype=float).reshape(3)
    if not map.is_free(start):
        raise MapError(f"start in collision: {start.tolist()}")
    if not map.is_free(goal):
        raise MapError(f"goal in collision: {goal.tolist()}")
    if np.allclose(start, goal, rtol=0.0, atol=1e-12):
        return PlanResult([start], 0.0, 0, time.perf_counter() - started)
    if graph.vertex_count == 0:
        raise PlanningError("graph has no vertices", reason="attach_start")

    ids, positions = graph.positions()
    tree = cKDTree(positions)
    source = _attach(graph, tree, ids, start, map)
    if source is None:
        raise PlanningError(f"start {start.tolist()} could not be attached to the graph", reason="attach_start")
    target = _attach(graph, tree, ids, goal, map)
    if target is None:
        raise PlanningError(f"goal {goal.tolist()} could not be attached to the graph", reason="attach_goal")

    vertex_path, expanded = _graph_astar(graph, source, target)
    if vertex_path is None:
        raise PlanningError(f"no graph path between vertices {source} and {target}", reason="unreachable")
    waypoints = [start] + [graph.position(v).copy() for v in vertex_path] + [goal]
    elapsed = time.perf_counter() - started
    result = PlanResult(waypoints, PlanResult.path_length(waypoints), expanded, elapsed, vertex_path)
    logger.debug(
        f"Graph A*: {len(vertex_path)} vertices, {result.length:.2f} m, {expanded} expanded, {elapsed * 1000:.2f} ms"
    )
    return result


_GRID_STEPS = [
    (dx, dy, dz, math.sqrt(dx * dx + dy * dy + dz * dz))
    for dx in (-1, 0, 1)
    for dy in (-1, 0, 1)
    for dz in (-1, 0, 1)
    if (dx, dy, dz) != (0, 0, 0)
]


def grid_astar(grid: OccupancyGridMap, start, goal, traversable: Optional[np.ndarray] = None) -> PlanResult:
    """26-connected A* over the traversable voxels of grid.

    Step costs are v, sqrt(2)v and sqrt(3)v; waypoints are voxel centres.
    """
    started = time.perf_counter()
    free = grid.traversable() if traversable is None else traversable
    nx_, ny_, nz_ = grid.shape
    endpoints = []
    for label, point in (("start", start), ("goal", goal)):
        index = grid.voxel_index(np.asarray(point, dtype=float))[0]
        if not grid.contains_index(index)[0] or not free[tuple(index)]:
            raise MapError(f"{label} in collision: voxel {index.tolist()} is not traversable")
        endpoints.append(tuple(int(i) for i in index))
    (sx, sy, sz), (gx, gy, gz) = endpoints

    def flat(x, y, z):
        return (x * ny_ + y) * nz_ + z

    def heuristic(x, y, z):
        return math.sqrt((x - gx) ** 2 + (y - gy) ** 2 + (z - gz) ** 2)

    free_flat = free.ravel(order="C").tolist()
    size = len(free_flat)
    g_score = [math.inf] * size
    parent = [-1] * size
    closed = bytearray(size)
    source, target = flat(sx, sy, sz), flat(gx, gy, gz)
    g_score[source] = 0.0
    heap = [(heuristic(sx, sy, sz), source)]
    expanded = 0
    while heap:
        _, current = heapq.heappop(heap)
        if closed[current]:
            continue
        closed[current] = 1
        expanded += 1
        if current == target:
            break
        x, rest = divmod(current, ny_ * nz_)
        y, z = divmod(rest, nz_)
        base = g_score[current]
        for dx, dy, dz, cost in _GRID_STEPS:
            px, py, pz = x + dx, y + dy, z + dz
            if not (0 <= px < nx_ and 0 <= py < ny_ and 0 <= pz < nz_):
                continue
            neighbour = flat(px, py, pz)
            if closed[neighbour] or not free_flat[neighbour]:
                continue
            tentative = base + cost
            if tentative < g_score[neighbour]:
                g_score[neighbour] = tentative
                parent[neighbour] = current
                heapq.heappush(heap, (tentative + heuristic(px, py, pz), neighbour))

    if not closed[target]:
        raise PlanningError(f"goal voxel {endpoints[1]} unreachable from {endpoints[0]}", reason="unreachable")
    chain = [target]
    while chain[-1] != source:
        chain.append(parent[chain[-1]])
    indices = np.array(np.unravel_index(chain[::-1], grid.shape)).T
    waypoints = list(grid.voxel_centers(indices))
    elapsed = time.perf_counter() - started
    result = PlanResult(waypoints, g_score[target] * grid.voxel_size, expanded, elapsed)
    logger.debug(
        f"Grid A*: {len(waypoints)} voxels, {result.length:.2f} m, {expanded} expanded, {elapsed * 1000:.1f} ms"
    )
    return result


def write_path_csv(result: PlanResult, path: str):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["index", "x", "y", "z"])
        for index, (x, y, z) in enumerate(result.waypoints):
            writer.writerow([index, f"{x:.6f}", f"{y:.6f}", f"{z:.6f}"])
