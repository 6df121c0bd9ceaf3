import os
import shutil
import subprocess
import sys
import tempfile

import numpy as np
import pytest

from skelgraph.config import GenerationParams, WorldSpec
from skelgraph.graph import GATE, NODE
from skelgraph.maps import PointCloudMap
from skelgraph.worldgen import build_world, seed_hint

# More rays than the default make the door and corridor openings show up as
# white samples reliably in the small test worlds.
SCENE_RAYS = 256


@pytest.fixture
def temp_dir():
    """Create a temporary directory for testing and change to it."""
    old_cwd = os.getcwd()
    temp_dir = tempfile.mkdtemp()
    os.chdir(temp_dir)
    try:
        yield temp_dir
    finally:
        os.chdir(old_cwd)
        shutil.rmtree(temp_dir)


def run_cli(*args, cwd=None, env=None, timeout=600):
    """Run ``python -m skelgraph.cli`` and return the completed process."""
    project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    full_env = dict(os.environ)
    full_env["PYTHONPATH"] = project_root + os.pathsep + full_env.get("PYTHONPATH", "")
    if env:
        full_env.update(env)
    return subprocess.run(
        [sys.executable, "-m", "skelgraph.cli", *args],
        cwd=cwd,
        env=full_env,
        capture_output=True,
        text=True,
        timeout=timeout,
    )


def world_spec(archetype: str, extents, **kwargs) -> WorldSpec:
    return WorldSpec(archetype=archetype, extents=tuple(extents), **kwargs).validate()


def chamber(half_size: float = 10.0, clearance: float = 0.3, extra_points=None) -> PointCloudMap:
    """Empty cubic chamber: only its 8 corners are obstacles, so anything well inside is free."""
    corners = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=float) * half_size
    points = corners if extra_points is None else np.concatenate([corners, np.asarray(extra_points, dtype=float)])
    return PointCloudMap(points, clearance=clearance)


def wall_points(x: float, half_extent: float = 3.0, spacing: float = 0.05) -> np.ndarray:
    """Dense square of points in the plane at the given x."""
    ticks = np.arange(-half_extent, half_extent + 1e-9, spacing)
    y, z = np.meshgrid(ticks, ticks, indexing="ij")
    return np.stack([np.full(y.size, x), y.ravel(), z.ravel()], axis=1)


@pytest.fixture(scope="session")
def scene_params():
    return GenerationParams(ray_count=SCENE_RAYS)


@pytest.fixture(scope="session")
def single_room():
    spec = world_spec("rooms", (5, 5, 2.5))
    return build_world(spec).point_cloud(), seed_hint(spec)


@pytest.fixture(scope="session")
def two_rooms():
    spec = world_spec("rooms", (10, 5, 2.5))
    return build_world(spec).point_cloud(), seed_hint(spec)


@pytest.fixture(scope="session")
def two_room_skeleton(two_rooms, scene_params):
    from skelgraph.skeleton import generate_skeleton

    cloud, seed = two_rooms
    return cloud, generate_skeleton(cloud, seed, scene_params)


def check_structure(cloud, result):
    """Invariants every finished skeleton must satisfy."""
    graph = result.graph
    assert graph.count(NODE) == len(result.nodes) == result.stats.expansions
    assert graph.count(GATE) == len(result.gates)
    assert len(result.registry) == len(result.nodes)
    assert set(result.nodes).isdisjoint(result.gates)

    for vertex in graph.vertex_ids:
        assert cloud.is_free(graph.position(vertex)), f"vertex {vertex} in collision"
    for a, b, data in graph.graph.edges(data=True):
        assert {graph.kind(a), graph.kind(b)} == {NODE, GATE}
        assert cloud.segment_is_free(graph.position(a), graph.position(b))
        assert data["length"] == pytest.approx(np.linalg.norm(graph.position(a) - graph.position(b)))
    for gate in result.gates.values():
        assert sorted(graph.graph.neighbors(gate.id)) == sorted(gate.linked_nodes)
    assert len(result.connections) == graph.edge_count == 2 * len(result.gates)

    indices = [f.index for node in result.nodes.values() for f in node.frontiers]
    assert len(indices) == len(set(indices))
    for node in result.nodes.values():
        counts = [f.facet_count for f in node.frontiers]
        assert counts == sorted(counts, reverse=True)
