"""Repeated generation runs and random-pair planning, summarised as avg/std/max/min tables."""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import BenchConfig, GenerationParams
from .errors import PlanningError
from .graph import GATE, NODE, SkeletonGraph, grid_astar, plan_astar
from .maps import CollisionMap, OccupancyGridMap
from .skeleton import generate_skeleton

logger = logging.getLogger(__name__)

RUN_COLUMNS = ["run", "generation_seconds", "vertices", "edges", "nodes", "gates"]
PLAN_COLUMNS = [
    "pair",
    "sx",
    "sy",
    "sz",
    "gx",
    "gy",
    "gz",
    "graph_ms",
    "graph_path_m",
    "expanded",
    "grid_ms",
    "grid_path_m",
]
SUMMARY_COLUMNS = ["metric", "avg", "std", "max", "min"]


@dataclass
class RunRecord:
    run: int
    generation_seconds: float
    vertices: int
    edges: int
    nodes: int
    gates: int


@dataclass
class PlanRecord:
    pair: int
    start: np.ndarray
    goal: np.ndarray
    graph_ms: Optional[float] = None
    graph_path_m: Optional[float] = None
    expanded: Optional[int] = None
    grid_ms: Optional[float] = None
    grid_path_m: Optional[float] = None
    failure: Optional[str] = None


@dataclass
class Summary:
    avg: float
    std: float
    max: float
    min: float


@dataclass
class BenchReport:
    runs: List[RunRecord] = field(default_factory=list)
    plans: List[PlanRecord] = field(default_factory=list)
    summary: Dict[str, Summary] = field(default_factory=dict)
    graph: Optional[SkeletonGraph] = None


def summarize(values: Sequence[float]) -> Summary:
    """avg, population std, max and min of values."""
    data = np.asarray(values, dtype=float)
    return Summary(float(data.mean()), float(data.std()), float(data.max()), float(data.min()))


def sample_pairs(
    map: CollisionMap,
    count: int,
    min_distance: float,
    rng_seed: int,
    traversable: Optional[Tuple[OccupancyGridMap, np.ndarray]] = None,
) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Random free start/goal pairs at least min_distance apart.

    With a grid, endpoints must also fall in traversable voxels so the grid
    planner can start from them.
    """
    rng = np.random.default_rng(rng_seed)
    lo, hi = map.bounds
    pairs: List[Tuple[np.ndarray, np.ndarray]] = []
    attempts = 0
    while len(pairs) < count and attempts < 1000 * max(1, count):
        attempts += 1
        candidates = rng.uniform(lo, hi, size=(2, 3))
        if not map.is_free_many(candidates).all():
            continue
        if traversable is not None:
            grid, mask = traversable
            index = grid.voxel_index(candidates)
            if not grid.contains_index(index).all() or not mask[tuple(index.T)].all():
                continue
        if np.linalg.norm(candidates[0] - candidates[1]) < min_distance:
            continue
        pairs.append((candidates[0], candidates[1]))
    if len(pairs) < count:
        logger.warning(f"Only {len(pairs)} of {count} planning pairs found after {attempts} draws")
    return pairs


def run_benchmark(
    map: CollisionMap,
    seed,
    params: GenerationParams,
    bench: BenchConfig,
    rng_seed: int = 0,
    grid: Optional[OccupancyGridMap] = None,
) -> BenchReport:
    """Generate bench.runs times, then plan bench.pairs random pairs on the last graph."""
    report = BenchReport()
    for run in range(bench.runs):
        result = generate_skeleton(map, seed, params)
        graph = result.graph
        report.runs.append(
            RunRecord(
                run,
                result.stats.generation_seconds,
                graph.vertex_count,
                graph.edge_count,
                graph.count(NODE),
                graph.count(GATE),
            )
        )
        report.graph = graph
        logger.info(
            f"Run {run + 1}/{bench.runs}: {graph.vertex_count} vertices in {result.stats.generation_seconds:.3f}s"
        )

    use_grid = bench.oracle and grid is not None
    mask = grid.traversable() if use_grid else None
    pairs = sample_pairs(map, bench.pairs, bench.min_pair_distance, rng_seed, (grid, mask) if use_grid else None)
    for index, (start, goal) in enumerate(pairs):
        record = PlanRecord(index, start, goal)
        try:
            plan = plan_astar(report.graph, start, goal, map)
            record.graph_ms = plan.elapsed * 1000.0
            record.graph_path_m = plan.length
            record.expanded = plan.expanded_count
        except PlanningError as e:
            record.failure = e.reason
            logger.warning(f"Pair {index}: graph planning failed ({e.reason}): {e}")
        if use_grid:
            try:
                oracle = grid_astar(grid, start, goal, traversable=mask)
                record.grid_ms = oracle.elapsed * 1000.0
                record.grid_path_m = oracle.length
            except PlanningError as e:
                logger.warning(f"Pair {index}: grid planning failed ({e.reason}): {e}")
        report.plans.append(record)

    report.summary = _summary(report)
    return report


def _summary(report: BenchReport) -> Dict[str, Summary]:
    summary: Dict[str, Summary] = {}
    for column in RUN_COLUMNS[1:]:
        summary[column] = summarize([getattr(r, column) for r in report.runs])
    for column in ("graph_ms", "graph_path_m", "expanded", "grid_ms", "grid_path_m"):
        values = [getattr(p, column) for p in report.plans if getattr(p, column) is not None]
        if values:
            summary[column] = summarize(values)
    ratios = [p.graph_path_m / p.grid_path_m for p in report.plans if p.graph_path_m is not None and p.grid_path_m]
    if ratios:
        summary["path_ratio"] = summarize(ratios)
    return summary


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.6f}"


def write_bench_csv(report: BenchReport, out_dir: str) -> Dict[str, str]:
    """Write bench_runs.csv, bench_plans.csv and bench_summary.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: str(out / f"bench_{name}.csv") for name in ("runs", "plans", "summary")}

    with open(paths["runs"], "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(RUN_COLUMNS)
        for r in report.runs:
            writer.writerow([_fmt(getattr(r, c)) for c in RUN_COLUMNS])

    with open(paths["plans"], "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(PLAN_COLUMNS)
        for p in report.plans:
            writer.writerow(
                [p.pair]
                + [_fmt(v) for v in p.start]
                + [_fmt(v) for v in p.goal]
                + [_fmt(p.graph_ms), _fmt(p.graph_path_m), _fmt(p.expanded), _fmt(p.grid_ms), _fmt(p.grid_path_m)]
            )

    with open(paths["summary"], "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(SUMMARY_COLUMNS)
        for metric, s in report.summary.items():
            writer.writerow([metric, _fmt(s.avg), _fmt(s.std), _fmt(s.max), _fmt(s.min)])
    return paths
