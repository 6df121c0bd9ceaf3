#!/usr/bin/env python3
"""
CLI interface for skelgraph.

Usage:
    skelgraph synth --world maze --size 60x60x2.5 --out worlds/maze
    skelgraph generate --world rooms --size 10x5x2.5 --out out
    skelgraph plan --graph out/graph.json --world rooms --size 10x5x2.5 --start 2.5,2.5,1.25 --goal 7.5,2.5,1.25
    skelgraph bench --world maze --runs 10 --pairs 20 --oracle
    skelgraph export-obj --graph out/graph.json --out out
"""

import argparse
import json
import logging
import os
import platform
import sys
from pathlib import Path
from typing import Optional, Tuple

# Enable coverage tracking for subprocesses only when COVERAGE_PROCESS_START is set
if os.environ.get("COVERAGE_PROCESS_START"):
    try:
        import coverage

        coverage.process_startup()
    except ImportError:
        pass  # Coverage not installed, skip

import numpy as np

from . import __version__
from .bench import run_benchmark, write_bench_csv
from .config import ARCHETYPES, RunConfig, load_config_with_overrides, parse_vector
from .errors import ConfigError, GenerationError, MapError, PlanningError
from .geometry import write_obj
from .graph import GATE, NODE, grid_astar, load_graph, plan_astar, write_path_csv
from .maps import CollisionMap, OccupancyGridMap, find_free_seed, load_map, voxelize
from .skeleton import generate_skeleton
from .worldgen import generate_world, save_world, seed_hint

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INPUT = 2
EXIT_PLANNING = 3

# Flags taking an x,y,z value that may start with a minus sign
VECTOR_FLAGS = ("--seed-pos", "--start", "--goal")


def ensure_directory_exists(path: str) -> str:
    """Create directory if it doesn't exist and return the path."""
    os.makedirs(path, exist_ok=True)
    return path


def generate_log_path(logs_dir: str) -> str:
    """Next free numbered log file in logs_dir (0001.log, 0002.log, ...)."""
    ensure_directory_exists(logs_dir)
    suffix = 1
    while True:
        log_path = os.path.join(logs_dir, f"{suffix:04d}.log")
        if not os.path.exists(log_path):
            return log_path
        suffix += 1


def setup_logging(logs_dir: str, verbose: bool = False) -> str:
    log_file = generate_log_path(logs_dir)
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=[logging.FileHandler(log_file), logging.StreamHandler()],  # Also log to console
        force=True,  # Override any existing configuration
    )
    return log_file


def log_startup_environment(config: RunConfig, command: str):
    """Log versions, platform and the effective configuration for troubleshooting."""
    import networkx
    import scipy
    import yaml

    logger.info("=" * 60)
    logger.info(f"skelgraph {command} - Environment Information")
    logger.info("=" * 60)
    logger.info(f"skelgraph version: {__version__}")
    logger.info(f"Python version: {sys.version}")
    logger.info(f"Platform: {platform.platform()}")
    logger.info(
        f"numpy {np.__version__}, scipy {scipy.__version__}, networkx {networkx.__version__}, PyYAML {yaml.__version__}"
    )
    logger.info(f"Working directory: {os.getcwd()}")
    logger.info(f"Config file: {config.config_path or 'None (using defaults)'}")

    logger.info("-" * 40)
    logger.info("Map Source:")
    if config.map.world is not None:
        world = config.map.world
        logger.info(
            f"  World: {world.archetype} {'x'.join(f'{v:g}' for v in world.extents)} (noise {world.noise_density}/m^3)"
        )
    else:
        logger.info(f"  File: {config.map.path}")
    logger.info("Generation Parameters:")
    for key, value in config.generation.to_dict().items():
        logger.info(f"  {key}: {value}")
    logger.info(f"Seed position: {config.seed_position}")
    logger.info(f"RNG seed: {config.rng_seed}")
    logger.info(f"Output directory: {config.paths.output_dir}")


def resolve_map(
    config: RunConfig, need_grid: bool = False
) -> Tuple[CollisionMap, Optional[OccupancyGridMap], Optional[np.ndarray]]:
    """Load or synthesise the map; returns (map, grid or None, preferred seed area or None)."""
    clearance = config.generation.clearance
    if config.map.world is not None:
        cloud, grid = generate_world(config.map.world)
        return cloud, grid, seed_hint(config.map.world)
    map = load_map(config.map.path, clearance=clearance)
    if isinstance(map, OccupancyGridMap):
        return map, map, None
    grid = voxelize(map, config.voxel_size) if need_grid else None
    return map, grid, None


def resolve_seed(config: RunConfig, map: CollisionMap, near: Optional[np.ndarray]) -> np.ndarray:
    if config.seed_position == "auto":
        return find_free_seed(map, near=near)
    seed = np.asarray(config.seed_position, dtype=float)
    if not map.is_free(seed):
        raise MapError(f"seed in collision: {seed.tolist()}")
    return seed


def cmd_synth(config: RunConfig, args) -> int:
    if config.map.world is None:
        raise ConfigError("synth needs --world")
    paths = save_world(config.map.world, config.paths.output_dir, fmt=args.format)
    for kind, path in paths.items():
        print(f"✅ Wrote {kind}: {path}")
    return EXIT_OK


def cmd_generate(config: RunConfig, args) -> int:
    map, _, near = resolve_map(config)
    seed = resolve_seed(config, map, near)
    print(f"🚀 Generating skeleton from seed {np.round(seed, 3).tolist()}")
    result = generate_skeleton(map, seed, config.generation)

    out = Path(ensure_directory_exists(config.paths.output_dir))
    graph = result.graph
    graph.save(str(out / "graph.json"))
    write_obj([(f"node_{p.owner_node}", p.mesh) for p in result.registry], str(out / "polyhedra.obj"))
    write_obj(result.frontier_meshes(), str(out / "frontiers.obj"))
    stats = {
        "generation_seconds": result.stats.generation_seconds,
        "vertices": graph.vertex_count,
        "edges": graph.edge_count,
        "nodes": graph.count(NODE),
        "gates": graph.count(GATE),
        "seed": seed.tolist(),
        "expansions": result.stats.expansions,
        "rejected_nodes": result.stats.rejected_nodes,
        "invalid_frontiers": result.stats.invalid_frontiers,
        "revoked_cycles": result.stats.revoked_cycles,
        "params": config.generation.to_dict(),
    }
    with open(out / "stats.json", "w", encoding="utf-8") as f:
        json.dump(stats, f, indent=2)
        f.write("\n")

    print(f"✅ Skeleton: {stats['vertices']} vertices, {stats['edges']} edges in {stats['generation_seconds']:.3f}s")
    print(f"📁 Output written to {out}")
    return EXIT_OK


def cmd_plan(config: RunConfig, args) -> int:
    if not args.start or not args.goal:
        raise ConfigError("plan needs --start and --goal")
    start, goal = np.array(parse_vector(args.start)), np.array(parse_vector(args.goal))
    graph = load_graph(args.graph)
    map, grid, _ = resolve_map(config, need_grid=args.oracle)

    result = plan_astar(graph, start, goal, map)
    print(f"✅ Graph A*: {result.length:.3f} m in {result.elapsed * 1000:.3f} ms ({result.expanded_count} expanded)")
    out = Path(ensure_directory_exists(config.paths.output_dir))
    write_path_csv(result, str(out / "path.csv"))

    if args.oracle:
        oracle = grid_astar(grid, start, goal)
        print(
            f"✅ Grid A*: {oracle.length:.3f} m in {oracle.elapsed * 1000:.3f} ms ({oracle.expanded_count} expanded)"
        )
        if oracle.length > 0:
            print(f"📏 Length ratio graph/grid: {result.length / oracle.length:.3f}")
        write_path_csv(oracle, str(out / "path_grid.csv"))
    print(f"📁 Path written to {out / 'path.csv'}")
    return EXIT_OK


def cmd_bench(config: RunConfig, args) -> int:
    map, grid, near = resolve_map(config, need_grid=config.bench.oracle)
    seed = resolve_seed(config, map, near)
    print(f"🚀 Benchmark: {config.bench.runs} runs, {config.bench.pairs} planning pairs")
    report = run_benchmark(map, seed, config.generation, config.bench, rng_seed=config.rng_seed, grid=grid)
    paths = write_bench_csv(report, config.paths.output_dir)
    for metric in ("generation_seconds", "vertices", "graph_ms", "grid_ms", "path_ratio"):
        if metric in report.summary:
            s = report.summary[metric]
            print(f"   {metric}: avg {s.avg:.4f}  std {s.std:.4f}  max {s.max:.4f}  min {s.min:.4f}")
    failed = sum(1 for p in report.plans if p.failure)
    if failed:
        print(f"⚠️  {failed} of {len(report.plans)} graph queries failed (see log)")
    for kind, path in paths.items():
        print(f"✅ Wrote {kind}: {path}")
    return EXIT_OK


def cmd_export_obj(config: RunConfig, args) -> int:
    graph = load_graph(args.graph)
    out = Path(ensure_directory_exists(config.paths.output_dir))
    write_obj([(f"node_{p.owner_node}", p.mesh) for p in graph.registry], str(out / "polyhedra.obj"))
    with open(out / "skeleton.obj", "w", encoding="utf-8") as f:
        f.write(graph.to_obj())
    print(f"✅ Exported {len(graph.registry)} polyhedra and {graph.vertex_count} skeleton vertices to {out}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "generate": cmd_generate,
    "plan": cmd_plan,
    "bench": cmd_bench,
    "export-obj": cmd_export_obj,
}


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="Path to YAML/JSON/TOML run configuration")
    parser.add_argument("--out", dest="output_dir", help="Output directory (default: out)")
    parser.add_argument("--logs-dir", help="Directory for log files (default: <out>/logs)")
    parser.add_argument("--rng-seed", type=int, help="Seed for every random choice (or SKELGRAPH_RNG_SEED)")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")


def _add_map_source(parser: argparse.ArgumentParser, with_params: bool = True):
    parser.add_argument("--map", dest="map_path", help="Point cloud (.ply/.xyz) or occupancy grid (.json)")
    parser.add_argument("--world", choices=ARCHETYPES, help="Synthetic world archetype")
    parser.add_argument("--size", help="Synthetic world size WxDxH in meters, e.g. 60x60x2.5")
    parser.add_argument("--voxel-size", type=float, help="Grid oracle voxel size in meters (default: 0.25)")
    if with_params:
        parser.add_argument("--params", dest="params_path", help="GenerationParams file (YAML/JSON/TOML)")
        parser.add_argument("--seed-pos", dest="seed_position", help="'auto' or x,y,z (default: auto)")
        parser.add_argument("--ray-count", type=int, help="Rays per node (default: 128)")
        parser.add_argument("--max-ray-length", type=float, help="Ray length in meters (default: 5.0)")
        parser.add_argument("--clearance", type=float, help="Robot radius in meters (default: 0.3)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skelgraph",
        description="skelgraph - sparse topological skeleton graphs for 3D global planning",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  skelgraph synth --world maze --size 60x60x2.5 --out worlds/maze     Write world.ply, world.grid.json, world.yaml
  skelgraph generate --world rooms --size 10x5x2.5 --out out          Generate from a synthetic world
  skelgraph generate --map worlds/maze/world.ply --seed-pos auto      Generate from a point cloud
  skelgraph generate --config run.yaml --params params.toml           Mix config files
  skelgraph plan --graph out/graph.json --world rooms --size 10x5x2.5 --start 2.5,2.5,1.25 --goal 7.5,2.5,1.25 --oracle
  skelgraph bench --world maze --runs 10 --pairs 20 --oracle          Tables of avg/std/max/min
  skelgraph export-obj --graph out/graph.json --out out               Polyhedra and skeleton as OBJ
  SKELGRAPH_RNG_SEED=7 skelgraph synth --world hall                   Seed via environment

Exit codes: 0 success, 2 input error, 3 planning failure, 1 internal error
CLI parameters always override config file values
        """,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="Write a synthetic world")
    _add_common(synth)
    _add_map_source(synth, with_params=False)
    synth.add_argument("--format", choices=["ply", "xyz"], default="ply", help="Point cloud format (default: ply)")
    synth.add_argument("--noise", dest="noise_density", type=float, help="Outlier density in points/m^3")

    generate = sub.add_parser("generate", help="Generate a skeleton graph")
    _add_common(generate)
    _add_map_source(generate)

    plan = sub.add_parser("plan", help="Plan a path over a generated graph")
    _add_common(plan)
    _add_map_source(plan)
    plan.add_argument("--graph", default="out/graph.json", help="Graph JSON (default: out/graph.json)")
    plan.add_argument("--start", help="Start position x,y,z")
    plan.add_argument("--goal", help="Goal position x,y,z")
    plan.add_argument("--oracle", action="store_true", default=None, help="Also run grid A* and print the length ratio")

    bench = sub.add_parser("bench", help="Repeat generation and random planning queries")
    _add_common(bench)
    _add_map_source(bench)
    bench.add_argument("--runs", type=int, help="Generation runs (default: 10)")
    bench.add_argument("--pairs", type=int, help="Random planning pairs (default: 20)")
    bench.add_argument("--oracle", action="store_true", default=None, help="Also run grid A* for every pair")
    bench.add_argument("--min-pair-distance", type=float, help="Minimum start-goal distance in meters (default: 5)")

    export = sub.add_parser("export-obj", help="Export a graph's polyhedra and skeleton as OBJ")
    _add_common(export)
    export.add_argument("--graph", default="out/graph.json", help="Graph JSON (default: out/graph.json)")
    return parser


def _overrides(args) -> dict:
    keys = [
        "params_path", "world", "size", "map_path", "output_dir", "logs_dir", "seed_position", "rng_seed",
        "voxel_size", "ray_count", "max_ray_length", "clearance", "noise_density", "runs", "pairs",
        "min_pair_distance",
    ]
    overrides = {key: getattr(args, key) for key in keys if hasattr(args, key)}
    if args.command == "bench":
        overrides["oracle"] = args.oracle
    return overrides


def join_vector_flags(argv) -> list:
    """Rewrite "--start -2,0,0" as "--start=-2,0,0" so argparse does not read the value as an option."""
    joined = []
    tokens = iter(argv)
    for token in tokens:
        if token in VECTOR_FLAGS:
            value = next(tokens, None)
            joined.append(token if value is None else f"{token}={value}")
        else:
            joined.append(token)
    return joined


def main(argv=None) -> int:
    """Main CLI entry point."""
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(join_vector_flags(argv))
    try:
        config = load_config_with_overrides(config_path=args.config, **_overrides(args))
        if args.command != "export-obj":
            config.validate()
    except (ConfigError, MapError) as e:
        print(f"❌ {e}")
        return EXIT_INPUT

    log_file = setup_logging(config.paths.logs_dir, verbose=args.verbose)
    log_startup_environment(config, args.command)
    logger.info(f"Log file: {log_file}")

    try:
        return COMMANDS[args.command](config, args)
    except (ConfigError, MapError) as e:
        logger.error(f"Input error: {e}")
        print(f"❌ {e}")
        return EXIT_INPUT
    except PlanningError as e:
        logger.error(f"Planning failed ({e.reason}): {e}")
        print(f"❌ Planning failed: {e}")
        return EXIT_PLANNING
    except GenerationError as e:
        logger.error(f"Generation failed: {e}")
        print(f"❌ Generation failed: {e}")
        return EXIT_INTERNAL
    except Exception as e:
        logger.exception(f"Unexpected error: {e}")
        print(f"❌ Unexpected error: {e}")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
