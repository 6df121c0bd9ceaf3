import os
import json
from pathlib import Path
from dataclasses import dataclass, field, asdict, fields
import yaml
import tomli_w
import logging

from typing import Any, Dict, List, Optional, Tuple, Union

from .errors import ConfigError

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib


logger = logging.getLogger(__name__)

ARCHETYPES = ("maze", "rooms", "ring", "multifloor", "hall")


def _from_known_keys(cls, data: Dict[str, Any], section: str):
    """Build a dataclass from a dict, rejecting keys the dataclass does not declare."""
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"'{section}' section must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"Unknown keys in '{section}': {', '.join(unknown)}")
    return cls(**data)


@dataclass
class GenerationParams:
    """Tunables of the skeleton generator"""

    ray_count: int = 128
    max_ray_length: float = 5.0
    frontier_clear_distance: float = 1.0
    node_size_epsilon: float = 0.5
    split_angle_threshold: float = 60.0
    blind_distance_ratio: float = 2.0
    clearance: float = 0.3
    form_cycles: bool = True
    max_expansions: int = 100_000

    @property
    def march_step(self) -> float:
        """Ray marching step: half the clearance."""
        return self.clearance / 2.0

    def validate(self) -> "GenerationParams":
        errors = []
        for name in (
            "max_ray_length",
            "frontier_clear_distance",
            "node_size_epsilon",
            "blind_distance_ratio",
            "clearance",
        ):
            if not getattr(self, name) > 0:
                errors.append(f"'{name}' must be strictly positive")
        if self.ray_count < 4:
            errors.append("'ray_count' must be at least 4")
        if not 0.0 < self.split_angle_threshold < 180.0:
            errors.append("'split_angle_threshold' must lie in (0, 180) degrees")
        if self.max_expansions < 1:
            errors.append("'max_expansions' must be at least 1")
        if errors:
            raise ConfigError("Invalid generation parameters: " + "; ".join(errors))
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "GenerationParams":
        return _from_known_keys(cls, data, "generation").validate()


@dataclass
class WorldSpec:
    """Synthetic world description"""

    archetype: str = "maze"
    extents: Tuple[float, float, float] = (60.0, 60.0, 2.5)
    wall_thickness: float = 0.3
    surface_point_density: float = 100.0
    rng_seed: int = 0
    noise_density: float = 0.0
    cell_size: float = 2.5
    room_size: float = 5.0
    door_width: float = 2.0
    corridor_width: float = 3.0
    floor_height: float = 2.5
    obstacle_count: int = 12
    blocked: bool = False
    voxel_size: float = 0.25
    clearance: float = 0.3

    def __post_init__(self):
        self.extents = tuple(float(v) for v in self.extents)

    def validate(self) -> "WorldSpec":
        errors = []
        if self.archetype not in ARCHETYPES:
            errors.append(f"'archetype' must be one of {', '.join(ARCHETYPES)}")
        if len(self.extents) != 3 or any(v <= 0 for v in self.extents):
            errors.append("'extents' must be three positive lengths")
        for name in ("wall_thickness", "surface_point_density", "cell_size", "room_size", "voxel_size", "clearance"):
            if not getattr(self, name) > 0:
                errors.append(f"'{name}' must be strictly positive")
        if self.noise_density < 0:
            errors.append("'noise_density' must not be negative")
        if errors:
            raise ConfigError("Invalid world spec: " + "; ".join(errors))
        return self

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["extents"] = list(self.extents)
        return data

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "WorldSpec":
        return _from_known_keys(cls, data, "world").validate()


@dataclass
class MapSourceConfig:
    """Where the map comes from: a file or a synthetic world, never both"""

    path: Optional[str] = None
    world: Optional[WorldSpec] = None


@dataclass
class PathsConfig:
    """Output locations"""

    output_dir: str = None
    logs_dir: str = None

    def __post_init__(self):
        if self.output_dir is None:
            self.output_dir = "out"
        if self.logs_dir is None:
            self.logs_dir = os.path.join(self.output_dir, "logs")


@dataclass
class BenchConfig:
    """Benchmark protocol settings"""

    runs: int = 10
    pairs: int = 20
    oracle: bool = False
    min_pair_distance: float = 5.0

    def validate(self) -> "BenchConfig":
        if self.runs < 1:
            raise ConfigError("'runs' must be at least 1")
        if self.pairs < 0:
            raise ConfigError("'pairs' must not be negative")
        if self.min_pair_distance < 0:
            raise ConfigError("'min_pair_distance' must not be negative")
        return self


@dataclass
class RunConfig:
    """Main configuration data class"""

    map: MapSourceConfig = field(default_factory=MapSourceConfig)
    generation: GenerationParams = field(default_factory=GenerationParams)
    seed_position: Union[str, List[float]] = "auto"
    paths: PathsConfig = field(default_factory=PathsConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    rng_seed: int = 0
    voxel_size: float = 0.25
    config_path: Optional[str] = None  # Path to the config file that was loaded

    def validate(self) -> "RunConfig":
        has_path = bool(self.map.path)
        has_world = self.map.world is not None
        if has_path == has_world:
            raise ConfigError("Exactly one map source is required: a map file or a synthetic world")
        if isinstance(self.seed_position, str):
            if self.seed_position != "auto":
                self.seed_position = list(parse_vector(self.seed_position))
        elif len(self.seed_position) != 3:
            raise ConfigError("'seed_position' must be 'auto' or three coordinates")
        if self.voxel_size <= 0:
            raise ConfigError("'voxel_size' must be strictly positive")
        self.generation.validate()
        self.bench.validate()
        if has_world:
            self.map.world.validate()
        return self

    def to_dict(self) -> Dict[str, Any]:
        return {
            "map": {
                "path": self.map.path,
                "world": self.map.world.to_dict() if self.map.world else None,
            },
            "generation": self.generation.to_dict(),
            "seed_position": self.seed_position,
            "paths": asdict(self.paths),
            "bench": asdict(self.bench),
            "rng_seed": self.rng_seed,
            "voxel_size": self.voxel_size,
        }


def parse_vector(text: str) -> Tuple[float, float, float]:
    """Parse "x,y,z" (commas or whitespace) into a 3-tuple of floats."""
    parts = text.replace(",", " ").split()
    if len(parts) != 3:
        raise ConfigError(f"Expected three coordinates, got '{text}'")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"Coordinates must be numbers, got '{text}'")


def parse_size(text: str) -> Tuple[float, float, float]:
    """Parse a world size like "60x60x2.5"."""
    parts = text.lower().split("x")
    if len(parts) != 3:
        raise ConfigError(f"Size must look like WxDxH, got '{text}'")
    try:
        size = tuple(float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"Size must look like WxDxH, got '{text}'")
    if any(v <= 0 for v in size):
        raise ConfigError(f"Size components must be positive, got '{text}'")
    return size


def read_config_file(config_path: str) -> Dict[str, Any]:
    """Read a YAML, JSON or TOML file into a dict.

    Raises:
        ConfigError: if the file is missing, unparsable or not a mapping
    """
    suffix = Path(config_path).suffix.lower()
    try:
        if suffix == ".toml":
            with open(config_path, "rb") as f:
                data = tomllib.load(f)
        else:
            with open(config_path, "r", encoding="utf-8") as f:
                data = yaml.safe_load(f)
    except FileNotFoundError:
        raise ConfigError(f"Config file not found: {config_path}")
    except (yaml.YAMLError, ValueError) as e:
        raise ConfigError(f"Error parsing config {config_path}: {e}")

    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"Config {config_path} must contain a mapping at top level")
    return data


def write_config_file(data: Dict[str, Any], config_path: str):
    """Write a config dict as YAML, or as JSON or TOML when the suffix asks for it.

    Raises:
        ConfigError: the data holds values TOML cannot express, such as None
    """
    suffix = Path(config_path).suffix.lower()
    if suffix == ".toml":
        try:
            text = tomli_w.dumps(data)
        except TypeError as e:
            raise ConfigError(f"Cannot write {config_path} as TOML: {e}")
        with open(config_path, "w", encoding="utf-8") as f:
            f.write(text)
        return
    with open(config_path, "w", encoding="utf-8") as f:
        if suffix == ".json":
            json.dump(data, f, indent=2)
            f.write("\n")
        else:
            yaml.safe_dump(data, f, sort_keys=False)


def load_params(params_path: str) -> GenerationParams:
    """Load GenerationParams from a file holding either the bare params or a 'generation' section."""
    data = read_config_file(params_path)
    if "generation" in data:
        data = data["generation"]
    return GenerationParams.from_dict(data)


def load_world_spec(spec_path: str) -> WorldSpec:
    data = read_config_file(spec_path)
    if "world" in data:
        data = data["world"]
    return WorldSpec.from_dict(data)


def load_config_from_yaml(config_path: str) -> RunConfig:
    """Load a RunConfig from a YAML (or JSON/TOML) file.

    Args:
        config_path: Path to the configuration file

    Returns:
        RunConfig with every section present in the file applied over defaults
    """
    config_data = read_config_file(config_path)

    map_data = config_data.get("map") or {}
    world_data = map_data.get("world")
    map_config = MapSourceConfig(
        path=map_data.get("path"),
        world=WorldSpec.from_dict(world_data) if world_data is not None else None,
    )

    seed_position = config_data.get("seed_position", "auto")
    if isinstance(seed_position, (list, tuple)):
        seed_position = [float(v) for v in seed_position]

    return RunConfig(
        map=map_config,
        generation=GenerationParams.from_dict(config_data.get("generation", {})),
        seed_position=seed_position,
        paths=_from_known_keys(PathsConfig, config_data.get("paths", {}), "paths"),
        bench=_from_known_keys(BenchConfig, config_data.get("bench", {}), "bench"),
        rng_seed=int(config_data.get("rng_seed", 0)),
        voxel_size=float(config_data.get("voxel_size", 0.25)),
        config_path=config_path,
    )


def load_config_with_overrides(config_path: Optional[str] = None, **cli_overrides) -> RunConfig:
    """Load configuration with CLI parameter overrides.

    Priority: CLI parameters > environment variables > config file > defaults

    Args:
        config_path: Optional path to config file
        **cli_overrides: CLI parameters that override config file values

    Returns:
        RunConfig object with final merged configuration (not yet validated)
    """
    if config_path:
        config = load_config_from_yaml(config_path)
        logger.info(f"Loaded configuration from: {config_path}")
    else:
        config = RunConfig()
        logger.info("Using default configuration")

    params_path = cli_overrides.pop("params_path", None)
    if params_path:
        config.generation = load_params(params_path)
        logger.info(f"Loaded generation parameters from: {params_path}")

    world = cli_overrides.pop("world", None)
    size = cli_overrides.pop("size", None)
    map_path = cli_overrides.pop("map_path", None)
    if map_path:
        config.map.path = map_path
    if world:
        spec = config.map.world or WorldSpec()
        spec.archetype = world
        config.map.world = spec
    if size:
        if config.map.world is None:
            raise ConfigError("--size needs a synthetic world (--world)")
        config.map.world.extents = parse_size(size)

    for key, value in cli_overrides.items():
        if value is None:  # Only override if CLI parameter was provided
            continue
        if key in ["runs", "pairs", "oracle", "min_pair_distance"]:
            setattr(config.bench, key, value)
        elif key in ["output_dir", "logs_dir"]:
            setattr(config.paths, key, value)
            if key == "output_dir" and cli_overrides.get("logs_dir") is None:
                config.paths.logs_dir = os.path.join(value, "logs")
        elif key == "seed_position":
            config.seed_position = value if value == "auto" else list(parse_vector(value))
        elif key in ["rng_seed", "voxel_size"]:
            setattr(config, key, value)
        elif key in ["ray_count", "max_ray_length", "clearance"]:
            setattr(config.generation, key, value)
        elif key == "noise_density":
            if config.map.world is None:
                raise ConfigError("--noise needs a synthetic world (--world)")
            config.map.world.noise_density = value
        else:
            raise ConfigError(f"Unknown override: {key}")

    env_seed = os.environ.get("SKELGRAPH_RNG_SEED")
    if env_seed and cli_overrides.get("rng_seed") is None:
        try:
            config.rng_seed = int(env_seed)
        except ValueError:
            raise ConfigError(f"SKELGRAPH_RNG_SEED must be an integer, got '{env_seed}'")
        logger.info("RNG seed loaded from environment variable")

    if config.map.world is not None:
        # World rendering shares the run's seed, clearance and grid resolution
        config.map.world.rng_seed = config.rng_seed
        config.map.world.voxel_size = config.voxel_size
        config.map.world.clearance = config.generation.clearance

    return config
