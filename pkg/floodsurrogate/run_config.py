"""
Run configuration file.

A run is described by one JSON file; every section is optional::

    {
      "paths": {"grid": "grid.csv", "watersheds": null, "corpus": "corpus",
                "store": "store", "output": "output"},
      "grid_preset": {"rows": 20, "cols": 20, "n_watersheds": 9,
                      "channel_fraction": 0.1, "cell_size_ft": 1200.0},
      "storm": {"n_events": 200, "seed": 42, ...},
      "oracle": {"routing_weight": 1.5, ...},
      "hyperparams": {"exp1": {...}, "exp2": {...}},
      "split": {"seed": 0},
      "bins": [15, 25],
      "workers": 1
    }

Relative paths resolve against the directory holding the config file.
Unknown keys are rejected so typos never fall back to defaults silently.
"""

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields as dc_fields
from typing import Any, Dict, Optional, Tuple

from .eval_metrics import BIN_PRESETS, check_edges
from .feature_engine import HEAVY_THRESHOLD_IN, Experiment
from .gbdt import Hyperparams
from .grid_model import DEFAULT_CELL_SIZE_FT, DEFAULT_N_WATERSHEDS
from .pipeline import SplitSpec
from .synthetic_oracle import OracleParams, StormConfig
from .utils import canonical_json_hash

logger = logging.getLogger('floodsurrogate.run_config')

WORKERS_ENV = 'FLOODSURROGATE_WORKERS'


class RunConfigError(ValueError):
    """Invalid or unreadable run configuration."""


@dataclass(frozen=True)
class RunPaths:
    grid: str = 'grid.csv'
    watersheds: Optional[str] = None
    corpus: str = 'corpus'
    store: str = 'store'
    output: str = 'output'


@dataclass(frozen=True)
class GridPreset:
    """Synthetic grid built by ``generate`` when the grid file does not exist."""

    rows: int = 20
    cols: int = 20
    n_watersheds: int = DEFAULT_N_WATERSHEDS
    channel_fraction: float = 0.1
    cell_size_ft: float = DEFAULT_CELL_SIZE_FT


@dataclass(frozen=True)
class RunConfig:
    paths: RunPaths = field(default_factory=RunPaths)
    grid_preset: GridPreset = field(default_factory=GridPreset)
    storm: StormConfig = field(default_factory=lambda: StormConfig.preset('desk'))
    oracle: OracleParams = field(default_factory=OracleParams)
    hyperparams: Dict[str, Hyperparams] = field(
        default_factory=lambda: {e.value: Hyperparams() for e in Experiment}
    )
    split: SplitSpec = field(default_factory=SplitSpec)
    bins: Tuple[float, ...] = BIN_PRESETS['deep']
    threshold: float = HEAVY_THRESHOLD_IN
    workers: int = 1

    def __post_init__(self):
        if self.workers < 1:
            raise RunConfigError(f"workers must be >= 1, got {self.workers}")
        if self.threshold < 0:
            raise RunConfigError(f"threshold must be >= 0, got {self.threshold}")

    def hyperparams_for(self, experiment: Experiment) -> Hyperparams:
        return self.hyperparams[Experiment.parse(experiment).value]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'paths': asdict(self.paths),
            'grid_preset': asdict(self.grid_preset),
            'storm': self.storm.to_dict(),
            'oracle': self.oracle.to_dict(),
            'hyperparams': {k: v.to_dict() for k, v in sorted(self.hyperparams.items())},
            'split': self.split.to_dict(),
            'bins': list(self.bins),
            'threshold': self.threshold,
            'workers': self.workers,
        }


def config_hash(config: RunConfig) -> str:
    """Digest of everything that affects results (paths and workers excluded)."""
    payload = config.to_dict()
    payload.pop('paths')
    payload.pop('workers')
    return canonical_json_hash(payload)


def _section(cls, payload: Any, name: str):
    if not isinstance(payload, dict):
        raise RunConfigError(f"'{name}' must be an object")
    known = {f.name for f in dc_fields(cls)}
    unknown = sorted(set(payload) - known)
    if unknown:
        raise RunConfigError(f"unknown keys in '{name}': {unknown}")
    try:
        return cls(**payload)
    except (TypeError, ValueError) as exc:
        raise RunConfigError(f"invalid '{name}': {exc}")


def _resolve(base_dir: str, path: Optional[str]) -> Optional[str]:
    if path is None:
        return None
    path = os.path.expanduser(path)
    return path if os.path.isabs(path) else os.path.normpath(os.path.join(base_dir, path))


def parse_run_config(payload: Dict[str, Any], base_dir: str = '.') -> RunConfig:
    if not isinstance(payload, dict):
        raise RunConfigError("config must be a JSON object")
    known = {f.name for f in dc_fields(RunConfig)}
    unknown = sorted(set(payload) - known)
    if unknown:
        raise RunConfigError(f"unknown config keys: {unknown}")

    kwargs: Dict[str, Any] = {}
    paths = _section(RunPaths, payload.get('paths', {}), 'paths')
    kwargs['paths'] = RunPaths(**{k: _resolve(base_dir, v) for k, v in asdict(paths).items()})
    if 'grid_preset' in payload:
        kwargs['grid_preset'] = _section(GridPreset, payload['grid_preset'], 'grid_preset')
    try:
        if 'storm' in payload:
            storm = payload['storm']
            if isinstance(storm, str):
                kwargs['storm'] = StormConfig.preset(storm)
            else:
                kwargs['storm'] = StormConfig.from_dict(storm)
        if 'oracle' in payload:
            kwargs['oracle'] = OracleParams.from_dict(payload['oracle'])
        if 'split' in payload:
            kwargs['split'] = SplitSpec.from_dict(payload['split'])
        if 'hyperparams' in payload:
            hp = payload['hyperparams']
            if not isinstance(hp, dict):
                raise RunConfigError("'hyperparams' must be an object")
            bad = sorted(set(hp) - {e.value for e in Experiment})
            if bad:
                raise RunConfigError(f"unknown experiments in 'hyperparams': {bad}")
            kwargs['hyperparams'] = {
                e.value: Hyperparams.from_dict(hp.get(e.value, {})) for e in Experiment
            }
        if 'bins' in payload:
            edges = tuple(float(v) for v in payload['bins'])
            check_edges(edges)
            kwargs['bins'] = edges
    except RunConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise RunConfigError(f"invalid config: {exc}")
    for key in ('threshold', 'workers'):
        if key in payload:
            kwargs[key] = payload[key]
    if 'workers' in kwargs and (isinstance(kwargs['workers'], bool) or not isinstance(kwargs['workers'], int)):
        raise RunConfigError("'workers' must be an integer")
    if 'threshold' in kwargs and (
        isinstance(kwargs['threshold'], bool) or not isinstance(kwargs['threshold'], (int, float))
    ):
        raise RunConfigError(f"'threshold' must be a number, got {kwargs['threshold']!r}")
    return RunConfig(**kwargs)


def load_run_config(path: Optional[str]) -> RunConfig:
    """Load a config file; None gives the defaults rooted at the working directory."""
    if path is None:
        return parse_run_config({}, os.getcwd())
    try:
        with open(path) as f:
            payload = json.load(f)
    except FileNotFoundError:
        raise RunConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise RunConfigError(f"config file {path} is not valid JSON: {exc}")
    config = parse_run_config(payload, os.path.dirname(os.path.abspath(path)))
    logger.debug(f"Loaded config {path} (hash {config_hash(config)[:12]})")
    return config


def resolve_workers(explicit: Optional[int], config: RunConfig) -> int:
    """Worker count: explicit flag, then FLOODSURROGATE_WORKERS, then the config."""
    if explicit is not None:
        workers = explicit
    else:
        env_value = os.environ.get(WORKERS_ENV)
        if env_value is not None and env_value.strip():
            try:
                workers = int(env_value)
            except ValueError:
                raise RunConfigError(f"{WORKERS_ENV} must be an integer, got '{env_value}'")
        else:
            workers = config.workers
    if workers < 1:
        raise RunConfigError(f"worker count must be >= 1, got {workers}")
    return workers
