"""
On-disk event corpus.

Layout::

    <root>/corpus.json
    <root>/events/0000/rainfall.csv    cell_id,hour,intensity_in_per_hr
    <root>/events/0000/depth.csv       cell_id,peak_depth_ft
    <root>/ratios.csv                  event_id,heavy_cum_ratio_*,heavy_peak_ratio_*

``corpus_hash`` covers the event files only, so the manifest can record it.
"""

import json
import logging
import os
import shutil
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .feature_engine import ratio_table
from .grid_model import Grid
from .rainfall_ingest import RainfallField, load_field, save_field
from .synthetic_oracle import OracleParams, StormConfig
from .utils import atomic_write_json, canonical_json_hash, hash_files

logger = logging.getLogger('floodsurrogate.corpus')

CORPUS_FORMAT_VERSION = 1
MANIFEST_FILENAME = 'corpus.json'
EVENTS_DIRNAME = 'events'
RAINFALL_FILENAME = 'rainfall.csv'
DEPTH_FILENAME = 'depth.csv'
RATIOS_FILENAME = 'ratios.csv'
DEPTH_COLUMNS = ['cell_id', 'peak_depth_ft']


class CorpusError(ValueError):
    """Missing, incomplete or modified corpus."""


@dataclass(frozen=True, eq=False)
class Corpus:
    root: str
    event_ids: Tuple[int, ...]
    fields: Tuple[RainfallField, ...]
    depths: np.ndarray  # events x cells
    manifest: Dict[str, Any]

    @property
    def n_events(self) -> int:
        return len(self.event_ids)

    @property
    def corpus_hash(self) -> str:
        return self.manifest['corpus_hash']


def event_dir(event_id: int) -> str:
    return os.path.join(EVENTS_DIRNAME, f"{event_id:04d}")


def grid_fingerprint(grid: Grid) -> str:
    """Stable digest of the grid contents (cells and watershed names)."""
    return canonical_json_hash(
        {
            'cells': [
                [c.id, repr(c.x), repr(c.y), repr(c.area), c.kind.value, c.watershed, c.downstream]
                for c in grid.cells
            ],
            'watersheds': [[w.id, w.name] for w in grid.watersheds],
        }
    )


def _event_files(root: str, event_ids: Sequence[int]) -> List[str]:
    paths = []
    for eid in event_ids:
        paths.append(os.path.join(event_dir(eid), RAINFALL_FILENAME))
        paths.append(os.path.join(event_dir(eid), DEPTH_FILENAME))
    return paths


def corpus_hash(root: str, event_ids: Optional[Sequence[int]] = None) -> str:
    """sha256 over every event's rainfall and depth files in sorted order."""
    if event_ids is None:
        events_root = os.path.join(root, EVENTS_DIRNAME)
        if not os.path.isdir(events_root):
            raise CorpusError(f"{root}: no events directory")
        event_ids = sorted(int(name) for name in os.listdir(events_root) if name.isdigit())
    return hash_files(root, _event_files(root, event_ids))


def save_depths(depths: np.ndarray, path: str) -> None:
    frame = pd.DataFrame(
        {'cell_id': np.arange(len(depths)), 'peak_depth_ft': np.asarray(depths, dtype=np.float64)},
        columns=DEPTH_COLUMNS,
    )
    frame.to_csv(path, index=False, float_format='%.17g')


def load_depths(path: str, n_cells: int) -> np.ndarray:
    frame = pd.read_csv(path, float_precision='round_trip')
    if list(frame.columns) != DEPTH_COLUMNS:
        raise CorpusError(f"{path}: expected header {','.join(DEPTH_COLUMNS)}")
    ids = frame['cell_id'].to_numpy(dtype=np.int64)
    if not np.array_equal(ids, np.arange(n_cells)):
        raise CorpusError(f"{path}: expected one row per cell 0..{n_cells - 1}")
    return frame['peak_depth_ft'].to_numpy(dtype=np.float64)


def write_corpus(
    root: str,
    grid: Grid,
    fields: Sequence[RainfallField],
    depths: np.ndarray,
    storm_config: StormConfig,
    oracle_params: OracleParams,
    force: bool = False,
) -> Dict[str, Any]:
    """Write events, depths, the ratio table and the manifest. Returns the manifest."""
    manifest_path = os.path.join(root, MANIFEST_FILENAME)
    if os.path.exists(manifest_path) and not force:
        raise CorpusError(f"corpus already exists at {root} (use --force to overwrite)")
    depths = np.asarray(depths, dtype=np.float64)
    if depths.shape != (len(fields), grid.n_cells):
        raise CorpusError(f"depths shape {depths.shape} != ({len(fields)}, {grid.n_cells})")

    events_root = os.path.join(root, EVENTS_DIRNAME)
    if os.path.isdir(events_root):
        shutil.rmtree(events_root)
    os.makedirs(events_root, exist_ok=True)

    event_ids = list(range(len(fields)))
    for eid, field in zip(event_ids, fields):
        directory = os.path.join(root, event_dir(eid))
        os.makedirs(directory, exist_ok=True)
        save_field(field, os.path.join(directory, RAINFALL_FILENAME))
        save_depths(depths[eid], os.path.join(directory, DEPTH_FILENAME))

    ratio_table(grid, fields, event_ids).to_csv(
        os.path.join(root, RATIOS_FILENAME), index=False, float_format='%.17g'
    )

    settings = {'storm': storm_config.to_dict(), 'oracle': oracle_params.to_dict()}
    manifest = {
        'format_version': CORPUS_FORMAT_VERSION,
        'n_events': len(event_ids),
        'n_cells': grid.n_cells,
        'seed': storm_config.seed,
        'storm': settings['storm'],
        'oracle': settings['oracle'],
        'config_hash': canonical_json_hash(settings),
        'grid_hash': grid_fingerprint(grid),
        'corpus_hash': corpus_hash(root, event_ids),
    }
    atomic_write_json(manifest_path, manifest)
    logger.info(f"Wrote corpus {root}: {len(event_ids)} events, hash {manifest['corpus_hash'][:12]}")
    return manifest


def read_manifest(root: str) -> Dict[str, Any]:
    path = os.path.join(root, MANIFEST_FILENAME)
    if not os.path.exists(path):
        raise CorpusError(f"no corpus at {root} (missing {MANIFEST_FILENAME})")
    try:
        with open(path) as f:
            manifest = json.load(f)
    except json.JSONDecodeError as exc:
        raise CorpusError(f"{path}: {exc}")
    if manifest.get('format_version', 0) > CORPUS_FORMAT_VERSION:
        raise CorpusError(f"{path}: corpus format {manifest['format_version']} is newer than supported")
    return manifest


def load_corpus(root: str, grid: Optional[Grid] = None) -> Corpus:
    """Load and verify a corpus; with *grid*, the grid must be the one it was built on."""
    manifest = read_manifest(root)
    event_ids = tuple(range(int(manifest['n_events'])))
    n_cells = int(manifest['n_cells'])
    if grid is not None:
        if grid.n_cells != n_cells:
            raise CorpusError(f"corpus has {n_cells} cells, grid has {grid.n_cells}")
        if manifest.get('grid_hash') != grid_fingerprint(grid):
            raise CorpusError("corpus was generated on a different grid")
    for rel in _event_files(root, event_ids):
        if not os.path.exists(os.path.join(root, rel)):
            raise CorpusError(f"corpus incomplete: missing {rel}")
    actual = corpus_hash(root, event_ids)
    if actual != manifest['corpus_hash']:
        raise CorpusError(f"corpus hash mismatch: manifest {manifest['corpus_hash'][:12]}, files {actual[:12]}")

    fields = []
    depths = np.empty((len(event_ids), n_cells))
    for eid in event_ids:
        directory = os.path.join(root, event_dir(eid))
        try:
            fields.append(load_field(os.path.join(directory, RAINFALL_FILENAME), n_cells=n_cells))
        except ValueError as exc:
            raise CorpusError(f"event {eid}: {exc}")
        depths[eid] = load_depths(os.path.join(directory, DEPTH_FILENAME), n_cells)
    depths.setflags(write=False)
    logger.info(f"Loaded corpus {root}: {len(event_ids)} events, {n_cells} cells")
    return Corpus(root=root, event_ids=event_ids, fields=tuple(fields), depths=depths, manifest=manifest)
