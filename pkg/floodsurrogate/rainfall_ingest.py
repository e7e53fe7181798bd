"""
Rain gage records to per-cell hourly rainfall fields.

Each cell takes the series of its nearest gage (Thiessen polygons), and
15-minute gage depths are summed into hourly intensities.
"""

import logging
import math
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist

from .grid_model import Grid

logger = logging.getLogger('floodsurrogate.rainfall_ingest')

STEP_MINUTES = 15
SAMPLES_PER_HOUR = 60 // STEP_MINUTES

GAGE_COLUMNS = ['gage_id', 'x', 'y', 't_minutes', 'depth_in']
FIELD_COLUMNS = ['cell_id', 'hour', 'intensity_in_per_hr']

# Rows of the cell-gage distance matrix computed at once.
_ASSIGN_CHUNK = 4096


class GageDataError(ValueError):
    """Gage records are inconsistent or incomplete."""


@dataclass(frozen=True, eq=False)
class GageRecord:
    """One gage's 15-minute depth series (inches) for a single event.

    ``times`` are minutes since event start; each sample covers
    ``[t, t + 15)``.
    """

    gage_id: int
    location: Tuple[float, float]
    times: np.ndarray
    depths: np.ndarray

    def __post_init__(self):
        raw = np.asarray(self.times)
        if raw.dtype.kind == 'f' and not np.all(raw == np.floor(raw)):
            raise GageDataError(f"gage {self.gage_id}: times must be whole minutes")
        times = raw.astype(np.int64)
        depths = np.asarray(self.depths, dtype=np.float64)
        if self.gage_id < 0:
            raise GageDataError(f"gage_id must be >= 0, got {self.gage_id}")
        if times.ndim != 1 or times.shape != depths.shape:
            raise GageDataError(f"gage {self.gage_id}: times and depths must be 1-D and equal length")
        if times.size == 0:
            raise GageDataError(f"gage {self.gage_id}: no samples")
        if times[0] < 0:
            raise GageDataError(f"gage {self.gage_id}: times must be >= 0 minutes")
        if times.size > 1 and np.any(np.diff(times) != STEP_MINUTES):
            raise GageDataError(
                f"gage {self.gage_id}: samples must be strictly increasing at a "
                f"{STEP_MINUTES}-minute step"
            )
        if not np.all(np.isfinite(depths)) or np.any(depths < 0):
            raise GageDataError(f"gage {self.gage_id}: depths must be finite and >= 0")
        times.setflags(write=False)
        depths.setflags(write=False)
        object.__setattr__(self, 'times', times)
        object.__setattr__(self, 'depths', depths)
        object.__setattr__(self, 'location', (float(self.location[0]), float(self.location[1])))

    @property
    def start(self) -> int:
        return int(self.times[0])

    @property
    def end(self) -> int:
        """Exclusive end of the covered window, in minutes."""
        return int(self.times[-1]) + STEP_MINUTES

    @property
    def window(self) -> Tuple[int, int]:
        return (self.start, self.end)


@dataclass(frozen=True, eq=False)
class RainfallField:
    """Hourly rainfall intensity (in/hr) per cell for one event."""

    intensity: np.ndarray

    def __post_init__(self):
        arr = np.array(self.intensity, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"intensity must be a cells x hours matrix, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise ValueError("intensity entries must be finite and >= 0")
        arr.setflags(write=False)
        object.__setattr__(self, 'intensity', arr)

    @property
    def n_cells(self) -> int:
        return int(self.intensity.shape[0])

    @property
    def n_hours(self) -> int:
        return int(self.intensity.shape[1])

    def equals(self, other: 'RainfallField') -> bool:
        return self.intensity.shape == other.intensity.shape and bool(
            np.array_equal(self.intensity, other.intensity)
        )


@dataclass(frozen=True)
class ThiessenAssignment:
    """``cell_to_gage[c]`` is the gage id feeding cell ``c``."""

    cell_to_gage: Tuple[int, ...]

    def gage_of(self, cell_id: int) -> int:
        return self.cell_to_gage[cell_id]

    def as_dict(self) -> Dict[int, int]:
        return dict(enumerate(self.cell_to_gage))


def pad_to_hours(record: GageRecord) -> GageRecord:
    """Zero-pad leading and trailing partial hours so the window covers whole clock hours."""
    lead = (record.start % 60) // STEP_MINUTES
    trail = (-record.end % 60) // STEP_MINUTES
    if lead == 0 and trail == 0:
        return record
    times = np.concatenate([
        record.times[0] - STEP_MINUTES * np.arange(lead, 0, -1),
        record.times,
        record.times[-1] + STEP_MINUTES * np.arange(1, trail + 1),
    ])
    depths = np.concatenate([np.zeros(lead), record.depths, np.zeros(trail)])
    return GageRecord(record.gage_id, record.location, times, depths)


def aggregate_hourly(record: GageRecord) -> np.ndarray:
    """Hourly depths indexed by clock hour: entry h sums the samples with ``t // 60 == h``.

    Hours before the first sample are zero.
    """
    if record.start % 60 or record.end % 60:
        raise GageDataError(
            f"gage {record.gage_id}: window {record.window} does not cover whole hours "
            f"(pad with pad_to_hours first)"
        )
    hourly = record.depths.reshape(-1, SAMPLES_PER_HOUR).sum(axis=1)
    return np.concatenate([np.zeros(record.start // 60), hourly])


def thiessen_assign(grid: Grid, gages: Sequence[GageRecord]) -> ThiessenAssignment:
    """Map every cell to its nearest gage; equidistant gages resolve to the lowest id."""
    if not gages:
        raise GageDataError("at least one gage is required")
    ordered = sorted(gages, key=lambda g: g.gage_id)
    ids = np.array([g.gage_id for g in ordered], dtype=np.int64)
    if np.unique(ids).size != ids.size:
        raise GageDataError("duplicate gage ids")
    locations = np.array([g.location for g in ordered], dtype=np.float64)
    if np.unique(locations, axis=0).shape[0] != locations.shape[0]:
        raise GageDataError("gage locations must be pairwise distinct")

    centroids = grid.centroids
    nearest = np.empty(grid.n_cells, dtype=np.int64)
    for start in range(0, grid.n_cells, _ASSIGN_CHUNK):
        block = centroids[start:start + _ASSIGN_CHUNK]
        # argmin returns the first minimum, i.e. the lowest gage id.
        nearest[start:start + len(block)] = np.argmin(cdist(block, locations, 'sqeuclidean'), axis=1)
    assignment = ThiessenAssignment(cell_to_gage=tuple(int(i) for i in ids[nearest]))
    logger.debug(f"Assigned {grid.n_cells} cells to {len(ordered)} gages")
    return assignment


def build_field(grid: Grid, gages: Sequence[GageRecord], assignment: ThiessenAssignment) -> RainfallField:
    """Assemble the per-cell hourly field from the assigned gages."""
    if not gages:
        raise GageDataError("at least one gage is required")
    if len(assignment.cell_to_gage) != grid.n_cells:
        raise GageDataError(
            f"assignment covers {len(assignment.cell_to_gage)} cells, grid has {grid.n_cells}"
        )
    windows = {g.window for g in gages}
    if len(windows) != 1:
        raise GageDataError(f"gages do not share a common time window: {sorted(windows)}")

    by_id = {g.gage_id: g for g in gages}
    missing = sorted(set(assignment.cell_to_gage) - set(by_id))
    if missing:
        raise GageDataError(f"assignment references unknown gages {missing}")

    hourly = {gid: aggregate_hourly(pad_to_hours(g)) for gid, g in by_id.items()}
    order = sorted(hourly)
    stacked = np.vstack([hourly[gid] for gid in order])
    row_of = {gid: i for i, gid in enumerate(order)}
    index = np.array([row_of[gid] for gid in assignment.cell_to_gage], dtype=np.int64)
    intensity = stacked[index] if grid.n_cells else np.zeros((0, stacked.shape[1]))

    _, end = next(iter(windows))
    expected_hours = math.ceil(end / 60)
    if intensity.shape[1] != expected_hours:
        raise GageDataError(f"hourly series span {intensity.shape[1]} hours, window needs {expected_hours}")
    return RainfallField(intensity)


def ingest_event(grid: Grid, gages: Sequence[GageRecord]) -> RainfallField:
    """Thiessen-assign and build the hourly field for one event."""
    return build_field(grid, gages, thiessen_assign(grid, gages))


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------


def load_gages(path: str) -> List[GageRecord]:
    """Read the long-format gage CSV, one row per 15-minute sample."""
    try:
        frame = pd.read_csv(path, float_precision='round_trip')
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as exc:
        raise GageDataError(f"{path}: {exc}")
    if list(frame.columns) != GAGE_COLUMNS:
        raise GageDataError(f"{path}: expected header {','.join(GAGE_COLUMNS)}")
    if frame.empty:
        raise GageDataError(f"{path}: no samples")
    if frame.isna().any().any():
        raise GageDataError(f"{path}: missing values")
    minutes = pd.to_numeric(frame['t_minutes'], errors='coerce')
    fractional = (minutes.isna() | (minutes != np.floor(minutes))).to_numpy()
    if fractional.any():
        line = int(np.argmax(fractional)) + 2
        raise GageDataError(f"{path}: line {line}: t_minutes must be a whole number of minutes")
    frame['t_minutes'] = minutes.astype(np.int64)

    records = []
    for gage_id, rows in frame.groupby('gage_id', sort=True):
        locations = rows[['x', 'y']].drop_duplicates()
        if len(locations) != 1:
            raise GageDataError(f"gage {gage_id}: location changes between samples")
        rows = rows.sort_values('t_minutes', kind='stable')
        records.append(
            GageRecord(
                gage_id=int(gage_id),
                location=(float(locations.iloc[0]['x']), float(locations.iloc[0]['y'])),
                times=rows['t_minutes'].to_numpy(dtype=np.int64),
                depths=rows['depth_in'].to_numpy(dtype=np.float64),
            )
        )
    logger.info(f"Loaded {len(records)} gages from {path}")
    return records


def save_gages(gages: Sequence[GageRecord], path: str) -> None:
    """Write gage records in the long format read by :func:`load_gages`."""
    frames = []
    for g in sorted(gages, key=lambda r: r.gage_id):
        frames.append(
            pd.DataFrame(
                {
                    'gage_id': g.gage_id,
                    'x': g.location[0],
                    'y': g.location[1],
                    't_minutes': g.times,
                    'depth_in': g.depths,
                }
            )
        )
    frame = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=GAGE_COLUMNS)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    frame[GAGE_COLUMNS].to_csv(path, index=False, float_format='%.17g')


def save_field(field: RainfallField, path: str) -> None:
    """Write ``cell_id,hour,intensity_in_per_hr`` rows, cell-major."""
    n_cells, n_hours = field.intensity.shape
    frame = pd.DataFrame(
        {
            'cell_id': np.repeat(np.arange(n_cells), n_hours),
            'hour': np.tile(np.arange(n_hours), n_cells),
            'intensity_in_per_hr': field.intensity.reshape(-1),
        },
        columns=FIELD_COLUMNS,
    )
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    frame.to_csv(path, index=False, float_format='%.17g')


def load_field(path: str, n_cells: Optional[int] = None) -> RainfallField:
    """Read a field CSV; with *n_cells* the cell count must match exactly."""
    try:
        frame = pd.read_csv(path, float_precision='round_trip')
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as exc:
        raise ValueError(f"{path}: {exc}")
    if list(frame.columns) != FIELD_COLUMNS:
        raise ValueError(f"{path}: expected header {','.join(FIELD_COLUMNS)}")
    cells = frame['cell_id'].to_numpy(dtype=np.int64)
    hours = frame['hour'].to_numpy(dtype=np.int64)
    found_cells = int(cells.max()) + 1 if len(cells) else 0
    found_hours = int(hours.max()) + 1 if len(hours) else 0
    if n_cells is not None and found_cells != n_cells:
        raise ValueError(f"{path}: field has {found_cells} cells, grid has {n_cells}")
    if len(frame) != found_cells * found_hours or cells.min(initial=0) < 0 or hours.min(initial=0) < 0:
        raise ValueError(f"{path}: field rows do not form a complete cells x hours matrix")
    intensity = np.full((found_cells, found_hours), np.nan)
    intensity[cells, hours] = frame['intensity_in_per_hr'].to_numpy(dtype=np.float64)
    if np.isnan(intensity).any():
        raise ValueError(f"{path}: duplicate or missing (cell, hour) rows")
    return RainfallField(intensity)
