"""
Rainfall features per cell and per watershed, feature matrices, and scaling.

Column layouts:
    exp1: cumulative, peak
    exp2: cumulative, peak, duration,
          heavy_cum_ratio_0 .. heavy_cum_ratio_{W-1},
          heavy_peak_ratio_0 .. heavy_peak_ratio_{W-1}

A heavy ratio is the area share of a watershed whose cumulative (or peak
hourly) rainfall is strictly above the heavy threshold. Ratios are computed
once per event and are the same for every cell.
"""

import enum
import json
import logging
import math
import os
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .grid_model import Grid
from .rainfall_ingest import RainfallField

logger = logging.getLogger('floodsurrogate.feature_engine')

HEAVY_THRESHOLD_IN = 2.0
CELL_FEATURES = ('cumulative', 'peak', 'duration')


class FeatureError(ValueError):
    """Invalid feature input (negative rainfall, shape mismatch, ...)."""


class DegenerateWatershedError(FeatureError):
    """A watershed with zero area has no defined heavy ratio."""


class Experiment(str, enum.Enum):
    EXP1 = 'exp1'
    EXP2 = 'exp2'

    @classmethod
    def parse(cls, value: 'str | Experiment') -> 'Experiment':
        try:
            return cls(str(getattr(value, 'value', value)).lower())
        except ValueError:
            raise ValueError(f"unknown experiment '{value}' (expected exp1 or exp2)")


def feature_names(experiment: Experiment, n_watersheds: int) -> List[str]:
    experiment = Experiment.parse(experiment)
    if experiment == Experiment.EXP1:
        return ['cumulative', 'peak']
    return (
        list(CELL_FEATURES)
        + [f'heavy_cum_ratio_{i}' for i in range(n_watersheds)]
        + [f'heavy_peak_ratio_{i}' for i in range(n_watersheds)]
    )


@dataclass(frozen=True)
class CellFeatures:
    cumulative: float
    peak: float
    duration: int


def cell_feature_arrays(intensity: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cumulative, peak and duration for every row of a cells x hours matrix.

    Duration is the inclusive span from the first to the last wet hour.
    """
    arr = np.asarray(intensity, dtype=np.float64)
    if arr.ndim != 2:
        raise FeatureError(f"expected a cells x hours matrix, got shape {arr.shape}")
    if np.any(arr < 0):
        raise FeatureError("rainfall depths must be >= 0")
    n_hours = arr.shape[1]
    cumulative = arr.sum(axis=1)
    if n_hours == 0:
        zeros = np.zeros(arr.shape[0])
        return cumulative, zeros, zeros.astype(np.int64)
    peak = arr.max(axis=1)
    wet = arr > 0
    any_wet = wet.any(axis=1)
    first = np.argmax(wet, axis=1)
    last = n_hours - 1 - np.argmax(wet[:, ::-1], axis=1)
    duration = np.where(any_wet, last - first + 1, 0).astype(np.int64)
    return cumulative, peak, duration


def cell_features(series: Sequence[float]) -> CellFeatures:
    """Features of one hourly series."""
    row = np.asarray(series, dtype=np.float64).reshape(1, -1)
    cumulative, peak, duration = cell_feature_arrays(row)
    return CellFeatures(float(cumulative[0]), float(peak[0]), int(duration[0]))


def heavy_mask(values: Sequence[float], threshold: float = HEAVY_THRESHOLD_IN) -> np.ndarray:
    """1 where a value is strictly above *threshold*, else 0."""
    if threshold < 0:
        raise FeatureError(f"threshold must be >= 0, got {threshold}")
    arr = np.asarray(values, dtype=np.float64)
    if np.any(arr < 0):
        raise FeatureError("values must be >= 0")
    return (arr > threshold).astype(np.int8)


def heavy_ratio(grid: Grid, mask: Sequence[int], w: int) -> float:
    """Area share of watershed *w* covered by ``mask``."""
    mask = np.asarray(mask)
    if mask.shape != (grid.n_cells,):
        raise FeatureError(f"mask length {mask.shape} does not match {grid.n_cells} cells")
    if not np.isin(mask, (0, 1)).all():
        raise FeatureError("mask must hold only 0 and 1")
    if not 0 <= w < grid.n_watersheds:
        raise FeatureError(f"unknown watershed {w}")
    members = grid.watershed_members[w]
    total = math.fsum(grid.areas[members].tolist())
    if total == 0:
        raise DegenerateWatershedError(f"degenerate watershed {w}: zero area")
    heavy = math.fsum((grid.areas[members] * mask[members]).tolist())
    return heavy / total


@dataclass(frozen=True)
class WatershedRatios:
    heavy_cumulative_ratio: Tuple[float, ...]
    heavy_peak_ratio: Tuple[float, ...]

    def as_row(self) -> List[float]:
        return list(self.heavy_cumulative_ratio) + list(self.heavy_peak_ratio)


def event_ratios(grid: Grid, field: RainfallField, threshold: float = HEAVY_THRESHOLD_IN) -> WatershedRatios:
    """Both heavy ratios for every watershed of one event."""
    _check_field(grid, field)
    cumulative, peak, _ = cell_feature_arrays(field.intensity)
    cum_mask = heavy_mask(cumulative, threshold)
    peak_mask = heavy_mask(peak, threshold)
    return WatershedRatios(
        heavy_cumulative_ratio=tuple(heavy_ratio(grid, cum_mask, w) for w in range(grid.n_watersheds)),
        heavy_peak_ratio=tuple(heavy_ratio(grid, peak_mask, w) for w in range(grid.n_watersheds)),
    )


def _check_field(grid: Grid, field: RainfallField) -> None:
    if field.n_cells != grid.n_cells:
        raise FeatureError(f"field has {field.n_cells} cells, grid has {grid.n_cells}")


def event_features(
    grid: Grid,
    field: RainfallField,
    experiment: Experiment,
    threshold: float = HEAVY_THRESHOLD_IN,
) -> np.ndarray:
    """Feature rows (cells x features) for a single event."""
    experiment = Experiment.parse(experiment)
    _check_field(grid, field)
    cumulative, peak, duration = cell_feature_arrays(field.intensity)
    if experiment == Experiment.EXP1:
        return np.column_stack([cumulative, peak])
    ratios = np.asarray(event_ratios(grid, field, threshold).as_row(), dtype=np.float64)
    shared = np.broadcast_to(ratios, (grid.n_cells, ratios.size))
    return np.column_stack([cumulative, peak, duration.astype(np.float64), shared])


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Features for every (cell, event) pair: ``values[cell, event, feature]``."""

    experiment: Experiment
    feature_names: Tuple[str, ...]
    values: np.ndarray
    event_ids: Tuple[int, ...]

    @property
    def n_cells(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_events(self) -> int:
        return int(self.values.shape[1])

    @property
    def n_features(self) -> int:
        return int(self.values.shape[2])

    def for_cell(self, cell_id: int) -> np.ndarray:
        """events x features matrix for one cell."""
        return self.values[cell_id]


def build_matrix(
    grid: Grid,
    fields: Sequence[RainfallField],
    experiment: Experiment,
    threshold: float = HEAVY_THRESHOLD_IN,
    event_ids: Optional[Sequence[int]] = None,
) -> FeatureMatrix:
    """Stack per-event feature rows into a cells x events x features array."""
    experiment = Experiment.parse(experiment)
    if not fields:
        raise FeatureError("at least one rainfall field is required")
    if event_ids is None:
        event_ids = range(len(fields))
    event_ids = tuple(int(e) for e in event_ids)
    if len(event_ids) != len(fields):
        raise FeatureError(f"{len(event_ids)} event ids for {len(fields)} fields")
    names = feature_names(experiment, grid.n_watersheds)
    values = np.empty((grid.n_cells, len(fields), len(names)), dtype=np.float64)
    for k, field in enumerate(fields):
        values[:, k, :] = event_features(grid, field, experiment, threshold)
    values.setflags(write=False)
    return FeatureMatrix(experiment, tuple(names), values, event_ids)


def ratio_table(
    grid: Grid,
    fields: Sequence[RainfallField],
    event_ids: Optional[Sequence[int]] = None,
    threshold: float = HEAVY_THRESHOLD_IN,
) -> pd.DataFrame:
    """One row per event with both heavy ratios for every watershed."""
    if event_ids is None:
        event_ids = range(len(fields))
    names = feature_names(Experiment.EXP2, grid.n_watersheds)[len(CELL_FEATURES):]
    rows = [event_ratios(grid, f, threshold).as_row() for f in fields]
    frame = pd.DataFrame(rows, columns=names)
    frame.insert(0, 'event_id', list(event_ids))
    return frame


def export_matrix(matrix: FeatureMatrix, path: str) -> None:
    """Write ``event_id,cell_id,<feature>...`` rows, event-major."""
    n_cells, n_events, _ = matrix.values.shape
    flat = matrix.values.transpose(1, 0, 2).reshape(n_cells * n_events, -1)
    frame = pd.DataFrame(flat, columns=list(matrix.feature_names))
    frame.insert(0, 'cell_id', np.tile(np.arange(n_cells), n_events))
    frame.insert(0, 'event_id', np.repeat(np.asarray(matrix.event_ids, dtype=np.int64), n_cells))
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    frame.to_csv(path, index=False, float_format='%.17g')


# ---------------------------------------------------------------------------
# Min-max scaling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MinMaxScaler:
    names: Tuple[str, ...]
    mins: Tuple[float, ...]
    maxs: Tuple[float, ...]

    def __post_init__(self):
        if not (len(self.names) == len(self.mins) == len(self.maxs)):
            raise ValueError("names, mins and maxs must have equal length")
        for name, lo, hi in zip(self.names, self.mins, self.maxs):
            if not hi >= lo:
                raise ValueError(f"feature {name}: max {hi} < min {lo}")

    @property
    def n_features(self) -> int:
        return len(self.names)

    @property
    def degenerate(self) -> Tuple[bool, ...]:
        return tuple(lo == hi for lo, hi in zip(self.mins, self.maxs))

    def to_json(self) -> List[Dict[str, Any]]:
        return [{'name': n, 'min': lo, 'max': hi} for n, lo, hi in zip(self.names, self.mins, self.maxs)]

    @classmethod
    def from_json(cls, payload: Sequence[Dict[str, Any]]) -> 'MinMaxScaler':
        try:
            return cls(
                names=tuple(str(item['name']) for item in payload),
                mins=tuple(float(item['min']) for item in payload),
                maxs=tuple(float(item['max']) for item in payload),
            )
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed scaler: {exc}")

    def save(self, path: str) -> None:
        with open(path, 'w') as f:
            json.dump(self.to_json(), f, indent=2)

    @classmethod
    def load(cls, path: str) -> 'MinMaxScaler':
        with open(path) as f:
            return cls.from_json(json.load(f))


def fit_scaler(rows: np.ndarray, names: Optional[Sequence[str]] = None) -> MinMaxScaler:
    """Per-column min and max over the training rows."""
    arr = np.asarray(rows, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise FeatureError("cannot fit a scaler on an empty training set")
    if names is None:
        names = [f'f{i}' for i in range(arr.shape[1])]
    if len(names) != arr.shape[1]:
        raise FeatureError(f"{len(names)} names for {arr.shape[1]} columns")
    scaler = MinMaxScaler(
        names=tuple(names),
        mins=tuple(float(v) for v in arr.min(axis=0)),
        maxs=tuple(float(v) for v in arr.max(axis=0)),
    )
    flat = [n for n, d in zip(scaler.names, scaler.degenerate) if d]
    if flat:
        logger.debug(f"Degenerate scaler columns: {flat}")
    return scaler


def apply_scaler(scaler: MinMaxScaler, rows: np.ndarray) -> np.ndarray:
    """Map rows with ``(x - min) / (max - min)``; degenerate columns become 0.

    Values outside the fitted range land outside [0, 1]; nothing is clamped.
    """
    arr = np.asarray(rows, dtype=np.float64)
    if arr.shape[-1] != scaler.n_features:
        raise FeatureError(f"row has {arr.shape[-1]} features, scaler expects {scaler.n_features}")
    mins = np.asarray(scaler.mins)
    span = np.asarray(scaler.maxs) - mins
    flat = span == 0
    safe = np.where(flat, 1.0, span)
    return np.where(flat, 0.0, (arr - mins) / safe)


def unscale_row(scaler: MinMaxScaler, scaled: np.ndarray) -> np.ndarray:
    """Inverse of :func:`apply_scaler`; degenerate columns return their constant."""
    arr = np.asarray(scaled, dtype=np.float64)
    if arr.shape[-1] != scaler.n_features:
        raise FeatureError(f"row has {arr.shape[-1]} features, scaler expects {scaler.n_features}")
    mins = np.asarray(scaler.mins)
    span = np.asarray(scaler.maxs) - mins
    return arr * span + mins
