"""
Synthetic storm corpora and a closed-form peak-depth oracle.

Storms are sums of Gaussian kernels in space and time. Each kernel has a
random centre inside the grid's bounding box, a spatial radius, a peak
intensity, a temporal centre and a temporal width. Intensities below the
drizzle floor are cut to zero so events have a finite wet span.

Oracle response per cell, with C the cumulative rainfall and P the peak
hourly intensity of the cell::

    g(P)      = 1 + P / (P + peak_half)
    runoff    = coef[kind] * max(0, C - infiltration) * g(P)
    depth     = runoff                               (non-channel)
    depth     = runoff + routing_weight * U          (channel)
    depth     = min(depth, depth_cap_ft)

Every watershed spreads its runoff volume (runoff times cell area, summed
over all of its cells) and its area evenly over its own channel cells.
Volumes and areas are then accumulated down the drainage tree in
topological order, and U is the accumulated volume over the accumulated
area: the mean runoff depth of the catchment draining through the cell.
Runoff from a watershed without channel cells never reaches the network.
Non-channel depths therefore depend only on their own series; channel
depths are dominated by rainfall over their whole upstream catchment.
"""

import logging
from dataclasses import asdict, dataclass, fields as dc_fields, replace
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from .feature_engine import cell_feature_arrays
from .grid_model import Grid
from .rainfall_ingest import RainfallField

logger = logging.getLogger('floodsurrogate.synthetic_oracle')

Range = Tuple[float, float]


class OracleError(ValueError):
    """Invalid oracle or generator input."""


def _check_range(name: str, value: Sequence[float], minimum: float = 0.0) -> Tuple[float, float]:
    try:
        lo, hi = (float(v) for v in value)
    except (TypeError, ValueError):
        raise ValueError(f"{name} must be a [low, high] pair, got {value!r}")
    if lo < minimum or hi < lo:
        raise ValueError(f"{name} must satisfy {minimum} <= low <= high, got [{lo}, {hi}]")
    return (lo, hi)


@dataclass(frozen=True)
class StormConfig:
    """Storm generator settings. Ranges are inclusive [low, high] pairs."""

    n_events: int = 592
    n_hours: Tuple[int, int] = (24, 72)
    n_centers: Tuple[int, int] = (1, 4)
    radius_ft: Range = (2000.0, 40000.0)
    intensity_in_per_hr: Range = (0.1, 2.5)
    width_hours: Range = (0.5, 3.0)
    min_intensity: float = 0.01
    null_event_fraction: float = 0.0
    seed: int = 42

    def __post_init__(self):
        if self.n_events < 1:
            raise ValueError(f"n_events must be >= 1, got {self.n_events}")
        hours = _check_range('n_hours', self.n_hours, minimum=1)
        centers = _check_range('n_centers', self.n_centers, minimum=1)
        object.__setattr__(self, 'n_hours', (int(hours[0]), int(hours[1])))
        object.__setattr__(self, 'n_centers', (int(centers[0]), int(centers[1])))
        object.__setattr__(self, 'radius_ft', _check_range('radius_ft', self.radius_ft))
        object.__setattr__(
            self, 'intensity_in_per_hr', _check_range('intensity_in_per_hr', self.intensity_in_per_hr)
        )
        object.__setattr__(self, 'width_hours', _check_range('width_hours', self.width_hours))
        if self.radius_ft[0] <= 0:
            raise ValueError("radius_ft low must be > 0")
        if self.width_hours[0] <= 0:
            raise ValueError("width_hours low must be > 0")
        if self.min_intensity < 0:
            raise ValueError(f"min_intensity must be >= 0, got {self.min_intensity}")
        if not 0.0 <= self.null_event_fraction <= 1.0:
            raise ValueError(f"null_event_fraction must be in [0, 1], got {self.null_event_fraction}")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")

    @classmethod
    def preset(cls, name: str) -> 'StormConfig':
        """``full``: full-size corpus. ``desk``: 200 events with a few dry ones."""
        if name == 'full':
            return cls()
        if name == 'desk':
            return cls(n_events=200, null_event_fraction=0.05)
        raise ValueError(f"unknown storm preset '{name}' (expected full or desk)")

    def to_dict(self) -> Dict[str, Any]:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> 'StormConfig':
        known = {f.name for f in dc_fields(cls)}
        unknown = sorted(set(payload) - known)
        if unknown:
            raise ValueError(f"unknown storm settings: {unknown}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in payload.items()})

    def with_seed(self, seed: int) -> 'StormConfig':
        return replace(self, seed=seed)


@dataclass(frozen=True)
class OracleParams:
    runoff_coef_channel: float = 0.9
    runoff_coef_non_channel: float = 0.6
    infiltration_in: float = 0.5
    routing_weight: float = 1.5
    depth_cap_ft: float = 40.0
    peak_half: float = 1.0

    def __post_init__(self):
        for name in ('runoff_coef_channel', 'runoff_coef_non_channel'):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ValueError(f"{name} must be in (0, 1], got {value}")
        for name in ('infiltration_in', 'routing_weight'):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not self.depth_cap_ft > 0:
            raise ValueError(f"depth_cap_ft must be > 0, got {self.depth_cap_ft}")
        if not self.peak_half > 0:
            raise ValueError(f"peak_half must be > 0, got {self.peak_half}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> 'OracleParams':
        known = {f.name for f in dc_fields(cls)}
        unknown = sorted(set(payload) - known)
        if unknown:
            raise ValueError(f"unknown oracle settings: {unknown}")
        return cls(**payload)


def generate_events(grid: Grid, config: StormConfig) -> List[RainfallField]:
    """Draw ``config.n_events`` rainfall fields; identical seeds give identical fields."""
    if grid.n_cells == 0:
        raise OracleError("cannot generate storms on a grid with no cells")
    rng = np.random.default_rng(config.seed)
    centroids = grid.centroids
    lo_xy = centroids.min(axis=0)
    hi_xy = centroids.max(axis=0)

    events: List[RainfallField] = []
    n_null = 0
    for _ in range(config.n_events):
        n_hours = int(rng.integers(config.n_hours[0], config.n_hours[1] + 1))
        n_centers = int(rng.integers(config.n_centers[0], config.n_centers[1] + 1))
        is_null = bool(rng.random() < config.null_event_fraction)
        hour_mid = np.arange(n_hours, dtype=np.float64) + 0.5
        intensity = np.zeros((grid.n_cells, n_hours))
        for _ in range(n_centers):
            centre = rng.uniform(lo_xy, hi_xy)
            radius = rng.uniform(*config.radius_ft)
            peak = rng.uniform(*config.intensity_in_per_hr)
            t_centre = rng.uniform(0.0, n_hours)
            width = rng.uniform(*config.width_hours)
            d2 = np.sum((centroids - centre) ** 2, axis=1)
            spatial = peak * np.exp(-d2 / (2.0 * radius * radius))
            temporal = np.exp(-((hour_mid - t_centre) ** 2) / (2.0 * width * width))
            intensity += spatial[:, None] * temporal[None, :]
        if is_null:
            intensity[:] = 0.0
            n_null += 1
        intensity[intensity < config.min_intensity] = 0.0
        events.append(RainfallField(intensity))

    dry = sum(1 for f in events if not f.intensity.any())
    if dry == len(events):
        logger.warning(f"All {dry} generated events are dry (check intensity range and min_intensity)")
    else:
        logger.info(f"Generated {len(events)} events ({dry} dry, {n_null} drawn as null events)")
    return events


def simulate_peak_depth(grid: Grid, field: RainfallField, params: OracleParams) -> np.ndarray:
    """Peak depth in feet for every cell under one rainfall field."""
    if field.n_cells != grid.n_cells:
        raise OracleError(f"field has {field.n_cells} cells, grid has {grid.n_cells}")
    cumulative, peak, _ = cell_feature_arrays(field.intensity)
    channel = grid.channel_mask
    coef = np.where(channel, params.runoff_coef_channel, params.runoff_coef_non_channel)
    response = 1.0 + peak / (peak + params.peak_half)
    runoff = coef * np.maximum(0.0, cumulative - params.infiltration_in) * response

    # Each watershed sheds its runoff volume and area evenly onto its channel cells.
    ws = grid.watershed_ids
    n_bins = int(ws.max()) + 1 if ws.size else 0
    ws_volume = np.bincount(ws, weights=grid.areas * runoff, minlength=n_bins)
    ws_area = np.bincount(ws, weights=grid.areas, minlength=n_bins)
    ws_channels = np.maximum(np.bincount(ws[channel], minlength=n_bins), 1)
    volume = np.where(channel, ws_volume[ws] / ws_channels[ws], 0.0)
    area = np.where(channel, ws_area[ws] / ws_channels[ws], 0.0)

    for cid in grid.channel_order:
        down = grid.cells[cid].downstream
        if down is not None:
            volume[down] += volume[cid]
            area[down] += area[cid]

    upstream = np.divide(volume, area, out=np.zeros(grid.n_cells), where=area > 0)
    depth = runoff + np.where(channel, params.routing_weight * upstream, 0.0)
    return np.minimum(depth, params.depth_cap_ft)


def simulate_corpus(grid: Grid, fields: Sequence[RainfallField], params: OracleParams) -> np.ndarray:
    """events x cells matrix of oracle depths."""
    if not fields:
        return np.zeros((0, grid.n_cells))
    return np.vstack([simulate_peak_depth(grid, f, params) for f in fields])
