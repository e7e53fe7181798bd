"""
Evaluation metrics and reports: R², RMSE, MAPE, per-kind aggregates,
depth-binned tables and experiment difference maps.
"""

import logging
import os
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .grid_model import Grid
from .utils import atomic_write_json

logger = logging.getLogger('floodsurrogate.eval_metrics')

# Bin edges in feet for deep-gage and shallow-gage tables.
BIN_PRESETS: Dict[str, Tuple[float, ...]] = {
    'deep': (15.0, 25.0),
    'shallow': (8.0, 15.0),
}

REPORT_COLUMNS = ['cell_id', 'kind', 'r2', 'rmse', 'n_points']
DIFF_COLUMNS = ['cell_id', 'delta_r2', 'delta_rmse']


class UndefinedMetricError(ValueError):
    """The metric has no value for this input (e.g. R² of a constant truth)."""


def _pair(y_true, y_pred) -> Tuple[np.ndarray, np.ndarray]:
    t = np.asarray(y_true, dtype=np.float64).ravel()
    p = np.asarray(y_pred, dtype=np.float64).ravel()
    if t.size != p.size:
        raise ValueError(f"length mismatch: {t.size} truths, {p.size} predictions")
    if t.size == 0:
        raise ValueError("no points to evaluate")
    return t, p


def r_squared(y_true, y_pred) -> float:
    t, p = _pair(y_true, y_pred)
    ss_tot = float(np.sum((t - np.mean(t)) ** 2))
    if ss_tot == 0:
        raise UndefinedMetricError("undefined R2: truth has zero variance")
    ss_res = float(np.sum((t - p) ** 2))
    return 1.0 - ss_res / ss_tot


def rmse(y_true, y_pred) -> float:
    t, p = _pair(y_true, y_pred)
    return float(np.sqrt(np.mean((t - p) ** 2)))


@dataclass(frozen=True)
class MapeResult:
    """``value`` is a percentage, or None when every point had zero truth."""

    value: Optional[float]
    n_used: int
    n_excluded: int


def mape(y_true, y_pred) -> MapeResult:
    t, p = _pair(y_true, y_pred)
    keep = t != 0
    n_used = int(keep.sum())
    if n_used == 0:
        return MapeResult(None, 0, int(t.size))
    value = float(100.0 * np.mean(np.abs(t[keep] - p[keep]) / np.abs(t[keep])))
    return MapeResult(value, n_used, int(t.size) - n_used)


@dataclass(frozen=True)
class BinStats:
    lower: Optional[float]  # None = unbounded
    upper: Optional[float]
    n: int
    rmse: Optional[float]
    mape: Optional[MapeResult]

    @property
    def label(self) -> str:
        if self.lower is None and self.upper is None:
            return 'all'
        if self.lower is None:
            return f'< {self.upper:g} ft'
        if self.upper is None:
            return f'>= {self.lower:g} ft'
        return f'>= {self.lower:g} ft and < {self.upper:g} ft'


def parse_bins(text: str) -> Tuple[float, ...]:
    """``"15,25"`` or a preset name (``deep``, ``shallow``) to bin edges."""
    text = text.strip()
    if text in BIN_PRESETS:
        return BIN_PRESETS[text]
    try:
        edges = tuple(float(v) for v in text.split(',') if v.strip())
    except ValueError:
        raise ValueError(f"bin edges must be comma-separated numbers, got '{text}'")
    check_edges(edges)
    return edges


def check_edges(edges: Sequence[float]) -> None:
    if any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError(f"bin edges must be strictly increasing, got {list(edges)}")


def binned_report(y_true, y_pred, edges: Sequence[float]) -> List[BinStats]:
    """Per-bin RMSE and MAPE, binned on the true depth with closed-left bins."""
    check_edges(edges)
    t = np.asarray(y_true, dtype=np.float64).ravel()
    p = np.asarray(y_pred, dtype=np.float64).ravel()
    if t.size != p.size:
        raise ValueError(f"length mismatch: {t.size} truths, {p.size} predictions")
    which = np.searchsorted(np.asarray(edges, dtype=np.float64), t, side='right')
    bounds = [None, *edges, None]
    bins = []
    for b in range(len(edges) + 1):
        sel = which == b
        n = int(sel.sum())
        bins.append(
            BinStats(
                lower=bounds[b],
                upper=bounds[b + 1],
                n=n,
                rmse=rmse(t[sel], p[sel]) if n else None,
                mape=mape(t[sel], p[sel]) if n else None,
            )
        )
    return bins


@dataclass(frozen=True)
class CellMetrics:
    cell_id: int
    is_channel: bool
    r2: Optional[float]  # None when undefined
    rmse: float
    n_points: int


@dataclass(frozen=True)
class KindAggregate:
    channel: Optional[float]
    non_channel: Optional[float]
    overall: Optional[float]
    n_channel: int
    n_non_channel: int
    n_excluded: int


def kind_aggregate(grid: Grid, per_cell: Sequence[CellMetrics], metric: str = 'r2') -> KindAggregate:
    """Unweighted means of *metric* over channel, non-channel and all evaluable cells."""
    channel: List[float] = []
    non_channel: List[float] = []
    excluded = 0
    for m in per_cell:
        value = getattr(m, metric)
        if value is None:
            excluded += 1
            continue
        (channel if grid.cells[m.cell_id].is_channel else non_channel).append(value)

    def mean(values: List[float]) -> Optional[float]:
        return float(np.mean(values)) if values else None

    return KindAggregate(
        channel=mean(channel),
        non_channel=mean(non_channel),
        overall=mean(channel + non_channel),
        n_channel=len(channel),
        n_non_channel=len(non_channel),
        n_excluded=excluded,
    )


@dataclass(frozen=True)
class EvaluationReport:
    label: str
    cells: Tuple[CellMetrics, ...]
    r2: KindAggregate
    rmse: KindAggregate
    bins: Tuple[BinStats, ...]
    n_points: int

    @property
    def n_undefined_r2(self) -> int:
        return sum(1 for c in self.cells if c.r2 is None)

    def by_cell(self) -> Dict[int, CellMetrics]:
        return {c.cell_id: c for c in self.cells}


def build_report(
    grid: Grid,
    y_true: np.ndarray,
    y_pred: np.ndarray,
    edges: Sequence[float] = BIN_PRESETS['deep'],
    label: str = '',
    cell_ids: Optional[Sequence[int]] = None,
) -> EvaluationReport:
    """Report over an events x cells truth/prediction pair.

    Column ``k`` of the matrices belongs to ``cell_ids[k]`` (all cells by
    default). Cells with constant truth get ``r2 = None`` and are left out
    of the R² aggregates.
    """
    t = np.asarray(y_true, dtype=np.float64)
    p = np.asarray(y_pred, dtype=np.float64)
    if t.shape != p.shape or t.ndim != 2:
        raise ValueError(f"truth {t.shape} and prediction {p.shape} must be equal events x cells matrices")
    if cell_ids is None:
        cell_ids = range(grid.n_cells)
    cell_ids = list(cell_ids)
    if len(cell_ids) != t.shape[1]:
        raise ValueError(f"{len(cell_ids)} cell ids for {t.shape[1]} columns")

    cells = []
    for k, cid in enumerate(cell_ids):
        try:
            r2 = r_squared(t[:, k], p[:, k])
        except UndefinedMetricError:
            r2 = None
        cells.append(
            CellMetrics(
                cell_id=int(cid),
                is_channel=grid.cells[cid].is_channel,
                r2=r2,
                rmse=rmse(t[:, k], p[:, k]),
                n_points=int(t.shape[0]),
            )
        )
    undefined = sum(1 for c in cells if c.r2 is None)
    if undefined:
        logger.warning(f"{label or 'report'}: R2 undefined for {undefined} cells (constant truth), excluded")
    return EvaluationReport(
        label=label,
        cells=tuple(cells),
        r2=kind_aggregate(grid, cells, 'r2'),
        rmse=kind_aggregate(grid, cells, 'rmse'),
        bins=tuple(binned_report(t, p, edges)),
        n_points=int(t.size),
    )


@dataclass(frozen=True)
class CellDiff:
    cell_id: int
    delta_r2: Optional[float]
    delta_rmse: float


def diff_report(report_a: EvaluationReport, report_b: EvaluationReport) -> List[CellDiff]:
    """Per-cell change from *a* to *b*; positive means *b* is better for both metrics."""
    a = report_a.by_cell()
    b = report_b.by_cell()
    if set(a) != set(b):
        missing = sorted(set(a) ^ set(b))
        raise ValueError(f"reports cover different cells (mismatch at {missing[:10]})")
    diffs = []
    for cid in sorted(a):
        ra, rb = a[cid].r2, b[cid].r2
        diffs.append(
            CellDiff(
                cell_id=cid,
                delta_r2=None if ra is None or rb is None else rb - ra,
                delta_rmse=a[cid].rmse - b[cid].rmse,
            )
        )
    return diffs


# ---------------------------------------------------------------------------
# Gage validation
# ---------------------------------------------------------------------------


def gage_validation(
    points_by_experiment: Mapping[str, Tuple[Sequence[float], Sequence[float]]],
    edges: Sequence[float] = BIN_PRESETS['deep'],
) -> Dict[str, Any]:
    """Binned RMSE/MAPE of predicted vs observed stream-gage depths per experiment."""
    result: Dict[str, Any] = {}
    for name, (observed, predicted) in points_by_experiment.items():
        obs = np.asarray(observed, dtype=np.float64)
        pred = np.asarray(predicted, dtype=np.float64)
        overall_mape = mape(obs, pred) if obs.size else None
        result[name] = {
            'n': int(obs.size),
            'rmse': rmse(obs, pred) if obs.size else None,
            'mape': asdict(overall_mape) if overall_mape else None,
            'bins': [_bin_to_dict(b) for b in binned_report(obs, pred, edges)],
        }
    return result


# ---------------------------------------------------------------------------
# Exports
# ---------------------------------------------------------------------------


def _bin_to_dict(b: BinStats) -> Dict[str, Any]:
    return {
        'label': b.label,
        'lower': b.lower,
        'upper': b.upper,
        'n': b.n,
        'rmse': b.rmse,
        'mape': asdict(b.mape) if b.mape else None,
    }


def report_to_dict(report: EvaluationReport) -> Dict[str, Any]:
    return {
        'label': report.label,
        'n_points': report.n_points,
        'n_undefined_r2': report.n_undefined_r2,
        'aggregates': {'r2': asdict(report.r2), 'rmse': asdict(report.rmse)},
        'bins': [_bin_to_dict(b) for b in report.bins],
        'cells': [
            {'cell_id': c.cell_id, 'kind': 'channel' if c.is_channel else 'nonchannel',
             'r2': c.r2, 'rmse': c.rmse, 'n_points': c.n_points}
            for c in report.cells
        ],
    }


def write_report_json(report: EvaluationReport, path: str) -> None:
    atomic_write_json(path, report_to_dict(report))


def write_report_csv(report: EvaluationReport, path: str) -> None:
    frame = pd.DataFrame(report_to_dict(report)['cells'], columns=REPORT_COLUMNS)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    frame.to_csv(path, index=False, float_format='%.17g')


def write_diff_csv(diffs: Sequence[CellDiff], path: str) -> None:
    frame = pd.DataFrame([asdict(d) for d in diffs], columns=DIFF_COLUMNS)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    frame.to_csv(path, index=False, float_format='%.17g')


def format_summary(report: EvaluationReport) -> str:
    """Channel / non-channel / overall table of mean R² and RMSE."""

    def cell(value: Optional[float]) -> str:
        return '   n/a' if value is None else f"{value:6.3f}"

    lines = [
        f"{'':12} {'Channel':>8} {'NonChan':>8} {'Overall':>8}",
        f"{'R2':12} {cell(report.r2.channel):>8} {cell(report.r2.non_channel):>8} {cell(report.r2.overall):>8}",
        f"{'RMSE (ft)':12} {cell(report.rmse.channel):>8} {cell(report.rmse.non_channel):>8} "
        f"{cell(report.rmse.overall):>8}",
    ]
    if report.n_undefined_r2:
        lines.append(f"({report.n_undefined_r2} cells with undefined R2 excluded)")
    return '\n'.join(lines)
