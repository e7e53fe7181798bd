"""
Per-cell training and prediction over an event corpus.

One model is trained per (cell, experiment). Events are split once for
the whole grid; each cell fits its own min-max scaler on its training
rows, trains with validation checkpointing and writes its model file.
Runs are resumable and independent of worker count: every cell's seed is
derived from the split seed, the hyperparameter seed and the cell id.

Store layout::

    <store>/manifest.json
    <store>/.lock
    <store>/exp1/cell_0.model.json
    <store>/exp2/cell_0.model.json
"""

import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, fields as dc_fields
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from .corpus import Corpus
from .eval_metrics import BIN_PRESETS, EvaluationReport, build_report
from .feature_engine import (
    HEAVY_THRESHOLD_IN,
    Experiment,
    MinMaxScaler,
    apply_scaler,
    build_matrix,
    event_features,
    feature_names,
    fit_scaler,
)
from .gbdt import GbdtModel, Hyperparams, ModelFormatError, feature_importance, load_model, predict, save_model, train
from .grid_model import Grid, GridValidationError, validate_grid
from .rainfall_ingest import RainfallField
from .store_lock import StoreLock
from .utils import atomic_write_json, derive_seed

logger = logging.getLogger('floodsurrogate.pipeline')

STORE_FORMAT_VERSION = 1
MANIFEST_FILENAME = 'manifest.json'
MIN_EVENTS = 5
# Manifest checkpoint interval (cells) during long runs.
CHECKPOINT_EVERY = 50

STATUS_OK = 'ok'
STATUS_FAILED = 'failed'


class StoreError(ValueError):
    """Model store is missing, incomplete or inconsistent with the corpus."""


# ---------------------------------------------------------------------------
# Event split
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.6
    valid_fraction: float = 0.2
    test_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        for name in ('train_fraction', 'valid_fraction', 'test_fraction'):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name} must be in (0, 1), got {value}")
        total = self.train_fraction + self.valid_fraction + self.test_fraction
        if not math.isclose(total, 1.0, abs_tol=1e-9):
            raise ValueError(f"split fractions must sum to 1, got {total}")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> 'SplitSpec':
        known = {f.name for f in dc_fields(cls)}
        unknown = sorted(set(payload) - known)
        if unknown:
            raise ValueError(f"unknown split settings: {unknown}")
        return cls(**payload)


@dataclass(frozen=True)
class EventSplit:
    train: Tuple[int, ...]
    valid: Tuple[int, ...]
    test: Tuple[int, ...]

    def to_dict(self) -> Dict[str, List[int]]:
        return {'train': list(self.train), 'valid': list(self.valid), 'test': list(self.test)}

    @classmethod
    def from_dict(cls, payload: Dict[str, Sequence[int]]) -> 'EventSplit':
        return cls(
            train=tuple(int(e) for e in payload['train']),
            valid=tuple(int(e) for e in payload['valid']),
            test=tuple(int(e) for e in payload['test']),
        )


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_events(n_events: int, spec: SplitSpec) -> EventSplit:
    """Seeded shuffle, then contiguous train/valid/test blocks.

    Validation and test sizes are rounded; training takes the remainder.
    """
    if n_events < MIN_EVENTS:
        raise ValueError(f"need at least {MIN_EVENTS} events to split, got {n_events}")
    n_valid = _round_half_up(spec.valid_fraction * n_events)
    n_test = _round_half_up(spec.test_fraction * n_events)
    n_train = n_events - n_valid - n_test
    if min(n_train, n_valid, n_test) < 1:
        raise ValueError(f"{n_events} events cannot fill every partition ({n_train}/{n_valid}/{n_test})")
    order = np.random.default_rng(spec.seed).permutation(n_events)
    return EventSplit(
        train=tuple(sorted(int(e) for e in order[:n_train])),
        valid=tuple(sorted(int(e) for e in order[n_train:n_train + n_valid])),
        test=tuple(sorted(int(e) for e in order[n_train + n_valid:])),
    )


# ---------------------------------------------------------------------------
# Store
# ---------------------------------------------------------------------------


class ModelStore:
    """Per-cell model files plus a JSON manifest.

    Manifest::

        {"format_version", "corpus_hash", "split": {"spec", "train", "valid", "test"},
         "experiments": {"exp1": {"hyperparams", "threshold", "feature_names",
                                  "cells": {"<id>": {...}}, "failures": {"<id>": "..."}}}}
    """

    def __init__(self, root: str):
        self.root = root
        self.manifest_path = os.path.join(root, MANIFEST_FILENAME)
        self.manifest = self._load_manifest()

    @classmethod
    def open(cls, root: str) -> 'ModelStore':
        """Open an existing store; raises StoreError if there is none."""
        if not os.path.exists(os.path.join(root, MANIFEST_FILENAME)):
            raise StoreError(f"no model store at {root} (missing {MANIFEST_FILENAME})")
        return cls(root)

    def _load_manifest(self) -> Dict[str, Any]:
        if not os.path.exists(self.manifest_path):
            return {'format_version': STORE_FORMAT_VERSION, 'corpus_hash': None, 'split': None, 'experiments': {}}
        try:
            with open(self.manifest_path) as f:
                manifest = json.load(f)
        except json.JSONDecodeError as exc:
            raise StoreError(f"corrupt store manifest {self.manifest_path}: {exc}")
        if manifest.get('format_version', 0) > STORE_FORMAT_VERSION:
            raise StoreError(f"store format {manifest['format_version']} is newer than supported")
        manifest.setdefault('experiments', {})
        return manifest

    def save(self) -> None:
        atomic_write_json(self.manifest_path, self.manifest)

    @property
    def corpus_hash(self) -> Optional[str]:
        return self.manifest.get('corpus_hash')

    @property
    def split(self) -> Optional[EventSplit]:
        split = self.manifest.get('split')
        return EventSplit.from_dict(split) if split else None

    @property
    def experiments(self) -> List[str]:
        return sorted(self.manifest['experiments'])

    def model_path(self, experiment: Experiment, cell_id: int) -> str:
        return os.path.join(self.root, Experiment.parse(experiment).value, f"cell_{cell_id}.model.json")

    def section(self, experiment: Experiment) -> Dict[str, Any]:
        exp = Experiment.parse(experiment).value
        if exp not in self.manifest['experiments']:
            raise StoreError(f"store {self.root} has no {exp} models")
        return self.manifest['experiments'][exp]

    def cell_entry(self, experiment: Experiment, cell_id: int) -> Optional[Dict[str, Any]]:
        return self.section(experiment)['cells'].get(str(cell_id))

    def failures(self, experiment: Experiment) -> Dict[int, str]:
        return {int(k): v for k, v in self.section(experiment).get('failures', {}).items()}

    def threshold(self, experiment: Experiment) -> float:
        return float(self.section(experiment).get('threshold', HEAVY_THRESHOLD_IN))

    def completed_cells(self, experiment: Experiment) -> List[int]:
        cells = self.section(experiment)['cells']
        return sorted(int(k) for k, v in cells.items() if v.get('status') == STATUS_OK)

    def load_cell(self, experiment: Experiment, cell_id: int) -> Tuple[GbdtModel, MinMaxScaler]:
        """Model and scaler of one cell; raises StoreError naming the cell if absent."""
        exp = Experiment.parse(experiment)
        entry = self.cell_entry(exp, cell_id)
        path = self.model_path(exp, cell_id)
        if entry is None or entry.get('status') != STATUS_OK or not os.path.exists(path):
            raise StoreError(f"missing {exp.value} model for cell {cell_id}")
        return load_model(path), MinMaxScaler.from_json(entry['scaler'])


def _recover_entry(
    store: ModelStore, experiment: Experiment, cell_id: int, corpus_hash: str, hp: Hyperparams
) -> Optional[Dict[str, Any]]:
    """Manifest entry rebuilt from an existing model file, or None if unusable."""
    path = store.model_path(experiment, cell_id)
    if not os.path.exists(path):
        return None
    try:
        model = load_model(path)
    except ModelFormatError as exc:
        logger.warning(f"Discarding unreadable model for cell {cell_id}: {exc}")
        return None
    meta = model.metadata
    if (
        meta.get('cell_id') != cell_id
        or meta.get('experiment') != experiment.value
        or meta.get('corpus_hash') != corpus_hash
        or model.hyperparams != hp
        or 'scaler' not in meta
    ):
        return None
    return _entry_from_metadata(meta, model.best_iteration)


def _entry_from_metadata(meta: Dict[str, Any], best_iteration: int) -> Dict[str, Any]:
    return {
        'status': STATUS_OK,
        'scaler': meta['scaler'],
        'best_iteration': best_iteration,
        'train_rmse': meta['train_rmse'],
        'valid_rmse': meta['valid_rmse'],
    }


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _CellJob:
    cell_id: int
    experiment: str
    features: np.ndarray  # events x features
    targets: np.ndarray  # events
    split: EventSplit
    feature_names: Tuple[str, ...]
    hyperparams: Hyperparams
    corpus_hash: str
    path: str


def _train_cell(job: _CellJob) -> Dict[str, Any]:
    """Fit scaler and model for one cell and write the model file."""
    train_idx = np.asarray(job.split.train, dtype=np.int64)
    valid_idx = np.asarray(job.split.valid, dtype=np.int64)
    scaler = fit_scaler(job.features[train_idx], job.feature_names)
    scaled = apply_scaler(scaler, job.features)
    model = train(
        scaled[train_idx],
        job.targets[train_idx],
        scaled[valid_idx],
        job.targets[valid_idx],
        job.hyperparams,
        feature_names=job.feature_names,
    )
    best = model.best_iteration
    model.metadata = {
        'cell_id': job.cell_id,
        'experiment': job.experiment,
        'corpus_hash': job.corpus_hash,
        'scaler': scaler.to_json(),
        'train_rmse': model.train_rmse[best],
        'valid_rmse': model.valid_rmse[best] if model.valid_rmse else None,
    }
    save_model(model, job.path)
    return _entry_from_metadata(model.metadata, best)


def _run_job(job: _CellJob) -> Tuple[int, Dict[str, Any]]:
    try:
        return job.cell_id, _train_cell(job)
    except Exception as exc:  # recorded per cell, never fatal for the run
        return job.cell_id, {'status': STATUS_FAILED, 'error': f"{type(exc).__name__}: {exc}"}


def cell_seed(hp: Hyperparams, spec: SplitSpec, cell_id: int) -> int:
    return derive_seed(hp.seed, spec.seed, cell_id)


@dataclass(frozen=True)
class TrainSummary:
    trained: int
    skipped: int
    failed: Tuple[int, ...]
    elapsed_s: float


def train_all(
    grid: Grid,
    corpus: Corpus,
    experiment: Experiment,
    hp: Hyperparams,
    spec: SplitSpec,
    store_root: str,
    workers: int = 1,
    force: bool = False,
    threshold: float = HEAVY_THRESHOLD_IN,
    cells: Optional[Iterable[int]] = None,
    progress: bool = True,
) -> Tuple[ModelStore, TrainSummary]:
    """Train every cell's model for *experiment* into the store at *store_root*.

    Cells that already have a valid model are skipped unless *force*.
    Per-cell failures are recorded in the manifest and do not stop the run.

    Raises:
        StoreError: the store was built from a different corpus, split or
            settings (pass ``force=True`` to retrain over it).
        StoreLockedError: another process is writing the store.
        GridValidationError: *grid* breaks a grid invariant.
    """
    experiment = Experiment.parse(experiment)
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    if corpus.depths.shape[1] != grid.n_cells:
        raise StoreError(f"corpus has {corpus.depths.shape[1]} cells, grid has {grid.n_cells}")
    violations = validate_grid(grid)
    if violations:
        raise GridValidationError(violations)
    cell_ids = sorted(set(range(grid.n_cells) if cells is None else (int(c) for c in cells)))
    split = split_events(corpus.n_events, spec)
    started = time.perf_counter()

    with StoreLock(store_root):
        store = ModelStore(store_root)
        mismatch = _store_mismatch(store, corpus.corpus_hash, spec, split)
        if mismatch and not force:
            raise StoreError(f"{mismatch}; rerun with --force to retrain")
        if mismatch:
            logger.warning(f"{mismatch}; discarding previous store contents")
            store.manifest['experiments'] = {}
        store.manifest['corpus_hash'] = corpus.corpus_hash
        store.manifest['split'] = {'spec': spec.to_dict(), **split.to_dict()}

        names = feature_names(experiment, grid.n_watersheds)
        settings = {'hyperparams': hp.to_dict(), 'threshold': threshold, 'feature_names': names}
        section = store.manifest['experiments'].get(experiment.value)
        if section is not None and any(section.get(k) != v for k, v in settings.items()):
            if not force:
                raise StoreError(
                    f"store {experiment.value} models were trained with different settings; "
                    f"rerun with --force to retrain"
                )
            section = None
        if section is None:
            section = {**settings, 'cells': {}, 'failures': {}}
            store.manifest['experiments'][experiment.value] = section

        todo = []
        skipped = 0
        for cid in cell_ids:
            if not force and _is_done(store, experiment, cid, corpus.corpus_hash, hp, spec):
                skipped += 1
                continue
            todo.append(cid)
        store.save()
        if skipped:
            logger.info(f"Resuming {experiment.value}: {skipped} cells already trained")

        failed: List[int] = []
        if todo:
            matrix = build_matrix(grid, corpus.fields, experiment, threshold, corpus.event_ids)
            jobs = (
                _CellJob(
                    cell_id=cid,
                    experiment=experiment.value,
                    features=np.ascontiguousarray(matrix.for_cell(cid)),
                    targets=np.ascontiguousarray(corpus.depths[:, cid]),
                    split=split,
                    feature_names=tuple(names),
                    hyperparams=hp.with_seed(cell_seed(hp, spec, cid)),
                    corpus_hash=corpus.corpus_hash,
                    path=store.model_path(experiment, cid),
                )
                for cid in todo
            )
            os.makedirs(os.path.dirname(store.model_path(experiment, 0)), exist_ok=True)
            bar = tqdm(total=len(todo), desc=f"train {experiment.value}", unit='cell', disable=not progress)
            done = 0
            try:
                for cid, entry in _execute(jobs, workers):
                    _record(section, cid, entry, failed)
                    done += 1
                    bar.update(1)
                    if done % CHECKPOINT_EVERY == 0:
                        store.save()
            finally:
                bar.close()
                store.save()

    summary = TrainSummary(
        trained=len(todo) - len(failed),
        skipped=skipped,
        failed=tuple(sorted(failed)),
        elapsed_s=time.perf_counter() - started,
    )
    if failed:
        logger.warning(f"{len(failed)} cells failed to train: {summary.failed[:10]}")
    logger.info(f"Trained {summary.trained} {experiment.value} cells, skipped {skipped}")
    return store, summary


def _execute(jobs: Iterable[_CellJob], workers: int):
    if workers == 1:
        for job in jobs:
            yield _run_job(job)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_job, job) for job in jobs]
        for future in as_completed(futures):
            yield future.result()


def _record(section: Dict[str, Any], cell_id: int, entry: Dict[str, Any], failed: List[int]) -> None:
    key = str(cell_id)
    if entry['status'] == STATUS_OK:
        section['cells'][key] = entry
        section['failures'].pop(key, None)
    else:
        section['cells'].pop(key, None)
        section['failures'][key] = entry['error']
        failed.append(cell_id)
        logger.warning(f"Cell {cell_id} failed: {entry['error']}")


def _store_mismatch(store: ModelStore, corpus_hash: str, spec: SplitSpec, split: EventSplit) -> Optional[str]:
    if store.corpus_hash is not None and store.corpus_hash != corpus_hash:
        return f"corpus hash mismatch: store {store.corpus_hash[:12]}, corpus {corpus_hash[:12]}"
    saved = store.manifest.get('split')
    if saved and (saved.get('spec') != spec.to_dict() or store.split != split):
        return "event split differs from the one the store was trained with"
    return None


def _is_done(
    store: ModelStore, experiment: Experiment, cell_id: int, corpus_hash: str, hp: Hyperparams, spec: SplitSpec
) -> bool:
    section = store.manifest['experiments'][experiment.value]
    key = str(cell_id)
    entry = section['cells'].get(key)
    if entry is not None and entry.get('status') == STATUS_OK and os.path.exists(store.model_path(experiment, cell_id)):
        return True
    recovered = _recover_entry(store, experiment, cell_id, corpus_hash, hp.with_seed(cell_seed(hp, spec, cell_id)))
    if recovered is None:
        return False
    section['cells'][key] = recovered
    section['failures'].pop(key, None)
    return True


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CellPredictor:
    cell_id: int
    experiment: Experiment
    model: GbdtModel
    scaler: MinMaxScaler


@dataclass(frozen=True, eq=False)
class CombinedPredictor:
    """One predictor per cell, indexed by cell id."""

    cells: Tuple[CellPredictor, ...]
    thresholds: Dict[Experiment, float]

    @property
    def experiments(self) -> List[Experiment]:
        return sorted({p.experiment for p in self.cells}, key=lambda e: e.value)

    def experiment_counts(self) -> Dict[str, int]:
        counts: Dict[str, int] = {}
        for p in self.cells:
            counts[p.experiment.value] = counts.get(p.experiment.value, 0) + 1
        return counts


def _assemble(grid: Grid, choices: Sequence[Tuple[ModelStore, Experiment]]) -> CombinedPredictor:
    cells = []
    thresholds: Dict[Experiment, float] = {}
    for cell, (store, exp) in zip(grid.cells, choices):
        model, scaler = store.load_cell(exp, cell.id)
        cells.append(CellPredictor(cell.id, exp, model, scaler))
        thresholds[exp] = store.threshold(exp)
    return CombinedPredictor(cells=tuple(cells), thresholds=thresholds)


def build_single(store: ModelStore, experiment: Experiment, grid: Grid) -> CombinedPredictor:
    """Predictor using *experiment*'s model on every cell."""
    exp = Experiment.parse(experiment)
    return _assemble(grid, [(store, exp)] * grid.n_cells)


def build_combined(store_exp1: ModelStore, store_exp2: ModelStore, grid: Grid) -> CombinedPredictor:
    """exp2 models on channel cells, exp1 models on non-channel cells.

    Raises:
        StoreError: naming the first cell without a usable model.
    """
    choices = [
        (store_exp2, Experiment.EXP2) if cell.is_channel else (store_exp1, Experiment.EXP1)
        for cell in grid.cells
    ]
    predictor = _assemble(grid, choices)
    logger.info(f"Combined predictor: {predictor.experiment_counts()}")
    return predictor


@dataclass(frozen=True, eq=False)
class EventPrediction:
    depths: np.ndarray
    elapsed_s: float


def predict_event(predictor: CombinedPredictor, grid: Grid, field: RainfallField) -> EventPrediction:
    """Depth map for one event; watershed ratios are computed once per experiment."""
    if field.n_cells != grid.n_cells or len(predictor.cells) != grid.n_cells:
        raise ValueError(
            f"field has {field.n_cells} cells, predictor {len(predictor.cells)}, grid {grid.n_cells}"
        )
    started = time.perf_counter()
    features = {
        exp: event_features(grid, field, exp, predictor.thresholds.get(exp, HEAVY_THRESHOLD_IN))
        for exp in predictor.experiments
    }
    depths = np.empty(grid.n_cells)
    for p in predictor.cells:
        row = apply_scaler(p.scaler, features[p.experiment][p.cell_id])
        depths[p.cell_id] = predict(p.model, row)
    return EventPrediction(depths=depths, elapsed_s=time.perf_counter() - started)


def predict_events(
    predictor: CombinedPredictor, grid: Grid, fields: Sequence[RainfallField]
) -> List[EventPrediction]:
    """One prediction per field, in order."""
    return [predict_event(predictor, grid, f) for f in fields]


def save_depth_map(depths: np.ndarray, path: str) -> None:
    """Write ``cell_id,pred_depth_ft`` rows."""
    frame = pd.DataFrame({'cell_id': np.arange(len(depths)), 'pred_depth_ft': np.asarray(depths)})
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    frame.to_csv(path, index=False, float_format='%.17g')


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def evaluate_predictor(
    predictor: CombinedPredictor,
    grid: Grid,
    corpus: Corpus,
    event_ids: Sequence[int],
    edges: Sequence[float] = BIN_PRESETS['deep'],
    label: str = '',
) -> EvaluationReport:
    """Report of *predictor* against the corpus depths on *event_ids*."""
    event_ids = list(event_ids)
    results = predict_events(predictor, grid, [corpus.fields[e] for e in event_ids])
    preds = np.vstack([r.depths for r in results])
    truth = np.asarray(corpus.depths)[event_ids]
    return build_report(grid, truth, preds, edges, label=label)


def held_out_events(store: ModelStore, corpus: Corpus) -> Tuple[int, ...]:
    """Held-out events recorded in the store, checked against *corpus*."""
    split = store.split
    if split is None:
        raise StoreError(f"store {store.root} has no test split in its manifest")
    if store.corpus_hash != corpus.corpus_hash:
        raise StoreError("corpus hash mismatch between store and corpus")
    return split.test


def evaluate_store(
    store: ModelStore,
    grid: Grid,
    corpus: Corpus,
    experiment: Experiment,
    edges: Sequence[float] = BIN_PRESETS['deep'],
) -> EvaluationReport:
    """Test-split report for one experiment's models."""
    exp = Experiment.parse(experiment)
    events = held_out_events(store, corpus)
    return evaluate_predictor(build_single(store, exp, grid), grid, corpus, events, edges, label=exp.value)


# ---------------------------------------------------------------------------
# Importance
# ---------------------------------------------------------------------------


def importance_table(
    store: ModelStore,
    experiment: Experiment,
    cell_ids: Sequence[int],
    threshold: float = 0.10,
) -> pd.DataFrame:
    """``cell_id,feature,importance`` rows with importance >= *threshold*, largest first per cell."""
    exp = Experiment.parse(experiment)
    rows = []
    for cid in cell_ids:
        model, _ = store.load_cell(exp, cid)
        importance = feature_importance(model)
        if importance.degenerate:
            logger.warning(f"Cell {cid}: no split gain, importance is uniform")
        for name, fraction in importance.above(threshold):
            rows.append({'cell_id': cid, 'feature': name, 'importance': fraction})
    return pd.DataFrame(rows, columns=['cell_id', 'feature', 'importance'])
