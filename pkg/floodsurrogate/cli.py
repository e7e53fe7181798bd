"""
CLI tool for floodsurrogate.
"""

import sys
import os
import argparse
import logging
import time
from dataclasses import replace
from typing import List, Optional


def main():
    """Main entry point for floodsurrogate-cli."""
    parser = argparse.ArgumentParser(
        description='floodsurrogate-cli: per-cell boosted-tree surrogate for peak flood depth',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Build a synthetic corpus, then train both experiments
  floodsurrogate-cli --config run.json generate
  floodsurrogate-cli --config run.json --workers 8 train exp1
  floodsurrogate-cli --config run.json --workers 8 train exp2

  # Held-out evaluation with depth bins, and feature importance
  floodsurrogate-cli --config run.json evaluate --bins 15,25
  floodsurrogate-cli --config run.json importance --cells 3,17 --threshold 0.1

  # Depth map for a new storm
  floodsurrogate-cli --config run.json predict --gages storm.csv --combined
        """
    )

    parser.add_argument(
        '--config',
        default=None,
        help='Run configuration JSON (default: built-in defaults in the working directory)'
    )
    parser.add_argument(
        '--workers',
        type=int,
        default=None,
        help='Parallel training processes (default: FLOODSURROGATE_WORKERS or config)'
    )
    parser.add_argument(
        '--force',
        action='store_true',
        help='Overwrite an existing corpus or retrain existing models'
    )
    parser.add_argument(
        '--seed',
        type=int,
        default=None,
        help='Override every seed in the config (storm, split, boosting)'
    )
    parser.add_argument(
        '--verbose', '-v',
        action='store_true',
        help='Show informational logs'
    )
    parser.add_argument(
        '--debug',
        action='store_true',
        help='Show debug logs for troubleshooting'
    )

    subparsers = parser.add_subparsers(
        dest='command',
        help='Commands',
        metavar='{generate,train,predict,evaluate,importance,ingest,validate}',
    )

    subparsers.add_parser(
        'generate',
        help='Generate a synthetic storm corpus with oracle depths'
    )

    train_parser = subparsers.add_parser(
        'train',
        help='Train one model per cell for an experiment'
    )
    train_parser.add_argument(
        'experiment',
        choices=['exp1', 'exp2'],
        help='exp1: cumulative+peak; exp2: adds duration and watershed heavy-rain ratios'
    )
    train_parser.add_argument(
        '--log-file',
        default=None,
        help='Also write timestamped logs to this file'
    )

    predict_parser = subparsers.add_parser(
        'predict',
        help='Predict a peak depth map for one storm'
    )
    source = predict_parser.add_mutually_exclusive_group(required=True)
    source.add_argument(
        '--rainfall',
        help='Per-cell hourly field CSV (cell_id,hour,intensity_in_per_hr)'
    )
    source.add_argument(
        '--gages',
        help='Gage CSV (gage_id,x,y,t_minutes,depth_in), interpolated to cells'
    )
    predict_parser.add_argument(
        '--combined',
        action='store_true',
        help='Use exp2 models on channel cells and exp1 models elsewhere'
    )
    predict_parser.add_argument(
        '--experiment',
        choices=['exp1', 'exp2'],
        default='exp1',
        help='Experiment to use without --combined (default: exp1)'
    )
    predict_parser.add_argument(
        '--output',
        default=None,
        help='Depth map CSV (default: <output>/depth_map.csv)'
    )

    evaluate_parser = subparsers.add_parser(
        'evaluate',
        help='Evaluate trained stores on the held-out test events'
    )
    evaluate_parser.add_argument(
        '--bins',
        default=None,
        help='Depth bin edges in feet, e.g. 15,25 (or preset: deep, shallow)'
    )

    importance_parser = subparsers.add_parser(
        'importance',
        help='Report per-cell gain importance of features'
    )
    importance_parser.add_argument(
        '--experiment',
        choices=['exp1', 'exp2'],
        default='exp2',
        help='Models to inspect (default: exp2)'
    )
    importance_parser.add_argument(
        '--threshold',
        type=float,
        default=0.10,
        help='Minimum importance fraction to report (default: 0.10)'
    )
    importance_parser.add_argument(
        '--cells',
        default=None,
        help='Comma-separated cell ids (default: every trained cell)'
    )
    importance_parser.add_argument(
        '--output',
        default=None,
        help='Importance CSV (default: <output>/importance_<experiment>.csv)'
    )

    ingest_parser = subparsers.add_parser(
        'ingest',
        help='Interpolate gage records to a per-cell hourly field'
    )
    ingest_parser.add_argument(
        '--gages',
        required=True,
        help='Gage CSV (gage_id,x,y,t_minutes,depth_in)'
    )
    ingest_parser.add_argument(
        '--output',
        required=True,
        help='Field CSV to write'
    )

    validate_parser = subparsers.add_parser(
        'validate',
        help='Compare predictions with stream gage depths, binned by depth'
    )
    validate_parser.add_argument(
        '--gages',
        required=True,
        help='Rain gage CSV for the storm'
    )
    validate_parser.add_argument(
        '--stream-gages',
        required=True,
        help='Stream gage CSV (gage_id,x,y,observed_depth_ft)'
    )
    validate_parser.add_argument(
        '--synthetic-truth',
        action='store_true',
        help='Replace observed depths with the oracle depth at each gage cell'
    )
    validate_parser.add_argument(
        '--bins',
        default=None,
        help='Depth bin edges in feet (default: config bins)'
    )
    validate_parser.add_argument(
        '--output',
        default=None,
        help='Result JSON (default: <output>/gage_validation.json)'
    )

    args = parser.parse_args()

    # Setup logging
    log_level = logging.WARNING
    if args.verbose:
        log_level = logging.INFO
    if args.debug:
        log_level = logging.DEBUG

    logging.basicConfig(
        level=log_level,
        format='[%(name)s] %(levelname)s: %(message)s'
    )

    # Execute command
    try:
        if args.command == 'generate':
            cmd_generate(args)
        elif args.command == 'train':
            cmd_train(args)
        elif args.command == 'predict':
            cmd_predict(args)
        elif args.command == 'evaluate':
            cmd_evaluate(args)
        elif args.command == 'importance':
            cmd_importance(args)
        elif args.command == 'ingest':
            cmd_ingest(args)
        elif args.command == 'validate':
            cmd_validate(args)
        else:
            parser.print_help()
            sys.exit(1)
    except KeyboardInterrupt:
        print("\nInterrupted; rerun the same command to resume", file=sys.stderr)
        sys.exit(130)
    except (ValueError, OSError) as exc:
        print(f"Error: {exc}", file=sys.stderr)
        sys.exit(1)


# ─── shared helpers ───


def _load_config(args):
    from floodsurrogate.run_config import load_run_config

    config = load_run_config(args.config)
    if args.seed is not None:
        config = _apply_seed(config, args.seed)
    return config


def _apply_seed(config, seed: int):
    """Return *config* with every seed replaced by *seed*."""
    return replace(
        config,
        storm=config.storm.with_seed(seed),
        split=replace(config.split, seed=seed),
        hyperparams={k: v.with_seed(seed) for k, v in config.hyperparams.items()},
    )


def _load_grid(config):
    from floodsurrogate.grid_model import load_grid

    if not os.path.exists(config.paths.grid):
        raise ValueError(f"grid file not found: {config.paths.grid} (run 'generate' first)")
    return load_grid(config.paths.grid, config.paths.watersheds)


def _parse_cells(text: Optional[str]) -> Optional[List[int]]:
    if text is None:
        return None
    try:
        return [int(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise ValueError(f"--cells must be comma-separated integers, got '{text}'")


def _bins(args, config):
    from floodsurrogate.eval_metrics import parse_bins

    return parse_bins(args.bins) if args.bins else config.bins


def _attach_log_file(path: str) -> None:
    """Send floodsurrogate INFO+ logs to *path* without making the console noisier."""
    root = logging.getLogger()
    console_level = root.level
    for existing in root.handlers:
        if existing.level == logging.NOTSET:
            existing.setLevel(console_level)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    file_handler = logging.FileHandler(path)
    file_handler.setFormatter(logging.Formatter('%(asctime)s [%(name)s] %(levelname)s: %(message)s'))
    package_logger = logging.getLogger('floodsurrogate')
    package_logger.addHandler(file_handler)
    package_logger.setLevel(min(console_level, logging.INFO))


def _load_field(args, grid):
    from floodsurrogate.rainfall_ingest import ingest_event, load_field, load_gages

    if getattr(args, 'rainfall', None):
        return load_field(args.rainfall, n_cells=grid.n_cells)
    return ingest_event(grid, load_gages(args.gages))


def _open_store(config):
    from floodsurrogate.pipeline import ModelStore

    return ModelStore.open(config.paths.store)


# ─── commands ───


def cmd_generate(args):
    """Generate a synthetic corpus (and the grid if it does not exist)."""
    from floodsurrogate.corpus import write_corpus
    from floodsurrogate.grid_model import make_synthetic_grid, save_grid
    from floodsurrogate.run_config import config_hash
    from floodsurrogate.synthetic_oracle import generate_events, simulate_corpus

    config = _load_config(args)
    if os.path.exists(config.paths.grid):
        grid = _load_grid(config)
        print(f"Using grid {config.paths.grid} ({grid.n_cells} cells)")
    else:
        preset = config.grid_preset
        grid = make_synthetic_grid(
            preset.rows, preset.cols, preset.n_watersheds, preset.channel_fraction, preset.cell_size_ft
        )
        save_grid(grid, config.paths.grid)
        print(f"✓ Built {preset.rows}x{preset.cols} grid: {config.paths.grid}")
        print(f"  Channel cells: {grid.n_channel}, watersheds: {grid.n_watersheds}")

    if os.path.exists(os.path.join(config.paths.corpus, 'corpus.json')) and not args.force:
        raise ValueError(f"corpus already exists at {config.paths.corpus} (use --force to overwrite)")

    print(f"Generating {config.storm.n_events} events (seed {config.storm.seed})...")
    started = time.perf_counter()
    fields = generate_events(grid, config.storm)
    depths = simulate_corpus(grid, fields, config.oracle)
    manifest = write_corpus(
        config.paths.corpus, grid, fields, depths, config.storm, config.oracle, force=args.force
    )
    dry = sum(1 for f in fields if not f.intensity.any())
    print(f"✓ Corpus written: {config.paths.corpus} ({manifest['n_events']} events, {dry} dry)")
    print(f"  Corpus hash: {manifest['corpus_hash']}")
    print(f"  Config hash: {config_hash(config)}")
    print(f"  Elapsed: {time.perf_counter() - started:.1f} s")


def cmd_train(args):
    """Train the per-cell models of one experiment."""
    from floodsurrogate.corpus import load_corpus
    from floodsurrogate.eval_metrics import format_summary
    from floodsurrogate.pipeline import evaluate_store, train_all
    from floodsurrogate.run_config import resolve_workers
    from floodsurrogate.utils import format_seconds

    if args.log_file:
        _attach_log_file(args.log_file)
    config = _load_config(args)
    workers = resolve_workers(args.workers, config)
    grid = _load_grid(config)
    corpus = load_corpus(config.paths.corpus, grid)

    print(f"Training {args.experiment} on {grid.n_cells} cells with {workers} worker(s)...")
    store, summary = train_all(
        grid,
        corpus,
        args.experiment,
        config.hyperparams_for(args.experiment),
        config.split,
        config.paths.store,
        workers=workers,
        force=args.force,
        threshold=config.threshold,
    )
    print(
        f"✓ Trained {summary.trained} cells, skipped {summary.skipped} "
        f"({format_seconds(summary.elapsed_s)})"
    )
    print(f"  Store: {config.paths.store}")
    if summary.failed:
        print(f"  Failed cells ({len(summary.failed)}): {', '.join(map(str, summary.failed[:20]))}")
        print("  Rerun the same command to retry them")
        sys.exit(1)

    report = evaluate_store(store, grid, corpus, args.experiment, config.bins)
    print(f"\nTest-set summary ({args.experiment}, {len(store.split.test)} events):")
    print(format_summary(report))


def cmd_predict(args):
    """Predict a depth map for one storm."""
    from floodsurrogate.pipeline import build_combined, build_single, predict_event, save_depth_map

    config = _load_config(args)
    grid = _load_grid(config)
    field = _load_field(args, grid)

    started = time.perf_counter()
    store = _open_store(config)
    if args.combined:
        predictor = build_combined(store, store, grid)
        label = 'combined'
    else:
        predictor = build_single(store, args.experiment, grid)
        label = args.experiment
    load_s = time.perf_counter() - started

    result = predict_event(predictor, grid, field)
    output = args.output or os.path.join(config.paths.output, 'depth_map.csv')
    save_depth_map(result.depths, output)
    print(f"✓ Depth map ({label}): {output}")
    print(f"  Cells: {grid.n_cells}, max depth: {result.depths.max():.2f} ft")
    print(f"  Prediction time: {result.elapsed_s * 1000:.0f} ms (model load {load_s:.2f} s)")


def cmd_evaluate(args):
    """Evaluate every trained experiment on the held-out events."""
    from floodsurrogate.corpus import load_corpus
    from floodsurrogate.eval_metrics import (
        diff_report,
        format_summary,
        write_diff_csv,
        write_report_csv,
        write_report_json,
    )
    from floodsurrogate.pipeline import build_combined, evaluate_predictor, evaluate_store, held_out_events

    config = _load_config(args)
    edges = _bins(args, config)
    grid = _load_grid(config)
    corpus = load_corpus(config.paths.corpus, grid)
    store = _open_store(config)
    events = held_out_events(store, corpus)
    if not store.experiments:
        raise ValueError(f"store {config.paths.store} has no trained experiments")

    out = config.paths.output
    reports = {}
    for exp in store.experiments:
        report = evaluate_store(store, grid, corpus, exp, edges)
        reports[exp] = report
        write_report_json(report, os.path.join(out, f'report_{exp}.json'))
        write_report_csv(report, os.path.join(out, f'report_{exp}.csv'))
        print(f"\n{exp} ({len(events)} test events):")
        print(format_summary(report))
        _print_bins(report.bins)

    if {'exp1', 'exp2'} <= set(reports):
        combined = evaluate_predictor(
            build_combined(store, store, grid), grid, corpus, events, edges, label='combined'
        )
        write_report_json(combined, os.path.join(out, 'report_combined.json'))
        write_report_csv(combined, os.path.join(out, 'report_combined.csv'))
        print(f"\ncombined ({len(events)} test events):")
        print(format_summary(combined))
        _print_bins(combined.bins)

        diffs = diff_report(reports['exp1'], reports['exp2'])
        write_diff_csv(diffs, os.path.join(out, 'diff_exp1_exp2.csv'))
        improved = sum(1 for d in diffs if d.delta_r2 is not None and d.delta_r2 > 0)
        print(f"\nexp2 improves R2 on {improved} of {len(diffs)} cells")

    print(f"\n✓ Reports written to {out}")


def _print_bins(bins) -> None:
    for b in bins:
        rmse_text = 'n/a' if b.rmse is None else f"{b.rmse:.3f}"
        mape_text = 'n/a' if b.mape is None or b.mape.value is None else f"{b.mape.value:.1f}%"
        print(f"  {b.label:<28} n={b.n:<7} RMSE={rmse_text:<8} MAPE={mape_text}")


def cmd_importance(args):
    """Write per-cell feature importance above a threshold."""
    from floodsurrogate.pipeline import importance_table

    config = _load_config(args)
    store = _open_store(config)
    completed = store.completed_cells(args.experiment)
    cells = _parse_cells(args.cells)
    if cells is None:
        cells = completed
    unknown = sorted(set(cells) - set(completed))
    if unknown:
        raise ValueError(f"unknown cell id(s) for {args.experiment}: {unknown}")

    table = importance_table(store, args.experiment, cells, args.threshold)
    output = args.output or os.path.join(config.paths.output, f'importance_{args.experiment}.csv')
    os.makedirs(os.path.dirname(os.path.abspath(output)), exist_ok=True)
    table.to_csv(output, index=False, float_format='%.17g')

    if len(cells) <= 20:
        for cid in cells:
            rows = table[table['cell_id'] == cid]
            features = ', '.join(f"{r.feature} {r.importance:.2f}" for r in rows.itertuples())
            print(f"  cell {cid}: {features or '(none above threshold)'}")
    print(f"✓ Importance for {len(cells)} cells: {output}")


def cmd_ingest(args):
    """Interpolate a gage CSV to a per-cell hourly field."""
    from floodsurrogate.rainfall_ingest import ingest_event, load_gages, save_field

    config = _load_config(args)
    grid = _load_grid(config)
    gages = load_gages(args.gages)
    field = ingest_event(grid, gages)
    save_field(field, args.output)
    print(f"✓ Field written: {args.output} ({field.n_cells} cells x {field.n_hours} hours from {len(gages)} gages)")


def cmd_validate(args):
    """Binned comparison of predicted and stream-gage depths."""
    import pandas as pd

    from floodsurrogate.eval_metrics import gage_validation
    from floodsurrogate.grid_model import nearest_cell
    from floodsurrogate.pipeline import build_combined, build_single, predict_event
    from floodsurrogate.synthetic_oracle import simulate_peak_depth
    from floodsurrogate.utils import atomic_write_json

    config = _load_config(args)
    edges = _bins(args, config)
    grid = _load_grid(config)
    field = _load_field(args, grid)

    stream = pd.read_csv(args.stream_gages, float_precision='round_trip')
    expected = ['gage_id', 'x', 'y', 'observed_depth_ft']
    if list(stream.columns) != expected:
        raise ValueError(f"{args.stream_gages}: expected header {','.join(expected)}")
    cells = [nearest_cell(grid, (row.x, row.y)) for row in stream.itertuples()]
    if args.synthetic_truth:
        observed = simulate_peak_depth(grid, field, config.oracle)[cells]
    else:
        observed = stream['observed_depth_ft'].to_numpy(dtype=float)

    store = _open_store(config)
    predictors = {exp: build_single(store, exp, grid) for exp in store.experiments}
    if {'exp1', 'exp2'} <= set(predictors):
        predictors['combined'] = build_combined(store, store, grid)
    points = {
        name: (observed, predict_event(p, grid, field).depths[cells]) for name, p in predictors.items()
    }
    result = gage_validation(points, edges)
    output = args.output or os.path.join(config.paths.output, 'gage_validation.json')
    atomic_write_json(output, {'gages': stream['gage_id'].tolist(), 'cells': cells, 'experiments': result})

    for name, entry in result.items():
        rmse_text = 'n/a' if entry['rmse'] is None else f"{entry['rmse']:.3f}"
        print(f"{name}: n={entry['n']} RMSE={rmse_text} ft")
        for b in entry['bins']:
            mape = b['mape']['value'] if b['mape'] and b['mape']['value'] is not None else None
            mape_text = 'n/a' if mape is None else f"{mape:.1f}%"
            brmse = 'n/a' if b['rmse'] is None else f"{b['rmse']:.3f}"
            print(f"  {b['label']:<28} n={b['n']:<5} RMSE={brmse:<8} MAPE={mape_text}")
    print(f"✓ Gage validation: {output}")


if __name__ == '__main__':
    main()
