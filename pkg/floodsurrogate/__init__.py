"""
floodsurrogate - per-cell gradient-boosted surrogate for peak flood depth

This package trains one boosted regression-tree model per grid cell to
predict peak inundation depth from engineered rainfall features. Ground
truth comes from a synthetic hydrologic oracle, so every run is
reproducible from a config file and its seeds.

Usage:
    from floodsurrogate import make_synthetic_grid, generate_events, StormConfig

    grid = make_synthetic_grid(20, 20)
    fields = generate_events(grid, StormConfig.preset("desk"))

Most work goes through the command line:

    floodsurrogate-cli --config run.json generate
    floodsurrogate-cli --config run.json train exp1
    floodsurrogate-cli --config run.json train exp2
    floodsurrogate-cli --config run.json evaluate
"""

import logging

# Library convention: leave handlers and levels to the application.
logger = logging.getLogger('floodsurrogate')
logger.addHandler(logging.NullHandler())

from .grid_model import Cell, CellKind, Grid, load_grid, make_synthetic_grid, save_grid, validate_grid  # noqa: E402
from .rainfall_ingest import GageRecord, RainfallField, build_field, thiessen_assign  # noqa: E402
from .feature_engine import Experiment, build_matrix, fit_scaler, apply_scaler  # noqa: E402
from .synthetic_oracle import OracleParams, StormConfig, generate_events, simulate_peak_depth  # noqa: E402
from .gbdt import GbdtModel, Hyperparams, feature_importance, load_model, predict, save_model, train  # noqa: E402

__version__ = "0.1.0"
__all__ = [
    'Cell',
    'CellKind',
    'Grid',
    'load_grid',
    'save_grid',
    'validate_grid',
    'make_synthetic_grid',
    'GageRecord',
    'RainfallField',
    'thiessen_assign',
    'build_field',
    'Experiment',
    'build_matrix',
    'fit_scaler',
    'apply_scaler',
    'StormConfig',
    'OracleParams',
    'generate_events',
    'simulate_peak_depth',
    'Hyperparams',
    'GbdtModel',
    'train',
    'predict',
    'feature_importance',
    'save_model',
    'load_model',
]
