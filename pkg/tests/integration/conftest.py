"""
Fixtures for integration tests: a desk-scale corpus with both experiments
trained once per session.
"""

import os

import pytest

from floodsurrogate.corpus import load_corpus, write_corpus
from floodsurrogate.gbdt import Hyperparams
from floodsurrogate.grid_model import make_synthetic_grid
from floodsurrogate.pipeline import ModelStore, SplitSpec, train_all
from floodsurrogate.synthetic_oracle import OracleParams, StormConfig, generate_events, simulate_corpus


def integration_workers():
    """Worker count for training: FLOODSURROGATE_WORKERS or every CPU."""
    value = os.environ.get("FLOODSURROGATE_WORKERS")
    return int(value) if value else (os.cpu_count() or 1)


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    """400-cell grid, 200 desk-preset events, exp1 and exp2 stores trained with defaults."""
    root = tmp_path_factory.mktemp("desk")
    grid = make_synthetic_grid(20, 20)
    storm = StormConfig.preset("desk")
    oracle = OracleParams()
    fields = generate_events(grid, storm)
    write_corpus(str(root / "corpus"), grid, fields, simulate_corpus(grid, fields, oracle), storm, oracle)
    corpus = load_corpus(str(root / "corpus"), grid)

    store_root = str(root / "store")
    for experiment in ("exp1", "exp2"):
        _, summary = train_all(
            grid, corpus, experiment, Hyperparams(), SplitSpec(), store_root,
            workers=integration_workers(), progress=False,
        )
        assert summary.failed == ()
    return grid, corpus, ModelStore.open(store_root)
