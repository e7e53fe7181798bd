"""
Shared pytest fixtures for floodsurrogate unit tests.

Small hand-built grids and fields live here so each test file does not
need to redefine them. Builders are plain functions so tests can also
call them with their own arguments.
"""

import math

import numpy as np
import pytest

from floodsurrogate.corpus import load_corpus, write_corpus
from floodsurrogate.gbdt import Hyperparams
from floodsurrogate.grid_model import Cell, CellKind, Grid, Watershed, make_synthetic_grid
from floodsurrogate.rainfall_ingest import GageRecord, RainfallField
from floodsurrogate.synthetic_oracle import OracleParams, StormConfig, generate_events, simulate_corpus


# ─── grid builders ───────────────────────────────────────────────────────────

def build_grid(cells, n_watersheds=1, names=None):
    """Build a Grid from ``(x, y, area, kind, watershed, downstream)`` tuples.

    ``kind`` is 'c' for channel and 'n' for non-channel; cell ids follow
    list order. Watershed areas are the exact member sums.
    """
    built = []
    for i, (x, y, area, kind, ws, down) in enumerate(cells):
        built.append(
            Cell(
                id=i,
                x=float(x),
                y=float(y),
                area=float(area),
                kind=CellKind.CHANNEL if kind == 'c' else CellKind.NON_CHANNEL,
                watershed=ws,
                downstream=down,
            )
        )
    watersheds = tuple(
        Watershed(
            id=w,
            name=(names[w] if names else f"watershed_{w}"),
            area=math.fsum(c.area for c in built if c.watershed == w),
        )
        for w in range(n_watersheds)
    )
    return Grid(cells=tuple(built), watersheds=watersheds)


def chain_grid(length=5):
    """Channel chain 0 -> 1 -> ... -> length-1 plus one non-channel cell, one watershed."""
    cells = [(i, 0, 1.0, 'c', 0, i + 1 if i + 1 < length else None) for i in range(length)]
    cells.append((0, 5, 1.0, 'n', 0, None))
    return build_grid(cells)


def make_gage(gage_id, location, depths, start=0):
    depths = np.asarray(depths, dtype=float)
    times = start + 15 * np.arange(depths.size)
    return GageRecord(gage_id=gage_id, location=location, times=times, depths=depths)


def make_field(rows):
    return RainfallField(np.asarray(rows, dtype=float))


@pytest.fixture
def three_cell_grid():
    """Three non-channel cells in one watershed, areas 2, 3, 5."""
    return build_grid([(0, 0, 2, 'n', 0, None), (1, 0, 3, 'n', 0, None), (2, 0, 5, 'n', 0, None)])


@pytest.fixture
def two_watershed_grid():
    """Four cells: watershed 0 = {0, 1} (channel 0 -> 1), watershed 1 = {2, 3}."""
    return build_grid(
        [
            (0, 0, 1.0, 'c', 0, 1),
            (1, 0, 1.0, 'c', 0, None),
            (2, 0, 2.0, 'n', 1, None),
            (3, 0, 2.0, 'n', 1, None),
        ],
        n_watersheds=2,
    )


@pytest.fixture
def small_grid():
    """6x6 synthetic grid with 3 watersheds and a short river."""
    return make_synthetic_grid(6, 6, n_watersheds=3, channel_fraction=0.2)


# ─── corpus and training fixtures ───────────────────────────────────────────

FAST_HP = Hyperparams(learning_rate=0.3, n_trees=15, max_depth=3, colsample_bytree=1.0, seed=7)


def write_small_corpus(root, grid, n_events=20, seed=3):
    storm = StormConfig(n_events=n_events, n_hours=(6, 12), width_hours=(1.0, 3.0), seed=seed)
    oracle = OracleParams()
    fields = generate_events(grid, storm)
    depths = simulate_corpus(grid, fields, oracle)
    write_corpus(str(root), grid, fields, depths, storm, oracle)
    return load_corpus(str(root), grid)


@pytest.fixture
def tiny_grid():
    """1x3 grid, one watershed; the east cell is a channel cell."""
    return make_synthetic_grid(1, 3, n_watersheds=1, channel_fraction=0.34)


@pytest.fixture
def tiny_corpus(tmp_path, tiny_grid):
    return write_small_corpus(tmp_path / 'corpus', tiny_grid)
