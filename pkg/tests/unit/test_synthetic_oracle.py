"""
Tests for the storm generator and the peak-depth oracle.
"""

import logging

import numpy as np
import pytest

from floodsurrogate.synthetic_oracle import (
    OracleError,
    OracleParams,
    StormConfig,
    generate_events,
    simulate_corpus,
    simulate_peak_depth,
)
from tests.unit.conftest import build_grid, chain_grid, make_field


def rain_on(n_cells, cell_rows):
    """Field with the given hourly rows on selected cells and zero elsewhere."""
    n_hours = len(next(iter(cell_rows.values())))
    rows = np.zeros((n_cells, n_hours))
    for cid, row in cell_rows.items():
        rows[cid] = row
    return make_field(rows)


# ─── oracle ──────────────────────────────────────────────────────────────────

class TestSimulatePeakDepth:

    def test_upstream_runoff_reaches_outlet(self):
        grid = chain_grid(5)
        depth = simulate_peak_depth(grid, rain_on(6, {0: [3.0]}), OracleParams())
        runoff = 0.9 * (3.0 - 0.5) * (1 + 3.0 / 4.0)
        # One watershed of six unit cells: catchment mean runoff is runoff / 6.
        assert depth[0] == pytest.approx(runoff + 1.5 * runoff / 6)
        for cid in (1, 2, 3, 4):
            assert depth[cid] == pytest.approx(1.5 * runoff / 6)
        assert depth[5] == 0.0

    def test_outlet_sees_upstream_watershed(self):
        # Watershed 0: channel chain 0 -> 1 over non-channel cell 2.
        # Watershed 1: channel cell 3 (the outlet) and non-channel cell 4.
        grid = build_grid(
            [(0, 0, 1.0, 'c', 0, 1), (1, 0, 1.0, 'c', 0, 3), (2, 1, 2.0, 'n', 0, None),
             (3, 0, 1.0, 'c', 1, None), (4, 1, 1.0, 'n', 1, None)],
            n_watersheds=2,
        )
        depth = simulate_peak_depth(grid, rain_on(5, {2: [2.0, 1.5]}), OracleParams())
        runoff = 0.6 * (3.5 - 0.5) * (1 + 2.0 / 3.0)
        upstream = 2.0 * runoff / 4.0
        assert depth[0] == pytest.approx(1.5 * upstream)
        assert depth[1] == pytest.approx(1.5 * upstream)
        assert depth[3] == pytest.approx(1.5 * 2.0 * runoff / 6.0)
        assert depth[4] == 0.0

    def test_routed_flow_dominates_channel_depth(self, small_grid):
        rng = np.random.default_rng(9)
        params = OracleParams()
        no_routing = OracleParams(routing_weight=0.0)
        channel = small_grid.channel_mask
        for _ in range(5):
            field = make_field(rng.uniform(0.0, 1.0, size=(small_grid.n_cells, 6)))
            full = simulate_peak_depth(small_grid, field, params)
            local = simulate_peak_depth(small_grid, field, no_routing)
            routed = full[channel] - local[channel]
            assert routed.sum() > 0.3 * full[channel].sum()
            assert np.array_equal(full[~channel], local[~channel])

    def test_dry_event(self):
        grid = chain_grid(3)
        depth = simulate_peak_depth(grid, make_field(np.zeros((4, 5))), OracleParams())
        assert not depth.any()

    def test_rain_below_infiltration(self):
        grid = chain_grid(3)
        depth = simulate_peak_depth(grid, make_field(np.full((4, 2), 0.2)), OracleParams())
        assert not depth.any()

    def test_non_channel_depends_only_on_own_rain(self):
        grid = chain_grid(3)
        params = OracleParams()
        base = simulate_peak_depth(grid, rain_on(4, {3: [1.0, 2.0]}), params)
        wetter = simulate_peak_depth(grid, rain_on(4, {0: [4.0, 4.0], 1: [1.0, 0.0], 3: [1.0, 2.0]}), params)
        assert base[3] == wetter[3]
        assert base[3] == pytest.approx(0.6 * 2.5 * (1 + 2.0 / 3.0))

    def test_monotone_in_rainfall(self, small_grid):
        rng = np.random.default_rng(5)
        params = OracleParams()
        rows = rng.uniform(0, 1.5, size=(small_grid.n_cells, 8))
        lower = simulate_peak_depth(small_grid, make_field(rows), params)
        higher = simulate_peak_depth(small_grid, make_field(rows * 1.5), params)
        assert np.all(higher >= lower)

    def test_depth_capped(self):
        grid = chain_grid(2)
        depth = simulate_peak_depth(grid, make_field(np.full((3, 24), 10.0)), OracleParams(depth_cap_ft=5.0))
        assert depth.max() == 5.0

    def test_cell_count_mismatch(self):
        with pytest.raises(OracleError, match='grid has 6'):
            simulate_peak_depth(chain_grid(5), make_field(np.zeros((2, 2))), OracleParams())

    def test_corpus_shape(self):
        grid = chain_grid(2)
        depths = simulate_corpus(grid, [make_field(np.ones((3, 2)))] * 4, OracleParams())
        assert depths.shape == (4, 3)


def test_oracle_params_validation():
    with pytest.raises(ValueError):
        OracleParams(runoff_coef_channel=0.0)
    with pytest.raises(ValueError):
        OracleParams(peak_half=0.0)
    assert OracleParams.from_dict(OracleParams().to_dict()) == OracleParams()
    with pytest.raises(ValueError, match='unknown'):
        OracleParams.from_dict({'rain_factor': 2})


# ─── storm generator ─────────────────────────────────────────────────────────

FAST_STORMS = StormConfig(n_events=6, n_hours=(6, 10), width_hours=(1.0, 3.0), seed=11)


class TestGenerateEvents:

    def test_same_seed_same_fields(self, small_grid):
        a = generate_events(small_grid, FAST_STORMS)
        b = generate_events(small_grid, FAST_STORMS)
        assert all(x.equals(y) for x, y in zip(a, b))

    def test_different_seed_differs(self, small_grid):
        a = generate_events(small_grid, FAST_STORMS)
        b = generate_events(small_grid, FAST_STORMS.with_seed(12))
        assert not all(x.equals(y) for x, y in zip(a, b))

    def test_shape_and_floor(self, small_grid):
        for field in generate_events(small_grid, FAST_STORMS):
            assert field.n_cells == small_grid.n_cells
            assert 6 <= field.n_hours <= 10
            wet = field.intensity[field.intensity > 0]
            assert np.all(wet >= FAST_STORMS.min_intensity)

    def test_all_null_events_warn(self, small_grid, caplog):
        config = StormConfig(n_events=3, n_hours=(4, 4), null_event_fraction=1.0, seed=1)
        with caplog.at_level(logging.WARNING, logger='floodsurrogate.synthetic_oracle'):
            fields = generate_events(small_grid, config)
        assert all(not f.intensity.any() for f in fields)
        assert 'dry' in caplog.text

    def test_zero_intensity_range_gives_dry_fields(self, small_grid, caplog):
        config = StormConfig(n_events=4, n_hours=(4, 6), intensity_in_per_hr=(0.0, 0.0), seed=3)
        with caplog.at_level(logging.WARNING, logger='floodsurrogate.synthetic_oracle'):
            fields = generate_events(small_grid, config)
        assert len(fields) == 4
        assert all(not f.intensity.any() for f in fields)
        assert 'dry' in caplog.text

    def test_domain_sized_storm_is_near_uniform(self, small_grid):
        config = StormConfig(
            n_events=5, n_hours=(12, 12), n_centers=(1, 1), radius_ft=(1e7, 1e7),
            intensity_in_per_hr=(0.5, 1.0), width_hours=(2.0, 3.0), seed=4,
        )
        for field in generate_events(small_grid, config):
            cumulative = field.intensity.sum(axis=1)
            assert cumulative.mean() > 0
            assert cumulative.std() / cumulative.mean() < 0.1

    def test_small_storms_are_localized(self, small_grid):
        config = StormConfig(
            n_events=5, n_hours=(12, 12), n_centers=(1, 1), radius_ft=(500.0, 500.0),
            intensity_in_per_hr=(1.0, 1.0), width_hours=(2.0, 2.0), seed=4,
        )
        for field in generate_events(small_grid, config):
            cumulative = field.intensity.sum(axis=1)
            assert cumulative.std() / cumulative.mean() > 1.0


class TestStormConfig:

    def test_presets(self):
        assert StormConfig.preset('full').n_events == 592
        desk = StormConfig.preset('desk')
        assert desk.n_events == 200
        assert desk.null_event_fraction == 0.05
        with pytest.raises(ValueError, match='preset'):
            StormConfig.preset('huge')

    def test_dict_round_trip(self):
        assert StormConfig.from_dict(FAST_STORMS.to_dict()) == FAST_STORMS

    def test_inverted_range(self):
        with pytest.raises(ValueError, match='n_hours'):
            StormConfig(n_hours=(10, 5))

    def test_null_fraction_bounds(self):
        with pytest.raises(ValueError):
            StormConfig(null_event_fraction=1.5)
