"""
Tests for grid loading, validation and the synthetic grid builder.
"""

import math

import numpy as np
import pytest

from floodsurrogate.grid_model import (
    GridParseError,
    GridValidationError,
    load_grid,
    make_synthetic_grid,
    nearest_cell,
    save_grid,
    upstream_cells,
    validate_grid,
    watershed_area,
)
from tests.unit.conftest import build_grid, chain_grid

HEADER = 'cell_id,x,y,area_sqft,kind,watershed_id,downstream_id\n'


def write_grid(tmp_path, rows, watersheds=None):
    path = tmp_path / 'grid.csv'
    path.write_text(HEADER + ''.join(r + '\n' for r in rows))
    if watersheds is not None:
        (tmp_path / 'watersheds.csv').write_text(
            'watershed_id,name\n' + ''.join(f'{i},{n}\n' for i, n in enumerate(watersheds))
        )
    return str(path)


# ─── load_grid ───────────────────────────────────────────────────────────────

class TestLoadGrid:

    def test_three_cells_one_watershed(self, tmp_path):
        path = write_grid(tmp_path, ['0,0,0,1,nonchannel,0,', '1,1,0,1,nonchannel,0,', '2,2,0,1,nonchannel,0,'])
        grid = load_grid(path)
        assert grid.n_cells == 3
        assert grid.n_watersheds == 1
        assert grid.watersheds[0].area == 3.0
        assert grid.n_channel == 0
        assert grid.n_non_channel == 3

    def test_drainage_cycle_rejected(self, tmp_path):
        path = write_grid(tmp_path, ['0,0,0,1,channel,0,1', '1,1,0,1,channel,0,0'])
        with pytest.raises(GridValidationError) as exc_info:
            load_grid(path)
        assert any('drainage cycle' in v for v in exc_info.value.violations)

    def test_watershed_out_of_range_is_parse_error(self, tmp_path):
        names = [f'w{i}' for i in range(9)]
        path = write_grid(tmp_path, ['0,0,0,1,nonchannel,0,', '1,1,0,1,nonchannel,9,'], watersheds=names)
        with pytest.raises(GridParseError) as exc_info:
            load_grid(path)
        assert exc_info.value.line == 3

    def test_bad_number_reports_line(self, tmp_path):
        path = write_grid(tmp_path, ['0,0,0,1,nonchannel,0,', '1,abc,0,1,nonchannel,0,'])
        with pytest.raises(GridParseError, match='line 3'):
            load_grid(path)

    def test_unknown_kind(self, tmp_path):
        path = write_grid(tmp_path, ['0,0,0,1,river,0,'])
        with pytest.raises(GridParseError, match='kind'):
            load_grid(path)

    def test_wrong_header(self, tmp_path):
        path = tmp_path / 'grid.csv'
        path.write_text('id,x,y\n0,0,0\n')
        with pytest.raises(GridParseError, match='header'):
            load_grid(str(path))

    def test_ids_must_be_dense(self, tmp_path):
        path = write_grid(tmp_path, ['0,0,0,1,nonchannel,0,', '2,1,0,1,nonchannel,0,'])
        with pytest.raises(GridParseError, match='dense'):
            load_grid(path)

    def test_non_positive_area(self, tmp_path):
        path = write_grid(tmp_path, ['0,0,0,0,nonchannel,0,'])
        with pytest.raises(GridValidationError, match='non-positive area'):
            load_grid(path)

    def test_sibling_watershed_file_names(self, tmp_path):
        path = write_grid(tmp_path, ['0,0,0,2,nonchannel,0,', '1,1,0,1,nonchannel,1,'], watersheds=['west', 'east'])
        grid = load_grid(path)
        assert [w.name for w in grid.watersheds] == ['west', 'east']
        assert grid.watersheds[0].area == 2.0
        assert grid.watersheds[1].area == 1.0

    def test_watershed_without_cells_rejected(self, tmp_path):
        path = write_grid(tmp_path, ['0,0,0,1,nonchannel,1,'], watersheds=['west', 'east'])
        with pytest.raises(GridValidationError, match='watershed 0 has no cells'):
            load_grid(path)


# ─── validate_grid ───────────────────────────────────────────────────────────

class TestValidateGrid:

    def test_valid_grid(self, three_cell_grid):
        assert validate_grid(three_cell_grid) == []

    def test_non_channel_with_downstream(self):
        grid = build_grid([(0, 0, 1, 'c', 0, None), (1, 0, 1, 'c', 0, 0), (2, 0, 1, 'n', 0, 0)])
        assert validate_grid(grid) == ['non-channel cell 2 has downstream']

    def test_watershed_area_mismatch(self, three_cell_grid):
        from dataclasses import replace

        bad = replace(three_cell_grid, watersheds=(replace(three_cell_grid.watersheds[0], area=11.0),))
        violations = validate_grid(bad)
        assert len(violations) == 1
        assert 'watershed 0' in violations[0]

    def test_drains_into_non_channel(self):
        grid = build_grid([(0, 0, 1, 'c', 0, 1), (1, 0, 1, 'n', 0, None)])
        assert validate_grid(grid) == ['cell 0 drains into non-channel cell 1']

    def test_forest_traversal_terminates(self, small_grid):
        for cell in small_grid.cells:
            if not cell.is_channel:
                continue
            steps, cur = 0, cell.id
            while small_grid.cells[cur].downstream is not None:
                cur = small_grid.cells[cur].downstream
                steps += 1
                assert steps <= small_grid.n_channel


# ─── watershed_area ──────────────────────────────────────────────────────────

class TestWatershedArea:

    def test_sum_of_members(self, three_cell_grid):
        assert watershed_area(three_cell_grid, 0) == 10.0

    def test_empty_watershed(self):
        grid = build_grid([(0, 0, 1, 'n', 0, None)], n_watersheds=2)
        assert watershed_area(grid, 1) == 0.0
        assert validate_grid(grid) == ['watershed 1 has no cells']

    def test_fractional_areas(self):
        grid = build_grid([(0, 0, 1.5, 'n', 0, None), (1, 0, 2.5, 'n', 0, None)])
        assert watershed_area(grid, 0) == 4.0

    def test_out_of_range(self, three_cell_grid):
        with pytest.raises(ValueError):
            watershed_area(three_cell_grid, 1)

    def test_watershed_totals_match_cell_total(self):
        grid = make_synthetic_grid(10, 12, n_watersheds=9)
        total = math.fsum(watershed_area(grid, w) for w in range(grid.n_watersheds))
        assert math.isclose(total, math.fsum(c.area for c in grid.cells), rel_tol=1e-9)


# ─── save / reload ───────────────────────────────────────────────────────────

def test_save_then_load_is_identical(tmp_path):
    grid = build_grid(
        [(0.1, 1 / 3, 2.25, 'c', 0, 1), (1e-7, 2.0, 7.125, 'c', 1, None), (3.5, 0.7, 1 / 7, 'n', 1, None)],
        n_watersheds=2,
        names=['upper', 'lower'],
    )
    path = str(tmp_path / 'out' / 'grid.csv')
    save_grid(grid, path)
    assert load_grid(path) == grid


# ─── synthetic grids and topology ────────────────────────────────────────────

class TestSyntheticGrid:

    def test_desk_grid_shape(self):
        grid = make_synthetic_grid(20, 20)
        assert grid.n_cells == 400
        assert grid.n_channel == 40
        assert grid.n_watersheds == 9
        assert validate_grid(grid) == []
        assert all(watershed_area(grid, w) > 0 for w in range(9))

    def test_deterministic(self):
        assert make_synthetic_grid(8, 9, 3) == make_synthetic_grid(8, 9, 3)

    def test_outlet_on_east_edge(self):
        grid = make_synthetic_grid(20, 20)
        outlets = [c for c in grid.cells if c.is_channel and c.downstream is None]
        assert len(outlets) == 1
        assert outlets[0].id % 20 == 19

    def test_outlet_sees_every_other_channel_cell(self):
        grid = make_synthetic_grid(20, 20)
        outlet = next(c.id for c in grid.cells if c.is_channel and c.downstream is None)
        assert len(upstream_cells(grid, outlet)) == grid.n_channel - 1

    def test_too_many_watersheds(self):
        with pytest.raises(ValueError):
            make_synthetic_grid(4, 3, n_watersheds=4)

    def test_channel_order_respects_drainage(self, small_grid):
        position = {cid: i for i, cid in enumerate(small_grid.channel_order)}
        for cid in position:
            down = small_grid.cells[cid].downstream
            if down is not None:
                assert position[cid] < position[down]


def test_upstream_cells_on_chain():
    grid = chain_grid(5)
    assert upstream_cells(grid, 4) == [0, 1, 2, 3]
    assert upstream_cells(grid, 0) == []


def test_nearest_cell_ties_to_lowest_id():
    grid = build_grid([(0, 0, 1, 'n', 0, None), (2, 0, 1, 'n', 0, None)])
    assert nearest_cell(grid, (1.0, 0.0)) == 0
    assert nearest_cell(grid, (1.9, 0.0)) == 1


def test_cached_arrays_are_read_only(small_grid):
    with pytest.raises(ValueError):
        small_grid.areas[0] = 1.0
    assert np.all(small_grid.areas == 1200.0 * 1200.0)
