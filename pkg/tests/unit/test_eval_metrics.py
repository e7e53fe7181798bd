"""
Tests for evaluation metrics, binned tables and report exports.
"""

import json
import math

import numpy as np
import pandas as pd
import pytest

from floodsurrogate.eval_metrics import (
    CellMetrics,
    UndefinedMetricError,
    binned_report,
    build_report,
    diff_report,
    format_summary,
    gage_validation,
    kind_aggregate,
    mape,
    parse_bins,
    r_squared,
    rmse,
    write_diff_csv,
    write_report_csv,
    write_report_json,
)
from tests.unit.conftest import build_grid


def four_cell_grid():
    """Cell 0 is the only channel cell."""
    return build_grid(
        [(0, 0, 1, 'c', 0, None), (1, 0, 1, 'n', 0, None), (2, 0, 1, 'n', 0, None), (3, 0, 1, 'n', 0, None)]
    )


# ─── point metrics ───────────────────────────────────────────────────────────

class TestRSquared:

    def test_perfect(self):
        assert r_squared([1, 2, 3], [1, 2, 3]) == 1.0

    def test_mean_prediction(self):
        assert r_squared([1, 2, 3], [2, 2, 2]) == 0.0

    def test_hand_value(self):
        assert r_squared([1, 2, 3, 4], [1.1, 1.9, 3.2, 3.8]) == pytest.approx(0.98, abs=1e-9)

    def test_constant_truth(self):
        with pytest.raises(UndefinedMetricError, match='undefined R2'):
            r_squared([2, 2, 2], [1, 2, 3])


class TestRmse:

    def test_identical(self):
        assert rmse([1.0, 5.0], [1.0, 5.0]) == 0.0

    def test_hand_value(self):
        assert rmse([0.0, 0.0], [3.0, -4.0]) == pytest.approx(math.sqrt(12.5), abs=1e-9)

    def test_single_point(self):
        assert rmse([2.0], [-1.5]) == 3.5

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match='length mismatch'):
            rmse([1.0], [1.0, 2.0])


class TestMape:

    def test_hand_value(self):
        result = mape([10, 20], [11, 18])
        assert result.value == pytest.approx(10.0, abs=1e-9)
        assert (result.n_used, result.n_excluded) == (2, 0)

    def test_exact(self):
        assert mape([1, 2], [1, 2]).value == 0.0

    def test_zero_truth_excluded(self):
        result = mape([0, 10], [1, 10])
        assert result.value == 0.0
        assert result.n_excluded == 1

    def test_all_excluded(self):
        result = mape([0, 0], [1, 2])
        assert result.value is None
        assert result.n_excluded == 2


# ─── bins ────────────────────────────────────────────────────────────────────

class TestBinnedReport:

    def test_one_point_per_bin(self):
        bins = binned_report([10, 20, 30], [10, 20, 30], [15, 25])
        assert [b.n for b in bins] == [1, 1, 1]
        assert [b.label for b in bins] == ['< 15 ft', '>= 15 ft and < 25 ft', '>= 25 ft']

    def test_closed_left_boundary(self):
        bins = binned_report([15.0], [14.0], [15, 25])
        assert [b.n for b in bins] == [0, 1, 0]
        assert bins[0].rmse is None

    def test_hand_rmse_per_bin(self):
        truth = [5, 10, 16, 20, 26, 40]
        pred = [6, 8, 16, 23, 30, 37]
        bins = binned_report(truth, pred, [15, 25])
        assert bins[0].rmse == pytest.approx(math.sqrt((1 + 4) / 2), abs=1e-9)
        assert bins[1].rmse == pytest.approx(math.sqrt((0 + 9) / 2), abs=1e-9)
        assert bins[2].rmse == pytest.approx(math.sqrt((16 + 9) / 2), abs=1e-9)

    def test_parse_bins(self):
        assert parse_bins('15,25') == (15.0, 25.0)
        assert parse_bins('shallow') == (8.0, 15.0)
        with pytest.raises(ValueError, match='increasing'):
            parse_bins('25,15')
        with pytest.raises(ValueError, match='comma-separated'):
            parse_bins('deep-ish')


# ─── aggregates ──────────────────────────────────────────────────────────────

class TestKindAggregate:

    def test_unweighted_means(self):
        grid = four_cell_grid()
        metrics = [CellMetrics(0, True, 0.8, 1.0, 5)] + [CellMetrics(i, False, 1.0, 0.0, 5) for i in (1, 2, 3)]
        agg = kind_aggregate(grid, metrics)
        assert agg.channel == pytest.approx(0.8)
        assert agg.non_channel == 1.0
        assert agg.overall == pytest.approx(0.95)

    def test_single_cell(self):
        grid = build_grid([(0, 0, 1, 'n', 0, None)])
        agg = kind_aggregate(grid, [CellMetrics(0, False, 0.6, 1.0, 3)])
        assert agg.non_channel == agg.overall == 0.6

    def test_no_channel_cells(self):
        grid = build_grid([(0, 0, 1, 'n', 0, None), (1, 0, 1, 'n', 0, None)])
        agg = kind_aggregate(grid, [CellMetrics(0, False, 0.5, 1.0, 3), CellMetrics(1, False, 0.7, 1.0, 3)])
        assert agg.channel is None
        assert agg.n_channel == 0

    def test_undefined_cells_counted(self):
        grid = four_cell_grid()
        metrics = [CellMetrics(0, True, None, 1.0, 5), CellMetrics(1, False, 0.5, 1.0, 5)]
        agg = kind_aggregate(grid, metrics)
        assert agg.n_excluded == 1
        assert agg.overall == 0.5


# ─── reports ─────────────────────────────────────────────────────────────────

def _report(grid, offset=0.0, label='a'):
    truth = np.array([[1.0, 2.0, 3.0, 4.0], [2.0, 2.0, 5.0, 1.0], [3.0, 2.0, 4.0, 0.0]])
    pred = truth + offset
    return build_report(grid, truth, pred, (15.0, 25.0), label=label)


class TestReports:

    def test_constant_truth_cell_excluded(self):
        report = _report(four_cell_grid())
        assert report.n_undefined_r2 == 1
        assert report.by_cell()[1].r2 is None
        assert report.r2.n_excluded == 1
        assert report.n_points == 12

    def test_identical_reports_diff_to_zero(self):
        grid = four_cell_grid()
        diffs = diff_report(_report(grid), _report(grid))
        assert all(d.delta_rmse == 0.0 for d in diffs)
        assert all(d.delta_r2 in (0.0, None) for d in diffs)

    def test_diff_signs(self):
        grid = four_cell_grid()
        worse = _report(grid, offset=1.0)
        better = _report(grid, offset=0.0)
        diffs = {d.cell_id: d for d in diff_report(worse, better)}
        assert diffs[0].delta_rmse == pytest.approx(1.0)
        assert diffs[0].delta_r2 > 0

    def test_diff_needs_same_cells(self):
        grid = four_cell_grid()
        partial = build_report(grid, np.ones((2, 1)), np.ones((2, 1)), cell_ids=[2])
        with pytest.raises(ValueError, match='different cells'):
            diff_report(_report(grid), partial)

    def test_exports(self, tmp_path):
        grid = four_cell_grid()
        report = _report(grid, offset=0.5, label='exp1')
        write_report_json(report, str(tmp_path / 'r.json'))
        write_report_csv(report, str(tmp_path / 'r.csv'))
        write_diff_csv(diff_report(report, report), str(tmp_path / 'd.csv'))
        payload = json.loads((tmp_path / 'r.json').read_text())
        assert payload['label'] == 'exp1'
        assert len(payload['bins']) == 3
        frame = pd.read_csv(tmp_path / 'r.csv')
        assert frame['kind'].tolist() == ['channel', 'nonchannel', 'nonchannel', 'nonchannel']
        assert list(pd.read_csv(tmp_path / 'd.csv').columns) == ['cell_id', 'delta_r2', 'delta_rmse']

    def test_summary_mentions_excluded(self):
        text = format_summary(_report(four_cell_grid()))
        assert 'Channel' in text
        assert '1 cells with undefined R2' in text


def test_gage_validation():
    result = gage_validation({'exp1': ([10.0, 20.0], [11.0, 18.0]), 'exp2': ([], [])})
    assert result['exp1']['n'] == 2
    assert result['exp1']['mape']['value'] == pytest.approx(10.0)
    assert [b['n'] for b in result['exp1']['bins']] == [1, 1, 0]
    assert result['exp2']['rmse'] is None
