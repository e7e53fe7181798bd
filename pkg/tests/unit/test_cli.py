"""
Tests for the CLI module (floodsurrogate.cli).

Argument parsing and dispatch are checked with the command functions
mocked; a small end-to-end run drives the real commands on a 1x3 grid.
"""

import json
import os

import pandas as pd
import pytest
from unittest.mock import patch

from floodsurrogate.cli import main
from floodsurrogate.pipeline import TrainSummary


def run_cli(*argv):
    with patch('sys.argv', ['floodsurrogate-cli', *argv]):
        main()


def run_cli_error(*argv):
    with pytest.raises(SystemExit) as exc_info:
        run_cli(*argv)
    return exc_info.value.code


# ─── main() argument parsing & dispatch ───────────────────────────────────────

class TestMainDispatch:

    def test_no_command_exits_with_error(self):
        """No subcommand → print help and exit(1)."""
        assert run_cli_error() == 1

    @patch('floodsurrogate.cli.cmd_train')
    def test_train_command(self, mock_cmd):
        run_cli('--workers', '4', '--seed', '9', 'train', 'exp2', '--log-file', 'train.log')
        args = mock_cmd.call_args[0][0]
        assert args.experiment == 'exp2'
        assert args.workers == 4
        assert args.seed == 9
        assert args.log_file == 'train.log'
        assert args.force is False

    def test_invalid_experiment_is_usage_error(self):
        assert run_cli_error('train', 'exp3') == 2

    @patch('floodsurrogate.cli.cmd_predict')
    def test_predict_defaults(self, mock_cmd):
        run_cli('predict', '--rainfall', 'storm.csv')
        args = mock_cmd.call_args[0][0]
        assert args.rainfall == 'storm.csv'
        assert args.gages is None
        assert args.combined is False
        assert args.experiment == 'exp1'

    def test_predict_needs_one_source(self):
        assert run_cli_error('predict') == 2
        assert run_cli_error('predict', '--rainfall', 'a.csv', '--gages', 'b.csv') == 2

    @patch('floodsurrogate.cli.cmd_importance')
    def test_importance_defaults(self, mock_cmd):
        run_cli('importance')
        args = mock_cmd.call_args[0][0]
        assert args.experiment == 'exp2'
        assert args.threshold == 0.10
        assert args.cells is None

    @patch('floodsurrogate.cli.cmd_generate', side_effect=ValueError('boom'))
    def test_value_error_exits_1(self, _mock, capsys):
        assert run_cli_error('generate') == 1
        assert 'Error: boom' in capsys.readouterr().err

    @patch('floodsurrogate.cli.cmd_train', side_effect=KeyboardInterrupt)
    def test_interrupt_exits_130(self, _mock, capsys):
        assert run_cli_error('train', 'exp1') == 130
        assert 'resume' in capsys.readouterr().err


# ─── end to end on a tiny grid ────────────────────────────────────────────────

TINY_CONFIG = {
    'grid_preset': {'rows': 1, 'cols': 3, 'n_watersheds': 1, 'channel_fraction': 0.34},
    'storm': {'n_events': 12, 'n_hours': [6, 8], 'width_hours': [1.0, 3.0], 'seed': 5},
    'hyperparams': {
        'exp1': {'n_trees': 5, 'learning_rate': 0.3, 'colsample_bytree': 1.0},
        'exp2': {'n_trees': 5, 'learning_rate': 0.3, 'colsample_bytree': 1.0},
    },
}


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / 'run.json'
    path.write_text(json.dumps(TINY_CONFIG))
    return str(path)


class TestEndToEnd:

    def test_train_before_generate(self, config_path, capsys):
        assert run_cli_error('--config', config_path, 'train', 'exp1') == 1
        assert "run 'generate' first" in capsys.readouterr().err

    def test_generate_is_reproducible(self, config_path, tmp_path, capsys):
        run_cli('--config', config_path, 'generate')
        first = json.loads((tmp_path / 'corpus' / 'corpus.json').read_text())['corpus_hash']
        assert run_cli_error('--config', config_path, 'generate') == 1
        run_cli('--config', config_path, '--force', 'generate')
        second = json.loads((tmp_path / 'corpus' / 'corpus.json').read_text())['corpus_hash']
        assert first == second
        assert '✓ Corpus written' in capsys.readouterr().out

    def test_full_run(self, config_path, tmp_path, capsys):
        run_cli('--config', config_path, 'generate')
        run_cli('--config', config_path, 'train', 'exp1')
        run_cli('--config', config_path, 'train', 'exp2')
        out = capsys.readouterr().out
        assert 'Trained 3 cells' in out
        assert 'Channel' in out

        run_cli('--config', config_path, 'evaluate', '--bins', '15,25')
        for name in ('report_exp1.json', 'report_exp2.csv', 'report_combined.json', 'diff_exp1_exp2.csv'):
            assert (tmp_path / 'output' / name).exists()

        field = tmp_path / 'corpus' / 'events' / '0000' / 'rainfall.csv'
        run_cli('--config', config_path, 'predict', '--rainfall', str(field), '--combined')
        depth_map = pd.read_csv(tmp_path / 'output' / 'depth_map.csv')
        assert depth_map['cell_id'].tolist() == [0, 1, 2]

        run_cli('--config', config_path, 'importance', '--threshold', '1.1')
        table = pd.read_csv(tmp_path / 'output' / 'importance_exp2.csv')
        assert table.empty
        assert '(none above threshold)' in capsys.readouterr().out

    def test_predict_wrong_cell_count(self, config_path, tmp_path, capsys):
        run_cli('--config', config_path, 'generate')
        bad = tmp_path / 'bad.csv'
        bad.write_text('cell_id,hour,intensity_in_per_hr\n0,0,1.0\n1,0,1.0\n')
        assert run_cli_error('--config', config_path, 'predict', '--rainfall', str(bad)) == 1
        assert 'grid has 3' in capsys.readouterr().err

    def test_ingest(self, config_path, tmp_path):
        run_cli('--config', config_path, 'generate')
        gages = tmp_path / 'gages.csv'
        gages.write_text(
            'gage_id,x,y,t_minutes,depth_in\n'
            '1,0,600,0,0.5\n1,0,600,15,0.5\n1,0,600,30,0\n1,0,600,45,0\n'
            '2,3600,600,0,0\n2,3600,600,15,0\n2,3600,600,30,0.25\n2,3600,600,45,0\n'
        )
        output = tmp_path / 'field.csv'
        run_cli('--config', config_path, 'ingest', '--gages', str(gages), '--output', str(output))
        frame = pd.read_csv(output)
        assert frame['intensity_in_per_hr'].tolist() == [1.0, 1.0, 0.25]
        assert os.path.exists(tmp_path / 'grid.csv')

    def test_validate_against_oracle(self, config_path, tmp_path, capsys):
        run_cli('--config', config_path, 'generate')
        run_cli('--config', config_path, 'train', 'exp1')
        run_cli('--config', config_path, 'train', 'exp2')
        gages = tmp_path / 'gages.csv'
        gages.write_text(
            'gage_id,x,y,t_minutes,depth_in\n'
            '1,0,600,0,0.5\n1,0,600,15,0.5\n1,0,600,30,0\n1,0,600,45,0\n'
        )
        stream = tmp_path / 'stream.csv'
        stream.write_text('gage_id,x,y,observed_depth_ft\n10,600,600,0\n11,3000,600,0\n')
        run_cli(
            '--config', config_path, 'validate',
            '--gages', str(gages), '--stream-gages', str(stream), '--synthetic-truth',
        )
        result = json.loads((tmp_path / 'output' / 'gage_validation.json').read_text())
        assert result['gages'] == [10, 11]
        assert result['cells'] == [0, 2]
        assert set(result['experiments']) == {'exp1', 'exp2', 'combined'}
        assert result['experiments']['combined']['n'] == 2
        assert '✓ Gage validation' in capsys.readouterr().out

    def test_validate_bad_header(self, config_path, tmp_path, capsys):
        run_cli('--config', config_path, 'generate')
        gages = tmp_path / 'gages.csv'
        gages.write_text('gage_id,x,y,t_minutes,depth_in\n' + ''.join(f'1,0,0,{t},0.1\n' for t in (0, 15, 30, 45)))
        stream = tmp_path / 'stream.csv'
        stream.write_text('id,x,y,depth\n1,0,0,1.0\n')
        code = run_cli_error(
            '--config', config_path, 'validate',
            '--gages', str(gages), '--stream-gages', str(stream),
        )
        assert code == 1
        assert 'expected header' in capsys.readouterr().err

    def test_failed_cells_exit_1(self, config_path, capsys):
        run_cli('--config', config_path, 'generate')
        summary = TrainSummary(trained=2, skipped=0, failed=(1,), elapsed_s=0.5)
        with patch('floodsurrogate.pipeline.train_all', return_value=(None, summary)):
            assert run_cli_error('--config', config_path, 'train', 'exp1') == 1
        out = capsys.readouterr().out
        assert 'Failed cells (1): 1' in out
        assert 'Test-set summary' not in out

    def test_bad_threshold_in_config(self, tmp_path, capsys):
        path = tmp_path / 'bad.json'
        path.write_text(json.dumps({**TINY_CONFIG, 'threshold': 'high'}))
        assert run_cli_error('--config', str(path), 'generate') == 1
        assert "Error: 'threshold' must be a number" in capsys.readouterr().err
