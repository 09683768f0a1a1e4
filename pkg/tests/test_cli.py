# -*- coding: utf-8 -*-
"""
Command line surface
"""
import json

import pandas as pd
import pytest
from click.testing import CliRunner

from app import cli


@pytest.fixture
def runner():
    return CliRunner()


def invoke(runner, *args):
    return runner.invoke(cli, [str(a) for a in args], catch_exceptions=False)


def write_importance(path, rows):
    frame = pd.DataFrame(rows, columns=['t0', 't1', 't2', 't3', 't4', 't5'])
    frame.insert(0, 'variant_id', [f"v{j + 1}" for j in range(len(rows))])
    frame.to_csv(path, index=False)


def test_counts_reference_network(runner, tmp_path):
    result = invoke(runner, 'counts', '--p', 1000, '--m', 5, '--first-hidden', 6000,
                    '--out', tmp_path)
    assert result.exit_code == 0
    assert 'levels=0: weights=36054089' in result.output
    assert 'levels=2: weights=29489' in result.output
    counts = pd.read_csv(tmp_path / 'counts.csv')
    assert counts.groupby('levels')['weights'].sum()[1] == 6_061_089
    assert json.loads((tmp_path / 'manifest.json').read_text())['command'] == 'counts'


def test_select_writes_one_column_per_alpha(runner, tmp_path):
    rows = [[10.0 + j, 0, 0, 0, 0, 0] for j in range(12)] + [[0, 1, 0, 0, 0, 0]] * 3
    write_importance(tmp_path / 'importance.csv', rows)
    result = invoke(runner, 'select', '--importance', tmp_path / 'importance.csv',
                    '--alpha', 0.1, '--alpha', 0.2, '--m', 5, '--out', tmp_path / 'sel')
    assert result.exit_code == 0
    frame = pd.read_csv(tmp_path / 'sel' / 'selection.csv')
    assert frame['selected@0.10'].sum() == 12
    assert frame['selected@0.20'].sum() == 12
    assert frame.loc[12:, 'selected@0.20'].sum() == 0


def test_errors_exit_with_their_code(runner, tmp_path):
    write_importance(tmp_path / 'importance.csv', [[1, 0, 0, 0, 0, 0]])
    result = invoke(runner, 'select', '--importance', tmp_path / 'importance.csv', '--m', 3,
                    '--out', tmp_path / 'sel')
    assert result.exit_code == 2
    record = json.loads((tmp_path / 'sel' / 'error.json').read_text())
    assert record['type'] == 'ValidationError'
    assert record['exit_code'] == 2


def test_invalid_config_exits_with_validation_code(runner, tmp_path):
    config = tmp_path / 'bad.json'
    config.write_text(json.dumps({'cv_folds': 1}))
    result = invoke(runner, 'counts', '--p', 10, '--m', 2, '--config', config, '--out', tmp_path)
    assert result.exit_code == 2


def test_simulate_knockoff_baseline_train_chain(runner, tmp_path):
    common = ['--profile', 'testing', '--seed', 7]
    sim = tmp_path / 'sim'
    assert invoke(runner, 'simulate', *common, '--out', sim).exit_code == 0
    for name in ('genotypes.csv', 'variants.csv', 'trait.csv', 'replicate.json', 'manifest.json'):
        assert (sim / name).exists()
    replicate = json.loads((sim / 'replicate.json').read_text())
    assert len(replicate['causal']) == 4

    ko = tmp_path / 'ko'
    assert invoke(runner, 'knockoff', *common, '--genotypes', sim / 'genotypes.csv',
                  '--m', 2, '--window', 5, '--out', ko).exit_code == 0
    assert (ko / 'knockoff_diagnostics.json').exists()

    inputs = ['--genotypes', sim / 'genotypes.csv', '--knockoffs', ko / 'knockoffs.csv',
              '--trait-file', sim / 'trait.csv']
    base = tmp_path / 'base'
    assert invoke(runner, 'baseline', *common, *inputs, '--method', 'marginal',
                  '--out', base).exit_code == 0
    selection = pd.read_csv(base / 'selection_marginal.csv')
    assert list(selection.columns[:2]) == ['method', 'variant_id']

    fit = tmp_path / 'fit'
    assert invoke(runner, 'train', *common, *inputs, '--epochs', 2, '--l1', 1e-4,
                  '--out', fit).exit_code == 0
    for name in ('history.csv', 'model.ckpt', 'importance.csv'):
        assert (fit / name).exists()
    history = pd.read_csv(fit / 'history.csv')
    assert list(history.columns) == ['epoch', 'train_loss', 'val_loss', 'val_metric']
    assert len(history) == 2

    agg = tmp_path / 'agg'
    assert invoke(runner, 'importance', *common, '--checkpoint', fit / 'model.ckpt', *inputs,
                  '--out', agg).exit_code == 0
    pd.testing.assert_frame_equal(pd.read_csv(agg / 'importance.csv'),
                                  pd.read_csv(fit / 'importance.csv'))

    sel = tmp_path / 'sel'
    assert invoke(runner, 'select', *common, '--importance', fit / 'importance.csv',
                  '--out', sel).exit_code == 0
    assert 'selected@0.20' in pd.read_csv(sel / 'selection.csv').columns


def test_counts_can_time_an_epoch_per_hierarchy(runner, tmp_path):
    result = invoke(runner, 'counts', '--p', 20, '--m', 2, '--sigma', 2, '--theta', 2,
                    '--dense', '4', '--time-epochs', 40, '--out', tmp_path)
    assert result.exit_code == 0
    timings = pd.read_csv(tmp_path / 'epoch_times.csv')
    assert timings['levels'].tolist() == [0, 1, 2]
    assert (timings['epoch_seconds'] > 0).all()
    assert 'levels=2: ' in result.output and 's per epoch' in result.output


def test_aggregate_rebuilds_curves_from_reports(runner, tmp_path):
    run = tmp_path / 'run'
    assert invoke(runner, 'pipeline', '--profile', 'testing', '--methods', 'marginal',
                  '--out', run).exit_code == 0
    written = pd.read_csv(run / 'curves.csv')
    (run / 'curves.csv').unlink()

    result = invoke(runner, 'aggregate', '--run-dir', run)
    assert result.exit_code == 0
    pd.testing.assert_frame_equal(pd.read_csv(run / 'curves.csv'), written)


def test_aggregate_without_reports_is_a_data_error(runner, tmp_path):
    result = invoke(runner, 'aggregate', '--run-dir', tmp_path, '--out', tmp_path)
    assert result.exit_code == 6
