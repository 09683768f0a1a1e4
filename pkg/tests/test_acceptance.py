# -*- coding: utf-8 -*-
"""
Desk-scale simulation studies: FDR control, power ordering and W stability

Every test here runs the full pipeline over many replicates and is marked slow.
"""
import pytest

from config.pipeline_config import PipelineConfig
from config.settings import RuntimeConfig
from scripts.derandomization_study import derandomization_study
from services.pipeline_service import PipelineService

pytestmark = pytest.mark.slow

THREADS = RuntimeConfig.THREADS
TARGETS = [0.05, 0.1, 0.2]


def desk_config(tmp_path, **overrides):
    settings = {'output_dir': str(tmp_path), 'threads': THREADS, 'ensemble_size': 5,
                'm_knockoffs': 5, 'target_fdrs': TARGETS}
    settings.update(overrides)
    return PipelineConfig.from_dict(settings, profile='desk')


def curve(curves, method, alpha, column):
    rows = curves[(curves['method'] == method) & (curves['target_fdr'] == alpha)]
    return float(rows[column].iloc[0])


@pytest.fixture(scope='module')
def quantitative_curves(tmp_path_factory):
    config = desk_config(tmp_path_factory.mktemp('quantitative'), trait='quantitative',
                         methods=['hidemk-derand', 'hidemk-single', 'hidemk-relu', 'lasso'])
    result = PipelineService.run_pipeline(config)
    assert len(result.failures) <= 2
    return result.curves


@pytest.mark.parametrize('alpha', TARGETS)
def test_quantitative_fdr_is_controlled(quantitative_curves, alpha):
    assert curve(quantitative_curves, 'hidemk-derand', alpha, 'fdr_mean') <= alpha + 0.05


def test_dichotomous_fdr_is_controlled(tmp_path):
    config = desk_config(tmp_path, trait='dichotomous', methods=['hidemk-derand'])
    curves = PipelineService.run_pipeline(config).curves
    for alpha in TARGETS:
        assert curve(curves, 'hidemk-derand', alpha, 'fdr_mean') <= alpha + 0.05


def test_multiple_knockoffs_win_at_low_target(quantitative_curves):
    power = {m: curve(quantitative_curves, m, 0.05, 'power_mean')
             for m in ('hidemk-derand', 'hidemk-single', 'lasso')}
    assert power['hidemk-derand'] >= power['hidemk-single']
    assert power['hidemk-derand'] >= power['lasso']


@pytest.mark.parametrize('alpha', [0.1, 0.2])
def test_elu_is_not_less_powerful_than_relu(quantitative_curves, alpha):
    elu = curve(quantitative_curves, 'hidemk-derand', alpha, 'power_mean')
    relu = curve(quantitative_curves, 'hidemk-relu', alpha, 'power_mean')
    assert elu >= relu


def test_ensembles_stabilise_w(tmp_path):
    config = desk_config(tmp_path)
    summary = derandomization_study(config, singles=10, ensembles=5, size=10).set_index('group')
    single = summary.loc['single', 'mean_pairwise_w_corr']
    ensemble = summary.loc['ensemble', 'mean_pairwise_w_corr']
    assert ensemble - single >= 0.1
