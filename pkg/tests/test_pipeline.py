# -*- coding: utf-8 -*-
"""
Replicate scoring, curve aggregation and the study runner
"""
import threading

import numpy as np
import pandas as pd
import pytest

from repositories.artifact_repo import ArtifactRepo
from services.domain import knockoff_filter as kf
from services.hidemk_service import ArchitectureConfig, HiDeMKService
from services.pipeline_service import CURVE_COLUMNS, PipelineService, ReplicateReport
from utils.errors import DataError, ValidationError


def report(replicate, method, fdp, power, status='completed'):
    return ReplicateReport(replicate=replicate, method=method, trait='quantitative',
                           target_fdrs=[0.1, 0.2], fdp=list(fdp), power=list(power),
                           n_selected=[1, 2], status=status)


def oracle_stats(config, data, method):
    """Q-values that select exactly the causal variants"""
    p = data.genotypes.p
    q = np.ones(p)
    q[data.causal] = 0.05
    zeros = np.zeros(p)
    return kf.KnockoffStats(feature_ids=data.feature_ids, kappa=zeros.astype(int), tau=zeros,
                            W=zeros, q=q, M=5)


# ==================== metrics ====================

def test_fdr_power_reference_values():
    assert PipelineService.fdr_power([1, 2, 3], [1, 4]) == (pytest.approx(2 / 3), 0.5)
    assert PipelineService.fdr_power([], [1, 4]) == (0.0, 0.0)
    assert PipelineService.fdr_power([1, 4], [1, 4]) == (0.0, 1.0)
    with pytest.raises(ValidationError):
        PipelineService.fdr_power([1], [])


def test_score_reads_selection_off_q_values():
    stats = kf.KnockoffStats(feature_ids=['a', 'b', 'c'], kappa=np.zeros(3, dtype=int),
                             tau=np.zeros(3), W=np.zeros(3), q=np.array([0.05, 0.15, 0.5]), M=5)
    rows = PipelineService.score(stats, [0, 2], [0.1, 0.2])
    assert rows == [(0.0, 0.5, 1), (0.5, 0.5, 2)]


# ==================== aggregation ====================

def test_single_replicate_has_zero_standard_error():
    curves = PipelineService.aggregate_curves([report(0, 'lasso', [0.0, 0.5], [1.0, 0.5])])
    assert list(curves.columns) == CURVE_COLUMNS
    assert curves['n_replicates'].tolist() == [1, 1]
    assert curves['fdr_se'].tolist() == [0.0, 0.0]


def test_curve_means():
    curves = PipelineService.aggregate_curves([
        report(0, 'ridge', [0.0, 0.0], [0.5, 0.5]),
        report(1, 'ridge', [0.2, 0.4], [1.0, 0.5]),
    ])
    first = curves[curves['target_fdr'] == 0.1].iloc[0]
    assert first['fdr_mean'] == pytest.approx(0.1)
    assert first['power_mean'] == pytest.approx(0.75)
    assert first['fdr_se'] == pytest.approx(np.std([0.0, 0.2], ddof=1) / np.sqrt(2))


def test_curves_match_brute_force_grouping():
    rng = np.random.default_rng(0)
    reports = [report(i, method, rng.uniform(size=2), rng.uniform(size=2))
               for i in range(6) for method in ('marginal', 'hidemk')]
    curves = PipelineService.aggregate_curves(reports)
    for _, row in curves.iterrows():
        k = [0.1, 0.2].index(row['target_fdr'])
        fdps = [r.fdp[k] for r in reports if r.method == row['method']]
        powers = [r.power[k] for r in reports if r.method == row['method']]
        assert row['fdr_mean'] == pytest.approx(np.mean(fdps))
        assert row['power_mean'] == pytest.approx(np.mean(powers))
        assert row['n_replicates'] == 6


def test_failed_reports_are_excluded():
    curves = PipelineService.aggregate_curves([
        report(0, 'lasso', [0.0, 0.0], [1.0, 1.0]),
        report(1, 'lasso', [], [], status='failed'),
    ])
    assert curves['n_replicates'].tolist() == [1, 1]
    with pytest.raises(DataError):
        PipelineService.aggregate_curves([report(1, 'lasso', [], [], status='failed')])


def test_report_dict_form():
    original = report(3, 'marginal', [0.0, 0.1], [0.25, 0.5])
    restored = ReplicateReport.from_dict(original.to_dict())
    assert restored.fdp == original.fdp
    assert restored.target_fdrs == [0.1, 0.2]
    assert not restored.failed


# ==================== replicates ====================

def test_replicate_preparation_is_deterministic(testing_config):
    config = testing_config.replace(methods=['marginal'])
    a = PipelineService.prepare_replicate(config, 0)
    b = PipelineService.prepare_replicate(config, 0)
    np.testing.assert_array_equal(a.genotypes.dosages, b.genotypes.dosages)
    np.testing.assert_array_equal(a.knockoffs.values, b.knockoffs.values)
    assert a.knockoffs.M == 1
    assert len(a.causal) == config.n_causal
    assert a.knockoffs.window == config.knockoff_window


def test_marginal_replicate_end_to_end(testing_config):
    config = testing_config.replace(methods=['marginal'])
    result = PipelineService.run_replicate(config, 0, 'marginal')
    assert result.target_fdrs == [0.1, 0.2]
    assert len(result.fdp) == 2
    assert all(0.0 <= v <= 1.0 for v in result.fdp + result.power)
    PipelineService.clear_cache()


def test_network_replicate_end_to_end(testing_config):
    config = testing_config.replace(methods=['hidemk'], l1_grid=[1e-4])
    data = PipelineService.prepare_replicate(config, 1)
    assert data.knockoffs.M == config.m_knockoffs
    result = PipelineService.run_replicate(config, 1, 'hidemk', data=data)
    assert result.method == 'hidemk'
    assert len(result.power) == 2


@pytest.mark.slow
def test_marginal_fdr_under_global_null(testing_config):
    config = testing_config.replace(methods=['marginal'], signal_scale=1e-9, target_fdrs=[0.1])
    fdps = []
    for index in range(100):
        data = PipelineService.prepare_replicate(config, index)
        stats = PipelineService.method_stats(config, data, 'marginal')
        # with no signal every selection is false
        fdps.append(float(np.any(stats.q <= 0.1)))
    assert np.mean(fdps) <= 0.1 + 0.05


# ==================== orchestration ====================

def test_failed_tasks_become_failed_reports(testing_config, monkeypatch, tmp_path):
    def stats(config, data, method):
        if method == 'lasso':
            raise RuntimeError('lasso exploded')
        return oracle_stats(config, data, method)

    monkeypatch.setattr(PipelineService, 'method_stats', classmethod(lambda cls, *a: stats(*a)))
    config = testing_config.replace(methods=['marginal', 'lasso'])
    repo = ArtifactRepo(str(tmp_path))
    result = PipelineService.run_pipeline(config, repo, threads=2)

    assert len(result.reports) == 4
    assert [(r.replicate, r.method) for r in result.failures] == [(0, 'lasso'), (1, 'lasso')]
    assert 'lasso exploded' in result.failures[0].error
    assert result.curves['method'].unique().tolist() == ['marginal']
    assert result.curves['power_mean'].tolist() == [1.0, 1.0]
    assert result.curves['fdr_mean'].tolist() == [0.0, 0.0]
    assert len(repo.read_reports()) == 4
    written = pd.read_csv(tmp_path / 'curves.csv')
    assert list(written.columns) == CURVE_COLUMNS


def test_replicates_prepare_in_parallel_and_are_evicted(testing_config, monkeypatch):
    prepare = PipelineService.prepare_replicate.__func__
    barrier = threading.Barrier(2, timeout=30)

    def side_by_side(cls, config, index):
        # both replicates must be inside preparation at once
        barrier.wait()
        return prepare(cls, config, index)

    monkeypatch.setattr(PipelineService, 'prepare_replicate', classmethod(side_by_side))
    monkeypatch.setattr(PipelineService, 'method_stats',
                        classmethod(lambda cls, *a: oracle_stats(*a)))
    config = testing_config.replace(methods=['marginal'], replicates=2)
    result = PipelineService.run_pipeline(config, threads=2)
    assert result.failures == []
    assert PipelineService._cache == {}


def test_replicate_is_shared_by_methods_then_dropped(testing_config, monkeypatch):
    prepare = PipelineService.prepare_replicate.__func__
    prepared, lock_held, resident = [], [], []

    def counting(cls, config, index):
        prepared.append(index)
        lock_held.append(cls._cache_lock.locked())
        return prepare(cls, config, index)

    def stats(config, data, method):
        resident.append(sum(e.data is not None for e in PipelineService._cache.values()))
        return oracle_stats(config, data, method)

    monkeypatch.setattr(PipelineService, 'prepare_replicate', classmethod(counting))
    monkeypatch.setattr(PipelineService, 'method_stats', classmethod(lambda cls, *a: stats(*a)))
    config = testing_config.replace(methods=['marginal', 'lasso'], replicates=3)
    PipelineService.run_pipeline(config, threads=1)

    assert prepared == [0, 1, 2]
    assert lock_held == [False, False, False]
    assert resident == [1] * 6
    assert PipelineService._cache == {}


def test_kernel_sweep_rows(testing_config, monkeypatch):
    monkeypatch.setattr(PipelineService, 'method_stats',
                        classmethod(lambda cls, *a: oracle_stats(*a)))
    config = testing_config.replace(methods=['hidemk', 'marginal'], replicates=1)
    sweep = PipelineService.sweep_kernel(config, [2, 5], threads=1)
    assert list(sweep.columns) == ['sigma', 'method', 'target_fdr', 'fdr_mean', 'power_mean',
                                   'n_params', 'n_replicates']
    assert len(sweep) == 2 * 2 * 2
    hidemk = sweep[sweep['method'] == 'hidemk'].groupby('sigma')['n_params'].first()
    assert hidemk[2] > hidemk[5] > 0
    assert (sweep.loc[sweep['method'] == 'marginal', 'n_params'] == 0).all()


def test_kernel_sweep_counts_the_trained_network(testing_config, monkeypatch):
    monkeypatch.setattr(PipelineService, 'method_stats',
                        classmethod(lambda cls, *a: oracle_stats(*a)))
    config = testing_config.replace(methods=['hidemk'], replicates=1)
    sweep = PipelineService.sweep_kernel(config, [3], threads=1)

    data = PipelineService.prepare_replicate(config.replace(sigma=3), 0)
    assert data.genotypes.p < config.p
    trained = ArchitectureConfig(p=data.genotypes.p, M=config.m_knockoffs, sigma=3,
                                 theta=config.theta, dense_widths=tuple(config.dense_widths),
                                 n_covariates=1)
    assert sweep['n_params'].iloc[0] == HiDeMKService.build(trained).n_params


def test_curves_rebuild_from_report_files(testing_config, monkeypatch, tmp_path):
    monkeypatch.setattr(PipelineService, 'method_stats',
                        classmethod(lambda cls, *a: oracle_stats(*a)))
    repo = ArtifactRepo(str(tmp_path))
    result = PipelineService.run_pipeline(testing_config.replace(methods=['marginal', 'ridge']),
                                          repo, threads=2)
    written = pd.read_csv(tmp_path / 'curves.csv')
    pd.testing.assert_frame_equal(PipelineService.aggregate_reports(repo, write=False), result.curves)
    PipelineService.aggregate_reports(repo)
    pd.testing.assert_frame_equal(pd.read_csv(tmp_path / 'curves.csv'), written)
    with pytest.raises(DataError):
        PipelineService.aggregate_reports(ArtifactRepo(str(tmp_path / 'empty')))
