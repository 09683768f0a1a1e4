#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Stability of W statistics: independent single runs vs independent ensembles

Usage:
    python scripts/derandomization_study.py --profile desk --out runs/derand
    python scripts/derandomization_study.py --singles 10 --ensembles 5 --size 10

On one simulated replicate, cross-validates once, then
  1. fits ``singles`` independently seeded networks,
  2. builds ``ensembles`` aggregates of ``size`` runs each (disjoint seeds),
and reports the mean pairwise Pearson correlation of W within each group,
plus the epoch-to-epoch W correlation of one single run and one ensemble.
"""
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pandas as pd

from config.pipeline_config import PipelineConfig
from repositories.artifact_repo import ArtifactRepo
from services.domain import knockoff_filter as kf
from services.hidemk_service import (ArchitectureConfig, HiDeMKService, TrainingData,
                                     correlation_matrix, run_seed)
from services.pipeline_service import PipelineService
from utils.logger import setup_logging


def mean_upper(corr: np.ndarray) -> float:
    upper = corr[np.triu_indices(corr.shape[0], k=1)]
    return float(upper.mean()) if upper.size else 1.0


def derandomization_study(config: PipelineConfig, singles: int = 10, ensembles: int = 5,
                          size: int = 10, replicate: int = 0):
    repo = ArtifactRepo(config.output_dir)
    data = PipelineService.prepare_replicate(config, replicate)
    training = TrainingData(X_aug=data.knockoffs.augmented(data.genotypes.dosages), y=data.trait.y,
                            covariates=data.trait.x1[:, None], feature_ids=data.feature_ids)
    arch = ArchitectureConfig.for_trait(config.trait, p=training.p, M=training.M,
                                        sigma=config.sigma, theta=config.theta,
                                        dense_widths=tuple(config.dense_widths))
    cv = HiDeMKService.cross_validate(arch, training, l1_grid=config.l1_grid,
                                      epoch_grid=config.epoch_grid, folds=config.cv_folds,
                                      draws=config.cv_draws, master_seed=config.master_seed,
                                      learning_rate=config.learning_rate,
                                      batch_size=config.resolved_batch_size(training.n),
                                      threads=config.threads)
    run = cv.best

    single_seeds = [run_seed(config.master_seed, 10_000 + k) for k in range(singles)]
    single = HiDeMKService.derandomized_importance(arch, run, training, R=singles,
                                                   seeds=single_seeds, threads=config.threads)
    ensemble_w = []
    for e in range(ensembles):
        seeds = [run_seed(config.master_seed, 20_000 + e * size + r) for r in range(size)]
        result = HiDeMKService.derandomized_importance(arch, run, training, R=size, seeds=seeds,
                                                       aggregate=config.aggregate,
                                                       threads=config.threads)
        ensemble_w.append(kf.knockoff_stats(result.matrix).W)

    single_corr = mean_upper(single.w_correlation)
    ensemble_corr = mean_upper(correlation_matrix(ensemble_w))
    single_epochs = HiDeMKService.epoch_w_stability(arch, run, training, R=1)
    ensemble_epochs = HiDeMKService.epoch_w_stability(arch, run, training, R=size,
                                                      aggregate=config.aggregate)

    summary = pd.DataFrame([
        {'group': 'single', 'members': singles, 'runs_per_member': 1,
         'mean_pairwise_w_corr': single_corr,
         'mean_epoch_w_corr': float(np.mean(single_epochs)) if single_epochs.size else 1.0},
        {'group': 'ensemble', 'members': ensembles, 'runs_per_member': size,
         'mean_pairwise_w_corr': ensemble_corr,
         'mean_epoch_w_corr': float(np.mean(ensemble_epochs)) if ensemble_epochs.size else 1.0},
    ])
    repo.write_frame(summary, 'derandomization.csv', 'derandomization')
    repo.write_frame(pd.DataFrame({'epoch': np.arange(1, single_epochs.size + 1),
                                   'single': single_epochs, 'ensemble': ensemble_epochs}),
                     'epoch_stability.csv', 'derandomization')
    repo.write_manifest('derandomization_study', config.to_dict(),
                        {'singles': singles, 'ensembles': ensembles, 'size': size,
                         'l1': run.l1, 'epochs': run.epochs})
    return summary


if __name__ == '__main__':
    import argparse
    parser = argparse.ArgumentParser(description='W stability: single runs vs ensembles')
    parser.add_argument('--config', help='JSON config file')
    parser.add_argument('--profile', default='desk')
    parser.add_argument('--out', default=None)
    parser.add_argument('--singles', type=int, default=10)
    parser.add_argument('--ensembles', type=int, default=5)
    parser.add_argument('--size', type=int, default=10)
    parser.add_argument('--replicate', type=int, default=0)
    args = parser.parse_args()

    overrides = {'output_dir': args.out} if args.out else {}
    if args.config:
        cfg = PipelineConfig.from_json(args.config, overrides, profile=args.profile)
    else:
        cfg = PipelineConfig.from_dict(overrides, profile=args.profile)
    setup_logging(cfg.output_dir, name='derandomization_study')
    print(derandomization_study(cfg, args.singles, args.ensembles, args.size, args.replicate)
          .to_string(index=False))
