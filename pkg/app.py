#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
hidemk command line

Subcommands:
  simulate      genotypes + trait for one replicate
  knockoff      multiple knockoffs for a genotype file
  train         one HiDe-MK / De-MK fit, checkpoint + history + importance
  importance    aggregate importance over one or more checkpoints
  select        knockoff filter on an importance file
  baseline      marginal / lasso / ridge with a single knockoff
  pipeline      full replicate study -> curves.csv
  counts        parameter / activation counts for 0-, 1- and 2-level networks
  sweep-kernel  pipeline repeated over region kernel sizes

Every command accepts --config, --seed, --threads, --out and writes a
manifest JSON echoing the resolved configuration.
"""
import functools
import os
import sys

from dotenv import load_dotenv
load_dotenv()

import click

from config.pipeline_config import METHODS, TRAIT_KINDS, PipelineConfig
from config.settings import APP_TITLE, VERSION, RuntimeConfig
from repositories.artifact_repo import ArtifactRepo
from utils.errors import ValidationError, handle_cli_error
from utils.logger import setup_logging


# ==================== shared plumbing ====================

def common_options(func):
    """--config / --seed / --threads / --out / --profile / --debug"""
    options = [
        click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False),
                     help='JSON config file'),
        click.option('--seed', type=int, help='Master seed'),
        click.option('--threads', type=int, help='Worker threads (default HIDEMK_THREADS)'),
        click.option('--out', 'out_dir', type=click.Path(file_okay=False),
                     help='Output directory'),
        click.option('--profile', type=click.Choice(['default', 'desk', 'full', 'testing']),
                     help='Named defaults profile'),
        click.option('--debug', is_flag=True, help='Verbose console logging'),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def guarded(func):
    """Route every failure through handle_cli_error and exit with its code"""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        out_dir = kwargs.get('out_dir') or RuntimeConfig.OUTPUT_DIR
        try:
            return func(*args, **kwargs)
        except (click.exceptions.Exit, click.ClickException):
            raise
        except Exception as e:
            code = handle_cli_error(e, out_dir)
            click.get_current_context().exit(code)
    return wrapper


def resolve_config(config_path=None, seed=None, threads=None, out_dir=None, profile=None,
                   **overrides) -> PipelineConfig:
    """Profile < config file < explicit flags"""
    flags = {k: v for k, v in overrides.items() if v is not None}
    if seed is not None:
        flags['master_seed'] = seed
    if threads is not None:
        flags['threads'] = threads
    if out_dir is not None:
        flags['output_dir'] = out_dir
    if config_path:
        return PipelineConfig.from_json(config_path, flags, profile=profile)
    return PipelineConfig.from_dict(flags, profile=profile)


def open_run(command: str, config: PipelineConfig, debug: bool = False, extra=None) -> ArtifactRepo:
    os.makedirs(config.output_dir, exist_ok=True)
    setup_logging(config.output_dir, debug=debug or RuntimeConfig.DEBUG
                  or RuntimeConfig.LOG_LEVEL == 'DEBUG', name=APP_TITLE)
    repo = ArtifactRepo(config.output_dir)
    repo.write_manifest(command, config.to_dict(), extra)
    return repo


def load_training_inputs(genotypes, knockoffs, trait_file, copies=None):
    from services.knockoff_service import augment

    repo = ArtifactRepo
    G = repo.read_genotypes(genotypes, _variants_beside(genotypes))
    tensor = repo.read_knockoffs(knockoffs, variant_ids=G.variant_ids)
    if copies is not None:
        tensor = tensor.first(copies)
    y, x1 = repo.read_trait(trait_file)
    return G, tensor, augment(G.dosages, tensor), y, x1


def _variants_beside(genotypes_path):
    directory = os.path.dirname(os.path.abspath(genotypes_path))
    prefix = os.path.basename(genotypes_path)[:-len('genotypes.csv')] \
        if genotypes_path.endswith('genotypes.csv') else ''
    return os.path.join(directory, f'{prefix}variants.csv')


def _parse_ints(text):
    try:
        return [int(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise ValidationError(f"Expected comma-separated integers, got '{text}'")


# ==================== commands ====================

@click.group()
@click.version_option(VERSION, prog_name=APP_TITLE)
def cli():
    """Multiple-knockoff variable selection with hierarchical networks"""


@cli.command('simulate')
@common_options
@click.option('--trait', type=click.Choice(TRAIT_KINDS))
@click.option('--n', type=int)
@click.option('--p', type=int)
@click.option('--replicate', type=int, default=0, show_default=True)
@guarded
def cmd_simulate(config_path, seed, threads, out_dir, profile, debug, trait, n, p, replicate):
    """Simulate genotypes and a trait for one replicate"""
    from services.hidemk_service import run_seed
    from services.simulation_service import SimulationService, log_uniform_maf

    config = resolve_config(config_path, seed, threads, out_dir, profile, trait=trait, n=n, p=p)
    repo = open_run('simulate', config, debug)
    master = config.master_seed
    G = SimulationService.simulate_genotypes(
        config.n, config.p, rho=config.rho,
        maf_sampler=log_uniform_maf(config.maf_min, config.maf_max),
        seed=run_seed(master, replicate, 0))
    G = SimulationService.mac_filter(G, config.mac_min)
    clusters = SimulationService.ld_cluster(G, config.r_max)
    causal = SimulationService.choose_causal(clusters, config.n_causal, seed=run_seed(master, replicate, 1))
    spec = SimulationService.trait_spec(G, config.trait, causal, config.resolved_variance_target)
    data = SimulationService.gen_trait(G, spec, seed=run_seed(master, replicate, 2))

    repo.write_genotypes(G)
    repo.write_trait(data)
    repo.write_json({
        'replicate': replicate,
        'master_seed': master,
        'trait': config.trait,
        'causal': causal.tolist(),
        'causal_ids': [G.variant_ids[c] for c in causal],
        'a': spec.a,
        'beta': spec.beta.tolist(),
        'intercept': data.intercept,
        'n_clusters': len(clusters),
        'max_cross_corr': clusters.max_cross_corr,
        'config': config.to_dict(),
    }, 'replicate.json', 'replicate')
    click.echo(f"Simulated n={G.n} p={G.p} (after MAC filter), causal={causal.tolist()} -> {repo.root}")


@cli.command('knockoff')
@common_options
@click.option('--genotypes', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--m', 'm_knockoffs', type=int)
@click.option('--window', 'knockoff_window', type=int)
@guarded
def cmd_knockoff(config_path, seed, threads, out_dir, profile, debug, genotypes, m_knockoffs,
                 knockoff_window):
    """Generate multiple knockoffs by sequential conditional sampling"""
    from services.knockoff_service import KnockoffService

    config = resolve_config(config_path, seed, threads, out_dir, profile,
                            m_knockoffs=m_knockoffs, knockoff_window=knockoff_window)
    repo = open_run('knockoff', config, debug)
    G = ArtifactRepo.read_genotypes(genotypes, _variants_beside(genotypes))
    tensor = KnockoffService.scit_generate(G.dosages, config.m_knockoffs,
                                           window=config.knockoff_window, seed=config.master_seed)
    repo.write_knockoffs(tensor, G.variant_ids)
    report = KnockoffService.diagnostics(G.dosages, tensor)
    repo.write_json(report.summary(), 'knockoff_diagnostics.json', 'diagnostics')
    click.echo(f"{tensor.M} knockoffs for {tensor.p} variants -> {repo.root}")


@cli.command('train')
@common_options
@click.option('--genotypes', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--knockoffs', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--trait-file', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--trait', type=click.Choice(TRAIT_KINDS))
@click.option('--levels', type=click.IntRange(1, 2), default=2, show_default=True)
@click.option('--activation', type=click.Choice(['elu', 'relu']), default='elu', show_default=True)
@click.option('--m', 'copies', type=int, help='Use only the first M knockoff copies')
@click.option('--epochs', type=int, help='Fixed epoch count (skips cross-validation)')
@click.option('--l1', type=float, help='Fixed L1 coefficient (with --epochs)')
@guarded
def cmd_train(config_path, seed, threads, out_dir, profile, debug, genotypes, knockoffs, trait_file,
              trait, levels, activation, copies, epochs, l1):
    """Fit one network; cross-validates unless --epochs is given"""
    from services.hidemk_service import (ArchitectureConfig, HiDeMKService, RunConfig,
                                         TrainingData)

    config = resolve_config(config_path, seed, threads, out_dir, profile, trait=trait)
    repo = open_run('train', config, debug, {'levels': levels, 'activation': activation})
    G, tensor, X_aug, y, x1 = load_training_inputs(genotypes, knockoffs, trait_file, copies)
    data = TrainingData(X_aug=X_aug, y=y, covariates=x1[:, None], feature_ids=G.variant_ids)
    arch = ArchitectureConfig.for_trait(config.trait, p=data.p, M=data.M, sigma=config.sigma,
                                        theta=config.theta, dense_widths=tuple(config.dense_widths),
                                        activation=activation, levels=levels)
    batch = config.resolved_batch_size(data.n)
    if epochs is None:
        cv = HiDeMKService.cross_validate(arch, data, l1_grid=config.l1_grid,
                                          epoch_grid=config.epoch_grid, folds=config.cv_folds,
                                          draws=config.cv_draws, master_seed=config.master_seed,
                                          learning_rate=config.learning_rate, batch_size=batch,
                                          threads=config.threads)
        run = cv.best
        repo.write_frame(cv.draws, 'cv_draws.csv', 'cv')
    else:
        run = RunConfig(learning_rate=config.learning_rate, batch_size=batch, epochs=epochs,
                        l1=l1 if l1 is not None else config.l1_grid[0],
                        master_seed=config.master_seed)

    train_part, val_part = data.split(config.validation_fraction, config.master_seed)
    monitored = HiDeMKService.train(arch, run, train_part, validation=val_part)
    repo.write_history(monitored.history)
    model = HiDeMKService.train(arch, run, data)
    repo.write_checkpoint(model)
    repo.write_importance(HiDeMKService.importance(model, data))
    click.echo(f"Trained {run.epochs} epochs (l1={run.l1:g}, {HiDeMKService.build(arch).n_params} "
               f"parameters) -> {repo.root}")


@cli.command('importance')
@common_options
@click.option('--checkpoint', 'checkpoints', type=click.Path(exists=True, dir_okay=False),
              multiple=True, required=True)
@click.option('--genotypes', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--knockoffs', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--trait-file', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--aggregate', type=click.Choice(['median', 'mean']))
@guarded
def cmd_importance(config_path, seed, threads, out_dir, profile, debug, checkpoints, genotypes,
                   knockoffs, trait_file, aggregate):
    """Importance matrix aggregated over checkpoints"""
    from services.domain.knockoff_filter import ImportanceMatrix, kappa_tau_matrix
    from services.hidemk_service import HiDeMKService, TrainingData, correlation_matrix

    config = resolve_config(config_path, seed, threads, out_dir, profile, aggregate=aggregate)
    repo = open_run('importance', config, debug, {'checkpoints': list(checkpoints)})
    models = [ArtifactRepo.read_checkpoint(path) for path in checkpoints]
    G, tensor, X_aug, y, x1 = load_training_inputs(genotypes, knockoffs, trait_file, models[0].arch.M)
    data = TrainingData(X_aug=X_aug, y=y, covariates=x1[:, None], feature_ids=G.variant_ids)
    matrices = [HiDeMKService.importance(model, data).T for model in models]
    merged = HiDeMKService.ensemble_matrices(matrices, config.aggregate)
    repo.write_importance(ImportanceMatrix(T=merged, feature_ids=G.variant_ids))
    if len(matrices) > 1 and merged.shape[1] > 2:
        corr = correlation_matrix([kappa_tau_matrix(T)[2] for T in matrices])
        repo.write_json({'w_correlation': corr}, 'w_correlation.json', 'diagnostics')
    click.echo(f"{config.aggregate} importance over {len(models)} checkpoint(s) -> {repo.root}")


@cli.command('select')
@common_options
@click.option('--importance', 'importance_path', type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option('--m', 'm_knockoffs', type=int, help='Expected knockoff count (checked against the file)')
@click.option('--alpha', 'alphas', type=float, multiple=True, help='Target FDR (repeatable)')
@click.option('--method', type=str, help='Method label for the selection file')
@guarded
def cmd_select(config_path, seed, threads, out_dir, profile, debug, importance_path, m_knockoffs,
               alphas, method):
    """Knockoff filter: κ, τ, W, q and selections at each target FDR"""
    from services.domain import knockoff_filter as kf

    config = resolve_config(config_path, seed, threads, out_dir, profile,
                            target_fdrs=list(alphas) if alphas else None)
    repo = open_run('select', config, debug)
    importance = ArtifactRepo.read_importance(importance_path)
    if m_knockoffs is not None and importance.n_knockoffs != m_knockoffs:
        raise ValidationError(f"Importance file carries M={importance.n_knockoffs}, --m says {m_knockoffs}")
    stats = kf.knockoff_stats(importance)
    repo.write_selection(stats, config.target_fdrs, method)
    for alpha in config.target_fdrs:
        result = kf.select(stats, alpha)
        click.echo(f"alpha={alpha:.2f}: {len(result.selected)} selected")


@cli.command('baseline')
@common_options
@click.option('--genotypes', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--knockoffs', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--trait-file', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--trait', type=click.Choice(TRAIT_KINDS))
@click.option('--method', type=click.Choice(['marginal', 'lasso', 'ridge']), required=True)
@guarded
def cmd_baseline(config_path, seed, threads, out_dir, profile, debug, genotypes, knockoffs,
                 trait_file, trait, method):
    """Single-knockoff linear comparator"""
    from services.baseline_service import BaselineService

    config = resolve_config(config_path, seed, threads, out_dir, profile, trait=trait)
    repo = open_run('baseline', config, debug, {'method': method})
    G, tensor, _, y, x1 = load_training_inputs(genotypes, knockoffs, trait_file, copies=1)
    result = BaselineService.baseline_pipeline(G.dosages, tensor.values, x1, y, config.trait, method,
                                               feature_ids=G.variant_ids, folds=config.cv_folds,
                                               seed=config.master_seed)
    repo.write_importance(result.importance, f'importance_{method}.csv')
    repo.write_selection(result.stats, config.target_fdrs, method, f'selection_{method}.csv')
    click.echo(f"{method}: W computed for {G.p} variants -> {repo.root}")


@cli.command('pipeline')
@common_options
@click.option('--trait', type=click.Choice(TRAIT_KINDS))
@click.option('--replicates', type=int)
@click.option('--methods', type=str, help=f"Comma-separated subset of {','.join(METHODS)}")
@click.option('--ensemble-size', type=int)
@guarded
def cmd_pipeline(config_path, seed, threads, out_dir, profile, debug, trait, replicates, methods,
                 ensemble_size):
    """Full replicate study: reports/, curves.csv, manifest.json"""
    from services.pipeline_service import PipelineService

    config = resolve_config(config_path, seed, threads, out_dir, profile, trait=trait,
                            replicates=replicates, ensemble_size=ensemble_size,
                            methods=[m.strip() for m in methods.split(',')] if methods else None)
    repo = open_run('pipeline', config, debug)
    result = PipelineService.run_pipeline(config, repo)
    repo.write_manifest('pipeline', config.to_dict(), {
        'tasks': len(result.reports),
        'failed': len(result.failures),
        'failures': [{'replicate': r.replicate, 'method': r.method, 'error': r.error}
                     for r in result.failures],
    })
    click.echo(f"{len(result.reports)} tasks ({len(result.failures)} failed) -> "
               f"{repo.path('curves.csv')}")


@cli.command('aggregate')
@common_options
@click.option('--run-dir', type=click.Path(exists=True, file_okay=False), required=True,
              help='Directory holding reports/ from an earlier pipeline run')
@guarded
def cmd_aggregate(config_path, seed, threads, out_dir, profile, debug, run_dir):
    """Rebuild curves.csv from the per-replicate reports of a run"""
    from services.pipeline_service import PipelineService

    setup_logging(run_dir, debug=debug or RuntimeConfig.DEBUG, name=APP_TITLE)
    repo = ArtifactRepo(run_dir)
    curves = PipelineService.aggregate_reports(repo)
    click.echo(f"{int(curves['n_replicates'].max())} replicates, {len(curves)} rows -> "
               f"{repo.path('curves.csv')}")


@cli.command('counts')
@common_options
@click.option('--p', 'p_features', type=int, required=True)
@click.option('--m', 'm_knockoffs', type=int, required=True)
@click.option('--sigma', type=int, default=5, show_default=True)
@click.option('--theta', type=int, default=8, show_default=True)
@click.option('--first-hidden', type=int, help='Width of the first dense layer (default p·(M+1))')
@click.option('--dense', 'dense', type=str, default='8,8', show_default=True)
@click.option('--time-epochs', 'time_samples', type=click.IntRange(min=0), default=0,
              help='Also time one training epoch per hierarchy on this many random samples')
@guarded
def cmd_counts(config_path, seed, threads, out_dir, profile, debug, p_features, m_knockoffs, sigma,
               theta, first_hidden, dense, time_samples):
    """Exact weight and activation counts for 0-, 1- and 2-level hierarchies"""
    from services.hidemk_service import HiDeMKService

    config = resolve_config(config_path, seed, threads, out_dir, profile)
    repo = open_run('counts', config, debug, {'p': p_features, 'M': m_knockoffs,
                                               'sigma': sigma, 'theta': theta})
    table = HiDeMKService.hierarchy_counts(p_features, m_knockoffs, sigma=sigma, theta=theta,
                                           first_hidden=first_hidden, dense_widths=_parse_ints(dense))
    repo.write_frame(table, 'counts.csv', 'counts')
    totals = table.groupby('levels')[['weights', 'activations']].sum()
    click.echo(table.to_string(index=False))
    for levels, row in totals.iterrows():
        click.echo(f"levels={levels}: weights={int(row['weights'])} activations={int(row['activations'])}")
    if time_samples:
        timings = HiDeMKService.epoch_timings(p_features, m_knockoffs, time_samples, sigma=sigma,
                                              theta=theta, first_hidden=first_hidden,
                                              dense_widths=_parse_ints(dense), seed=config.master_seed)
        repo.write_frame(timings, 'epoch_times.csv', 'timings')
        for _, row in timings.iterrows():
            click.echo(f"levels={int(row['levels'])}: {row['epoch_seconds']:.4f}s per epoch")


@cli.command('sweep-kernel')
@common_options
@click.option('--sigmas', type=str, default='1,2,5,10,20', show_default=True)
@click.option('--replicates', type=int)
@click.option('--methods', type=str)
@guarded
def cmd_sweep_kernel(config_path, seed, threads, out_dir, profile, debug, sigmas, replicates, methods):
    """Pipeline repeated for each region kernel size -> sweep.csv"""
    from services.pipeline_service import PipelineService

    config = resolve_config(config_path, seed, threads, out_dir, profile, replicates=replicates,
                            methods=[m.strip() for m in methods.split(',')] if methods else None)
    sizes = _parse_ints(sigmas)
    repo = open_run('sweep-kernel', config, debug, {'sigmas': sizes})
    sweep = PipelineService.sweep_kernel(config, sizes, repo)
    click.echo(f"{len(sizes)} kernel sizes, {len(sweep)} rows -> {repo.path('sweep.csv')}")


def main(argv=None):
    return cli.main(args=argv, prog_name=APP_TITLE)


if __name__ == '__main__':
    sys.exit(main())
