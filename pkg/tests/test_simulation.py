# -*- coding: utf-8 -*-
"""
Genotype and trait simulation
"""
import math

import numpy as np
import pytest

from services.domain import trait_model
from services.simulation_service import GenotypeMatrix, SimulationService, TraitSpec, abs_correlation
from utils.errors import ConvergenceError, DataError, ValidationError


@pytest.fixture(scope='module')
def genotypes():
    return SimulationService.simulate_genotypes(600, 40, rho=0.7, seed=3)


def test_genotypes_are_minor_allele_dosages(genotypes):
    assert genotypes.dosages.shape == (600, 40)
    assert set(np.unique(genotypes.dosages)) <= {0.0, 1.0, 2.0}
    assert np.all(genotypes.maf <= 0.5)
    np.testing.assert_allclose(genotypes.mac, genotypes.dosages.sum(axis=0))
    assert genotypes.variant_ids[0] == 'v1'
    assert np.all(np.diff(genotypes.positions) >= 0)


def test_genotype_simulation_is_deterministic():
    a = SimulationService.simulate_genotypes(50, 10, seed=7)
    b = SimulationService.simulate_genotypes(50, 10, seed=7)
    np.testing.assert_array_equal(a.dosages, b.dosages)


def test_adjacent_variants_are_correlated():
    common = lambda rng, size: np.full(size, 0.3)
    G = SimulationService.simulate_genotypes(3000, 6, rho=0.9, maf_sampler=common, seed=1)
    r = abs_correlation(G.dosages)
    assert np.mean(np.diag(r, k=1)) > 0.5


def test_from_dosages_flips_to_minor_allele():
    G = GenotypeMatrix.from_dosages(np.array([[2.0], [2.0], [1.0], [0.0]]))
    np.testing.assert_array_equal(G.dosages[:, 0], [0, 0, 1, 2])
    assert G.maf[0] == pytest.approx(3 / 8)


def test_mac_filter():
    dosages = np.zeros((20, 3))
    dosages[:12, 0] = 1.0
    dosages[:2, 1] = 1.0
    G = GenotypeMatrix.from_dosages(dosages)
    kept = SimulationService.mac_filter(G, mac_min=10)
    assert kept.variant_ids == ['v1']
    with pytest.raises(DataError):
        SimulationService.mac_filter(G, mac_min=50)


def test_clusters_respect_correlation_ceiling(genotypes):
    G = SimulationService.mac_filter(genotypes, mac_min=5)
    clusters = SimulationService.ld_cluster(G, r_max=0.5)
    assert clusters.max_cross_corr <= 0.5
    members = np.sort(np.concatenate(clusters.clusters))
    np.testing.assert_array_equal(members, np.arange(G.p))
    labels = clusters.labels(G.p)
    r = abs_correlation(G.dosages)
    cross = labels[:, None] != labels[None, :]
    assert np.all(r[cross] <= 0.5)


def test_causal_variants_come_from_distinct_clusters(genotypes):
    clusters = SimulationService.ld_cluster(genotypes, r_max=0.75)
    causal = SimulationService.choose_causal(clusters, s=4, seed=0)
    labels = clusters.labels(genotypes.p)
    assert len(set(labels[causal])) == 4
    with pytest.raises(DataError):
        SimulationService.choose_causal(clusters, s=len(clusters) + 1)


def test_effect_size_scale_under_hwe():
    a, beta = trait_model.effect_sizes([0.1, 0.2, 0.3, 0.05], 0.2)
    assert a == pytest.approx(math.sqrt(0.05))
    assert a == pytest.approx(0.22361, abs=1e-5)
    assert np.sign(beta).tolist() == [-1, 1, 1, 1]
    m = np.array([0.1, 0.2, 0.3, 0.05])
    assert float(np.sum(beta ** 2 * 2 * m * (1 - m))) == pytest.approx(0.2)


def test_effect_sizes_hit_target_on_empirical_variances(genotypes):
    causal = np.argsort(genotypes.mac)[-4:]
    spec = SimulationService.trait_spec(genotypes, 'quantitative', causal, 0.06)
    empirical = genotypes.dosages[:, causal].var(axis=0)
    assert abs(float(np.sum(spec.beta ** 2 * empirical)) - 0.06) < 1e-10


def test_effect_sizes_reject_bad_input():
    with pytest.raises(ValidationError):
        trait_model.effect_sizes([0.1], 0.0)
    with pytest.raises(ValidationError):
        trait_model.effect_sizes([0.0, 0.2], 0.1)


def test_quantitative_trait_equation(genotypes):
    causal = np.argsort(genotypes.mac)[-4:]
    spec = SimulationService.trait_spec(genotypes, 'quantitative', causal, 0.06)
    spec.noise_variance = 0.0
    trait = SimulationService.gen_quantitative(genotypes, spec, seed=1)
    burden = genotypes.dosages[:, causal] @ spec.beta
    np.testing.assert_allclose(trait.y, trait.x1 + spec.scale * burden ** 2)


def test_dichotomous_intercept_matches_prevalence(genotypes):
    causal = np.argsort(genotypes.mac)[-8::2]
    spec = SimulationService.trait_spec(genotypes, 'dichotomous', causal, 0.2)
    trait = SimulationService.gen_dichotomous(genotypes, spec, seed=2)
    assert trait.mu.mean() == pytest.approx(0.10, abs=1e-9)
    assert set(np.unique(trait.y)) <= {0.0, 1.0}


def test_gen_trait_dispatch(genotypes):
    spec = TraitSpec(kind='ordinal', causal=np.array([0]), beta=np.array([1.0]), a=1.0)
    with pytest.raises(ValidationError):
        SimulationService.gen_trait(genotypes, spec)


def test_intercept_bracket_failure():
    with pytest.raises(ConvergenceError):
        trait_model.solve_intercept(np.full(10, 1000.0), 0.5)
