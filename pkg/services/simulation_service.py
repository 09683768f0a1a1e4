#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Genotype and trait simulation service

Implements:
A. LD-structured genotypes from thresholded AR(1) latent Gaussian haplotypes
B. MAC filtering
C. Correlation clustering with a cross-cluster |r| ceiling
D. Causal variant choice, effect-size calibration and trait generation
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import squareform
from scipy.stats import norm

from config.settings import SimulationDefaults
from services.domain import trait_model
from utils.errors import DataError, ValidationError

logger = logging.getLogger(__name__)

REGION_BP = 200_000


@dataclass
class GenotypeMatrix:
    """n×p dosages coded to the minor allele"""
    dosages: np.ndarray
    variant_ids: List[str]
    positions: np.ndarray
    maf: np.ndarray
    mac: np.ndarray

    @property
    def n(self) -> int:
        return self.dosages.shape[0]

    @property
    def p(self) -> int:
        return self.dosages.shape[1]

    def subset(self, columns) -> 'GenotypeMatrix':
        columns = np.asarray(columns, dtype=int)
        return GenotypeMatrix(
            dosages=self.dosages[:, columns],
            variant_ids=[self.variant_ids[j] for j in columns],
            positions=self.positions[columns],
            maf=self.maf[columns],
            mac=self.mac[columns],
        )

    @classmethod
    def from_dosages(cls, dosages, variant_ids=None, positions=None) -> 'GenotypeMatrix':
        """Code every column to its minor allele and compute MAC/MAF"""
        g = np.asarray(dosages, dtype=np.float64).copy()
        n, p = g.shape
        flip = g.sum(axis=0) > n
        g[:, flip] = 2.0 - g[:, flip]
        mac = g.sum(axis=0)
        return cls(
            dosages=g,
            variant_ids=list(variant_ids) if variant_ids is not None else [f"v{j + 1}" for j in range(p)],
            positions=(np.asarray(positions) if positions is not None
                       else np.round(np.arange(p) * REGION_BP / max(p, 1)).astype(int)),
            maf=mac / (2.0 * n),
            mac=mac,
        )


@dataclass
class TraitSpec:
    kind: str
    causal: np.ndarray
    beta: np.ndarray
    a: float
    scale: float = SimulationDefaults.BURDEN_SCALE
    noise_variance: float = SimulationDefaults.NOISE_VARIANCE
    prevalence: float = SimulationDefaults.PREVALENCE
    intercept: Optional[float] = None


@dataclass
class TraitData:
    y: np.ndarray
    x1: np.ndarray
    mu: Optional[np.ndarray] = None
    intercept: Optional[float] = None


@dataclass
class ClusterSet:
    clusters: List[np.ndarray] = field(default_factory=list)
    max_cross_corr: float = 0.0

    def __len__(self):
        return len(self.clusters)

    def labels(self, p: int) -> np.ndarray:
        out = np.empty(p, dtype=int)
        for k, members in enumerate(self.clusters):
            out[members] = k
        return out


def log_uniform_maf(low: float = SimulationDefaults.MAF_MIN,
                    high: float = SimulationDefaults.MAF_MAX) -> Callable:
    def sampler(rng, size):
        return np.exp(rng.uniform(np.log(low), np.log(high), size=size))
    return sampler


def abs_correlation(G) -> np.ndarray:
    """|Pearson r| between columns; constant columns correlate 0 with everything"""
    G = np.asarray(G, dtype=np.float64)
    centered = G - G.mean(axis=0)
    norms = np.sqrt((centered ** 2).sum(axis=0))
    constant = norms == 0
    norms[constant] = 1.0
    z = centered / norms
    r = np.abs(z.T @ z)
    r[constant, :] = 0.0
    r[:, constant] = 0.0
    np.fill_diagonal(r, 1.0)
    return np.clip(r, 0.0, 1.0)


class SimulationService:
    """Synthetic genotype/trait replicates"""

    @classmethod
    def simulate_genotypes(cls, n: int, p: int, rho: float = SimulationDefaults.RHO,
                           maf_sampler: Optional[Callable] = None,
                           seed: int = 0) -> GenotypeMatrix:
        """Two AR(1) latent haplotypes per individual, thresholded at Φ⁻¹(m_j)"""
        if not 0.0 <= rho < 1.0:
            raise ValidationError(f"rho must lie in [0, 1), got {rho}")
        if n < 1 or p < 1:
            raise ValidationError("n and p must be positive")
        rng = np.random.default_rng(seed)
        sampler = maf_sampler or log_uniform_maf()
        mafs = np.asarray(sampler(rng, p), dtype=np.float64)
        if mafs.shape != (p,) or np.any((mafs <= 0) | (mafs > 0.5)):
            raise ValidationError("MAF sampler must return p values in (0, 0.5]")
        cut = norm.ppf(mafs)
        innovation = np.sqrt(1.0 - rho * rho)

        dosages = np.zeros((n, p))
        for _ in range(2):
            z = rng.standard_normal(n)
            noise = rng.standard_normal((n, p))
            for j in range(p):
                if j > 0:
                    z = rho * z + innovation * noise[:, j]
                dosages[:, j] += z < cut[j]

        G = GenotypeMatrix.from_dosages(dosages)
        logger.debug("Simulated genotypes n=%d p=%d rho=%.2f", n, p, rho)
        return G

    @classmethod
    def mac_filter(cls, G: GenotypeMatrix, mac_min: int = SimulationDefaults.MAC_MIN) -> GenotypeMatrix:
        keep = np.flatnonzero(G.mac > mac_min)
        if keep.size == 0:
            raise DataError(f"MAC filter (> {mac_min}) removed every variant")
        logger.debug("MAC filter kept %d/%d variants", keep.size, G.p)
        return G.subset(keep)

    @classmethod
    def ld_cluster(cls, G, r_max: float = SimulationDefaults.R_MAX) -> ClusterSet:
        """Average-linkage clusters on 1−|r|, then joined so no cross pair exceeds r_max

        The average-linkage tree is cut at height 1 − r_max; any pair across
        clusters that still has |r| > r_max merges its two clusters (connected
        components of the |r| > r_max graph), which makes the ceiling hold.
        """
        dosages = G.dosages if isinstance(G, GenotypeMatrix) else np.asarray(G, dtype=np.float64)
        p = dosages.shape[1]
        if p < 2:
            raise ValidationError("Clustering needs at least two variants")
        r = abs_correlation(dosages)
        distance = 1.0 - r
        np.fill_diagonal(distance, 0.0)
        tree = linkage(squareform(distance, checks=False), method='average')
        labels = fcluster(tree, t=1.0 - r_max, criterion='distance')

        strong = r > r_max
        np.fill_diagonal(strong, False)
        same = labels[:, None] == labels[None, :]
        adjacency = csr_matrix(strong | same)
        _, merged = connected_components(adjacency, directed=False)

        clusters = [np.flatnonzero(merged == k) for k in np.unique(merged)]
        clusters.sort(key=lambda members: members[0])
        cross = ~(merged[:, None] == merged[None, :])
        max_cross = float(r[cross].max()) if cross.any() else 0.0
        return ClusterSet(clusters=clusters, max_cross_corr=max_cross)

    @classmethod
    def choose_causal(cls, clusters: ClusterSet, s: int = SimulationDefaults.N_CAUSAL,
                      seed: int = 0) -> np.ndarray:
        if len(clusters) < s:
            raise DataError(f"Need at least {s} clusters, have {len(clusters)}")
        rng = np.random.default_rng(seed)
        picked = rng.choice(len(clusters), size=s, replace=False)
        return np.array([int(rng.choice(clusters.clusters[k])) for k in picked], dtype=int)

    @classmethod
    def effect_sizes(cls, mafs, variance_target: float, variances=None, signs=None):
        return trait_model.effect_sizes(mafs, variance_target, variances=variances, signs=signs)

    @classmethod
    def trait_spec(cls, G: GenotypeMatrix, kind: str, causal, variance_target: float,
                   signs: Optional[Sequence[int]] = None) -> TraitSpec:
        """Calibrate effects against the empirical variances of the causal columns"""
        causal = np.asarray(causal, dtype=int)
        variances = G.dosages[:, causal].var(axis=0)
        a, beta = trait_model.effect_sizes(G.maf[causal], variance_target,
                                           variances=variances, signs=signs)
        return TraitSpec(kind=kind, causal=causal, beta=beta, a=a)

    @classmethod
    def gen_quantitative(cls, G: GenotypeMatrix, spec: TraitSpec, seed: int = 0,
                         x1=None) -> TraitData:
        rng = np.random.default_rng(seed)
        n = G.n
        x1 = rng.standard_normal(n) if x1 is None else np.asarray(x1, dtype=np.float64)
        noise = rng.normal(0.0, np.sqrt(spec.noise_variance), size=n)
        genetic = trait_model.genetic_term(G.dosages[:, spec.causal], spec.beta, spec.scale)
        y = trait_model.quantitative_trait(x1, genetic, noise)
        return TraitData(y=y, x1=x1)

    @classmethod
    def gen_dichotomous(cls, G: GenotypeMatrix, spec: TraitSpec, seed: int = 0,
                        x1=None) -> TraitData:
        rng = np.random.default_rng(seed)
        n = G.n
        x1 = rng.standard_normal(n) if x1 is None else np.asarray(x1, dtype=np.float64)
        eta = x1 + trait_model.genetic_term(G.dosages[:, spec.causal], spec.beta, spec.scale)
        intercept = trait_model.solve_intercept(eta, spec.prevalence)
        mu = trait_model.logistic_mean(intercept, eta)
        y = (rng.uniform(size=n) < mu).astype(np.float64)
        return TraitData(y=y, x1=x1, mu=mu, intercept=intercept)

    @classmethod
    def gen_trait(cls, G: GenotypeMatrix, spec: TraitSpec, seed: int = 0) -> TraitData:
        if spec.kind == 'quantitative':
            return cls.gen_quantitative(G, spec, seed)
        if spec.kind == 'dichotomous':
            return cls.gen_dichotomous(G, spec, seed)
        raise ValidationError(f"Unknown trait kind: {spec.kind}")
