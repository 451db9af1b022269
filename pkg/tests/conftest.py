"""Shared helpers: random valid parameter sets and partition utilities."""

import numpy as np
import pytest

from bllim import BlockStructure, InverseParams


def random_structure(n_clusters, dim, rng):
    """Random partition per cluster built from a shuffled index split."""
    groups = []
    for _ in range(n_clusters):
        perm = rng.permutation(dim)
        cuts = np.sort(rng.choice(np.arange(1, dim), size=rng.integers(0, dim - 1),
                                  replace=False)) if dim > 1 else np.array([], int)
        parts = np.split(perm, cuts)
        groups.append(tuple(tuple(int(i) for i in part) for part in parts))
    return BlockStructure(tuple(groups), dim)


def random_spd(dim, rng, scale=1.0):
    a = rng.standard_normal((dim, dim))
    return scale * (a @ a.T + dim * np.eye(dim))


def random_params(n_clusters, response_dim, covariate_dim, rng,
                  structure=None):
    """Random valid inverse-direction parameters."""
    if structure is None:
        structure = random_structure(n_clusters, covariate_dim, rng)
    weights = rng.uniform(0.2, 1.0, n_clusters)
    weights /= weights.sum()
    residual = np.zeros((n_clusters, covariate_dim, covariate_dim))
    for k in range(n_clusters):
        for g in structure.groups[k]:
            idx = np.asarray(g)
            residual[k][np.ix_(idx, idx)] = random_spd(len(idx), rng, 0.5)
    return InverseParams(
        weights=weights,
        response_means=rng.standard_normal((n_clusters, response_dim)),
        response_covs=np.stack([random_spd(response_dim, rng, 0.5)
                                for _ in range(n_clusters)]),
        coeffs=rng.standard_normal((n_clusters, covariate_dim, response_dim)),
        intercepts=rng.standard_normal((n_clusters, covariate_dim)),
        residual_covs=residual,
        structure=structure,
    )


def partition_labels(groups, dim):
    """Group-membership label vector of a partition, for Rand comparisons."""
    labels = np.zeros(dim, dtype=int)
    for g_idx, group in enumerate(groups):
        for var in group:
            labels[var] = g_idx
    return labels


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
