"""Discovery of candidate block-diagonal structures by thresholding
residual covariance estimates and extracting connected components.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .model import BlockStructure


def _check_symmetric(matrix: np.ndarray) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError("matrix must be square")
    if not np.allclose(matrix, matrix.T, atol=1e-10, rtol=0.0):
        raise ValueError("matrix must be symmetric")
    return matrix


def threshold_matrix(matrix: np.ndarray, level: float) -> np.ndarray:
    """Zero every off-diagonal entry with absolute value at most ``level``.

    The diagonal is always retained: variances must stay positive no
    matter how aggressive the threshold is.
    """
    matrix = _check_symmetric(matrix)
    if level < 0:
        raise ValueError("threshold level must be non-negative")
    out = np.where(np.abs(matrix) <= level, 0.0, matrix)
    np.fill_diagonal(out, np.diag(matrix))
    return out


def partition_from_threshold(matrix: np.ndarray, level: float) -> tuple[tuple[int, ...], ...]:
    """Variable groups induced by thresholding at ``level``.

    Two variables share a group when they are connected through entries
    whose absolute value exceeds the threshold; the groups are the
    connected components of that graph, which makes the thresholded matrix
    exactly block-diagonal up to permutation. Groups come back sorted by
    their smallest member.
    """
    matrix = _check_symmetric(matrix)
    dim = matrix.shape[0]
    adjacency = np.abs(matrix) > level
    np.fill_diagonal(adjacency, False)
    n_comp, labels = connected_components(csr_matrix(adjacency), directed=False)
    groups = [[] for _ in range(n_comp)]
    for var, lab in enumerate(labels):
        groups[lab].append(var)
    groups.sort(key=lambda g: g[0])
    return tuple(tuple(g) for g in groups)


@dataclass(frozen=True)
class ThresholdPath:
    """Threshold paths per cluster plus the paired global candidate list.

    ``thresholds[k]`` is the strictly increasing grid used for cluster
    ``k`` and ``partitions[k]`` the induced partitions at each level.
    ``candidates`` pairs the clusters at equal sparsity rank, deduplicated
    and ordered densest to sparsest.
    """

    thresholds: tuple[np.ndarray, ...]
    partitions: tuple[tuple[tuple[tuple[int, ...], ...], ...], ...]
    candidates: tuple[BlockStructure, ...]


def _level_grid(matrix: np.ndarray, n_levels: int) -> np.ndarray:
    """Quantile grid of off-diagonal magnitudes, always containing 0 and the max."""
    dim = matrix.shape[0]
    upper = np.abs(matrix[np.triu_indices(dim, k=1)])
    if upper.size == 0:
        return np.zeros(n_levels + 2)
    probs = np.linspace(0.0, 1.0, max(n_levels, 2))
    quantiles = np.quantile(upper, probs, method="lower")
    return np.concatenate([[0.0], quantiles, [float(upper.max())]])


def threshold_path(residuals: Sequence[np.ndarray],
                   max_candidates: int | None = None) -> ThresholdPath:
    """Build the candidate structures for a set of per-cluster residuals.

    Each cluster gets its own threshold grid (quantiles of its off-diagonal
    magnitudes) but the clusters are paired rank by rank, so every
    candidate combines partitions of comparable sparsity. Ranks producing
    an already-seen multi-cluster structure are dropped.
    """
    if len(residuals) == 0:
        raise ValueError("need at least one residual matrix")
    mats = [_check_symmetric(m) for m in residuals]
    dim = mats[0].shape[0]
    if any(m.shape[0] != dim for m in mats):
        raise ValueError("residual matrices must share their dimension")
    if max_candidates is None:
        max_candidates = dim
    if max_candidates < 1:
        raise ValueError("max_candidates must be positive")

    grids = [_level_grid(m, max_candidates) for m in mats]
    n_ranks = min(len(g) for g in grids)

    seen: dict[BlockStructure, None] = {}
    for rank in range(n_ranks):
        parts = tuple(partition_from_threshold(m, g[rank])
                      for m, g in zip(mats, grids))
        seen.setdefault(BlockStructure(parts, dim), None)
    candidates = list(seen)
    if len(candidates) > max_candidates:
        keep = np.unique(np.linspace(0, len(candidates) - 1,
                                     max_candidates).round().astype(int))
        candidates = [candidates[i] for i in keep]

    per_thresholds = []
    per_partitions = []
    for m, g in zip(mats, grids):
        levels = np.unique(g)
        per_thresholds.append(levels)
        per_partitions.append(tuple(partition_from_threshold(m, lev)
                                    for lev in levels))
    return ThresholdPath(tuple(per_thresholds), tuple(per_partitions),
                         tuple(candidates))


def candidate_structures(residuals: Sequence[np.ndarray],
                         max_candidates: int | None = None) -> list[BlockStructure]:
    """Candidate block structures, densest first. See :func:`threshold_path`."""
    return list(threshold_path(residuals, max_candidates).candidates)
