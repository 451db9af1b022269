"""Model selection: conditional likelihood scoring, slope-heuristic and BIC
selection, and the end-to-end pipeline that discovers block structures,
fits every candidate, and picks the structure and cluster count.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from . import em
from .blocks import candidate_structures
from .errors import NoModelError
from .model import (
    BlockCholesky,
    BlockStructure,
    Dataset,
    ForwardParams,
    InverseParams,
    forward_from_inverse,
)


def conditional_loglik(data: Dataset, theta: InverseParams) -> float:
    """Log-likelihood of the covariates given the responses.

    This is the selection criterion's likelihood: the response marginal
    acts as a gate and each cluster contributes its covariate density
    around the affine mean. It differs from the joint likelihood the EM
    maximizes exactly by the response mixture marginal.
    """
    n = data.n
    n_clusters = theta.n_clusters
    log_gate = np.zeros((n, n_clusters))
    log_cond = np.zeros((n, n_clusters))
    for k in range(n_clusters):
        gamma_chol = BlockCholesky(theta.response_covs[k],
                                   context=f"response_covs[{k}]")
        sigma_chol = BlockCholesky(theta.residual_covs[k],
                                   theta.structure.groups[k],
                                   context=f"residual_covs[{k}]")
        log_gate[:, k] = (np.log(theta.weights[k])
                          + gamma_chol.logpdf(data.Y - theta.response_means[k]))
        fitted = data.Y @ theta.coeffs[k].T + theta.intercepts[k]
        log_cond[:, k] = sigma_chol.logpdf(data.X - fitted)
    log_gate -= logsumexp(log_gate, axis=1, keepdims=True)
    return float(logsumexp(log_gate + log_cond, axis=1).sum())


def bic(loglik: float, delta: int, n: int) -> float:
    """Bayesian information criterion, lower is better."""
    if n < 1:
        raise ValueError("n must be at least 1")
    return -2.0 * loglik + delta * float(np.log(n))


@dataclass(frozen=True)
class SlopeSelection:
    """Outcome of one selection pass.

    ``kappa`` is the calibrated penalty slope, ``None`` when it could not
    be calibrated (single candidate, flat geometry, or BIC fallback).
    """

    index: int
    kappa: float | None
    used_bic: bool


def _lower_hull(deltas: np.ndarray, gammas: np.ndarray) -> list[int]:
    """Indices of the strict lower convex hull of (delta, gamma), delta ascending."""
    order = np.lexsort((gammas, deltas))
    hull: list[int] = []
    for i in order:
        # equal deltas: keep only the smallest gamma (first in lexsort order)
        if hull and deltas[hull[-1]] == deltas[i]:
            continue
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = ((deltas[b] - deltas[a]) * (gammas[i] - gammas[a])
                     - (deltas[i] - deltas[a]) * (gammas[b] - gammas[a]))
            if cross <= 0:  # drops collinear points: jumps merge at equal slopes
                hull.pop()
            else:
                break
        hull.append(int(i))
    return hull


def _argmin_penalized(gammas: np.ndarray, deltas: np.ndarray, kappa: float) -> int:
    crit = gammas + kappa * deltas
    best = np.flatnonzero(np.isclose(crit, crit.min(), rtol=0.0, atol=1e-12))
    # ties go to the smallest dimension, then to the first candidate
    return int(best[np.lexsort((best, deltas[best]))[0]])


def _bic_choice(gammas: np.ndarray, deltas: np.ndarray, n_samples: int) -> int:
    scores = np.array([bic(-n_samples * g, int(d), n_samples)
                       for g, d in zip(gammas, deltas)])
    best = np.flatnonzero(np.isclose(scores, scores.min(), rtol=0.0, atol=1e-9))
    return int(best[np.lexsort((best, deltas[best]))[0]])


def slope_select(candidates: Sequence[tuple[float, int]],
                 n_samples: int) -> SlopeSelection:
    """Pick a candidate by the dimension-jump slope heuristic.

    ``candidates`` holds (per-sample negative log-likelihood, dimension)
    pairs. The penalized criterion ``gamma + kappa * delta`` is swept over
    its exact breakpoints (segment slopes of the lower convex hull); the
    breakpoint causing the largest drop in selected dimension calibrates
    ``kappa``, and the final choice minimizes the criterion at twice that
    slope.

    The calibration is only trusted when the jump is a real elbow: the
    fit curve must descend at least twice as steeply just before the jump
    as along the jump itself, otherwise the doubled slope cannot separate
    the elbow from the rest and the "jump" merely reflects how the
    candidate dimensions happen to be spaced. With fewer than 4 distinct
    dimensions, or when no trustworthy jump exists, the choice falls back
    to BIC.
    """
    pairs = [(float(g), int(d)) for g, d in candidates]
    if not pairs:
        raise NoModelError("no candidates to select from")
    gammas = np.array([p[0] for p in pairs])
    deltas = np.array([p[1] for p in pairs], dtype=float)
    if len(pairs) == 1:
        return SlopeSelection(index=0, kappa=None, used_bic=False)
    if len(np.unique(deltas)) < 4:
        return SlopeSelection(index=_bic_choice(gammas, deltas, n_samples),
                              kappa=None, used_bic=True)

    hull = _lower_hull(deltas, gammas)
    # restrict to the strictly decreasing part: beyond the minimum-gamma
    # vertex the penalized criterion can never prefer a larger dimension
    cut = int(np.argmin(gammas[hull]))
    hull = hull[:cut + 1]
    if len(hull) >= 2:
        breakpoints = []
        for a, b in zip(hull[:-1], hull[1:]):  # delta[a] < delta[b]
            kappa = (gammas[a] - gammas[b]) / (deltas[b] - deltas[a])
            breakpoints.append((kappa, deltas[b] - deltas[a]))
        jumps = np.array([j for _, j in breakpoints])
        kappas = np.array([k for k, _ in breakpoints])
        elbow = int(np.flatnonzero(jumps == jumps.max())[0])
        if elbow >= 1 and kappas[elbow] <= 0.5 * kappas[elbow - 1]:
            kappa_hat = float(kappas[elbow])
            idx = _argmin_penalized(gammas, deltas, 2.0 * kappa_hat)
            return SlopeSelection(index=idx, kappa=kappa_hat, used_bic=False)
    return SlopeSelection(index=_bic_choice(gammas, deltas, n_samples),
                          kappa=None, used_bic=True)


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PipelineConfig:
    """Configuration of the full fitting pipeline.

    ``max_structures`` bounds the candidate structures per cluster count
    (``None`` means the covariate dimension). ``threshold_scale`` chooses
    whether thresholds apply to raw residual covariances or to their
    correlation rescaling. ``diagonal_only`` restricts the pipeline to the
    diagonal structure, which is the classical heteroscedastic baseline.
    """

    max_structures: int | None = None
    selection: str = "slope"
    threshold_scale: str = "covariance"
    diagonal_only: bool = False
    em: em.EmConfig = field(default_factory=em.EmConfig)

    def __post_init__(self):
        if self.selection not in ("slope", "bic"):
            raise ValueError("selection must be 'slope' or 'bic'")
        if self.threshold_scale not in ("covariance", "correlation"):
            raise ValueError("threshold_scale must be 'covariance' or 'correlation'")


@dataclass(frozen=True)
class CandidateRecord:
    """One row of the selection report."""

    n_clusters: int
    rank: int
    delta: int
    gamma: float | None
    status: str
    iterations: int
    selected: bool = False

    def to_dict(self) -> dict:
        return {
            "n_clusters": self.n_clusters,
            "rank": self.rank,
            "delta": self.delta,
            "gamma": self.gamma,
            "status": self.status,
            "iterations": self.iterations,
            "selected": self.selected,
        }


@dataclass(frozen=True)
class SelectionReport:
    """Everything the pipeline tried, plus what it chose and why."""

    records: tuple[CandidateRecord, ...]
    n_clusters: int
    blocks: list[list[list[int]]]
    kappa_structure: dict[int, float | None]
    kappa_clusters: float | None
    bic_fallback_structure: dict[int, bool]
    bic_fallback_clusters: bool
    selection_method: str

    def to_dict(self) -> dict:
        return {
            "candidates": [r.to_dict() for r in self.records],
            "n_clusters": self.n_clusters,
            "blocks": self.blocks,
            "kappa_structure": {str(k): v for k, v in self.kappa_structure.items()},
            "kappa_clusters": self.kappa_clusters,
            "bic_fallback_structure": {str(k): v for k, v
                                       in self.bic_fallback_structure.items()},
            "bic_fallback_clusters": self.bic_fallback_clusters,
            "selection_method": self.selection_method,
        }


@dataclass(frozen=True)
class PipelineResult:
    fit: em.FitResult
    forward: ForwardParams
    n_clusters: int
    structure: BlockStructure
    report: SelectionReport


def _to_correlation_scale(matrix: np.ndarray) -> np.ndarray:
    # residual estimates may be indefinite; scale by |diagonal| with a floor
    d = np.sqrt(np.maximum(np.abs(np.diag(matrix)), 1e-12))
    return matrix / np.outer(d, d)


def _select(pairs, n_samples, method) -> SlopeSelection:
    if method == "bic":
        gammas = np.array([g for g, _ in pairs])
        deltas = np.array([d for _, d in pairs], dtype=float)
        return SlopeSelection(index=_bic_choice(gammas, deltas, n_samples),
                              kappa=None, used_bic=True)
    return slope_select(pairs, n_samples)


def bllim_pipeline(data: Dataset, k_range: Sequence[int],
                   config: PipelineConfig | None = None,
                   extra_structures: Sequence[BlockStructure] | None = None
                   ) -> PipelineResult:
    """Fit and select the block structure and cluster count.

    For each candidate cluster count: fit the diagonal-structure model,
    estimate each cluster's unconstrained residual covariance, threshold it
    into a sparsity-ordered family of block structures, refit every
    candidate warm-started from the diagonal fit, and select a structure.
    A second selection pass over the per-count winners picks the cluster
    count. ``extra_structures`` are appended to the discovered candidates
    of the matching cluster count (useful in simulation studies where the
    generating structure is known).

    Raises
    ------
    NoModelError
        When every candidate for every cluster count is degenerate.
    """
    config = config or PipelineConfig()
    k_values = sorted(set(int(k) for k in k_range))
    if not k_values:
        raise ValueError("k_range must be non-empty")
    extras = list(extra_structures or [])

    records: list[CandidateRecord] = []
    winners = []          # (k, rank, structure, fit, gamma)
    kappa_structure: dict[int, float | None] = {}
    fallback_structure: dict[int, bool] = {}
    diagnostics: list[str] = []

    for k in k_values:
        diagonal = BlockStructure.singletons(k, data.covariate_dim)
        try:
            base_fit = em.fit(data, k, diagonal, config.em)
        except ValueError as exc:
            diagnostics.append(f"K={k}: {exc}")
            continue
        if not base_fit.ok:
            records.append(CandidateRecord(k, 0, base_fit.delta, None,
                                           "degenerate", base_fit.iterations))
            diagnostics.append(f"K={k}: diagonal fit degenerate")
            continue

        if config.diagonal_only:
            structures = [diagonal]
        else:
            residuals = [em.residual_covariance_full(
                data, base_fit.theta, base_fit.responsibilities, j)
                for j in range(k)]
            if config.threshold_scale == "correlation":
                residuals = [_to_correlation_scale(r) for r in residuals]
            structures = candidate_structures(residuals, config.max_structures)
            for extra in extras:
                if (extra.n_clusters == k and extra.dim == data.covariate_dim
                        and extra not in structures):
                    structures.append(extra)

        scored = []  # (gamma, delta, rank, structure, fit)
        for rank, structure in enumerate(structures):
            if structure == diagonal:
                cand_fit = base_fit
            else:
                cand_fit = em.fit(data, k, structure, config.em,
                                  init_responsibilities=base_fit.responsibilities)
            if not cand_fit.ok:
                records.append(CandidateRecord(k, rank, cand_fit.delta, None,
                                               "degenerate", cand_fit.iterations))
                continue
            gamma = -conditional_loglik(data, cand_fit.theta) / data.n
            records.append(CandidateRecord(k, rank, cand_fit.delta, gamma,
                                           "ok", cand_fit.iterations))
            scored.append((gamma, cand_fit.delta, rank, structure, cand_fit))

        if not scored:
            diagnostics.append(f"K={k}: all candidates degenerate")
            continue

        # among equal dimensions keep only the best likelihood
        best_by_delta: dict[int, tuple] = {}
        for entry in scored:
            gamma, delta = entry[0], entry[1]
            kept = best_by_delta.get(delta)
            if kept is None or gamma < kept[0]:
                best_by_delta[delta] = entry
        pool = sorted(best_by_delta.values(), key=lambda e: e[1])

        choice = _select([(e[0], e[1]) for e in pool], data.n, config.selection)
        kappa_structure[k] = choice.kappa
        fallback_structure[k] = choice.used_bic
        winners.append((k,) + tuple(pool[choice.index][2:]) +
                       (pool[choice.index][0],))

    if not winners:
        raise NoModelError("no viable model for any cluster count",
                           diagnostics=diagnostics)

    pairs = [(gamma, fit_.delta) for (_, _, _, fit_, gamma) in winners]
    final = _select(pairs, data.n, config.selection)
    k_hat, rank_hat, structure_hat, fit_hat, _ = winners[final.index]

    marked = tuple(
        CandidateRecord(r.n_clusters, r.rank, r.delta, r.gamma, r.status,
                        r.iterations,
                        selected=(r.n_clusters == k_hat and r.rank == rank_hat
                                  and r.status == "ok"))
        for r in sorted(records, key=lambda r: (r.n_clusters, r.rank))
    )
    report = SelectionReport(
        records=marked,
        n_clusters=k_hat,
        blocks=structure_hat.to_indices_1based(),
        kappa_structure=kappa_structure,
        kappa_clusters=final.kappa,
        bic_fallback_structure=fallback_structure,
        bic_fallback_clusters=final.used_bic,
        selection_method=config.selection,
    )
    return PipelineResult(fit=fit_hat,
                          forward=forward_from_inverse(fit_hat.theta),
                          n_clusters=k_hat,
                          structure=structure_hat,
                          report=report)
