"""Synthetic data generators, signal-to-noise and error metrics, and the
repeated cross-validation harness used by the benchmark commands.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as sla
from scipy.stats import ortho_group

from .errors import BllimError
from .model import BlockCholesky, BlockStructure, Dataset, InverseParams


# ---------------------------------------------------------------------------
# Mixture-model sampling plan
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlanASpec:
    """Randomly parameterized mixture with block-Toeplitz residual noise.

    Mixture weights are normalized uniforms; means and intercepts are
    standard Gaussian; regression coefficients are Gaussian with standard
    deviation ``coeff_scale`` (the default targets a signal-to-noise ratio
    around 2); response covariances are random correlation matrices; each
    residual covariance is block-diagonal with block sizes drawn uniformly
    from 2..10 (remainder as one smaller block) and Toeplitz
    ``rho**|i-j|`` dependence inside every block.
    """

    n: int
    n_clusters: int = 5
    response_dim: int = 2
    covariate_dim: int = 100
    rho: float = 0.9
    coeff_scale: float = float(np.sqrt(0.5))
    seed: int = 0

    def __post_init__(self):
        if self.n < self.n_clusters * (self.response_dim + 1):
            raise ValueError("n is too small for the requested cluster count")
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")
        if min(self.n_clusters, self.response_dim, self.covariate_dim) < 1:
            raise ValueError("dimensions must be positive")


def random_correlation_matrix(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Random orthogonal rotation of random positive eigenvalues, unit diagonal."""
    if dim == 1:
        return np.ones((1, 1))
    eigenvalues = rng.uniform(0.5, 1.5, size=dim)
    rotation = ortho_group.rvs(dim, random_state=rng)
    mat = (rotation * eigenvalues) @ rotation.T
    scale = np.sqrt(np.diag(mat))
    mat = mat / np.outer(scale, scale)
    return 0.5 * (mat + mat.T)


def _random_block_sizes(dim: int, rng: np.random.Generator) -> list[int]:
    sizes = []
    left = dim
    while left > 0:
        draw = int(rng.integers(2, 11))
        sizes.append(min(draw, left))
        left -= sizes[-1]
    return sizes


def sample_plan_a_params(spec: PlanASpec) -> InverseParams:
    """Draw one parameter set from the plan; deterministic given the seed.

    The planted block layout rides along as ``structure`` on the returned
    parameters, so simulation studies can compare recovered structures
    against the truth.
    """
    rng = np.random.default_rng(spec.seed)
    k, l, d = spec.n_clusters, spec.response_dim, spec.covariate_dim

    weights = rng.uniform(0.0, 1.0, size=k)
    weights = weights / weights.sum()
    response_means = rng.standard_normal((k, l))
    intercepts = rng.standard_normal((k, d))
    coeffs = rng.normal(0.0, spec.coeff_scale, size=(k, d, l))
    response_covs = np.stack([random_correlation_matrix(l, rng) for _ in range(k)])

    residual_covs = np.zeros((k, d, d))
    groups = []
    for j in range(k):
        start = 0
        cluster_groups = []
        for size in _random_block_sizes(d, rng):
            idx = np.arange(start, start + size)
            residual_covs[j][np.ix_(idx, idx)] = sla.toeplitz(
                spec.rho ** np.arange(size))
            cluster_groups.append(tuple(int(i) for i in idx))
            start += size
        groups.append(tuple(cluster_groups))
    structure = BlockStructure(tuple(groups), d)

    return InverseParams(weights, response_means, response_covs,
                         coeffs, intercepts, residual_covs, structure)


def generate_plan_a(theta: InverseParams, n: int,
                    seed: int | np.random.Generator = 0
                    ) -> tuple[Dataset, np.ndarray]:
    """Sample observations from the mixture; returns the data and labels.

    Cluster labels come from the mixture weights, responses from the
    per-cluster Gaussian, covariates from the affine map plus structured
    residual noise.
    """
    rng = np.random.default_rng(seed)
    k = theta.n_clusters
    labels = rng.choice(k, size=n, p=theta.weights)
    y = np.zeros((n, theta.response_dim))
    x = np.zeros((n, theta.covariate_dim))
    for j in range(k):
        sel = np.nonzero(labels == j)[0]
        if sel.size == 0:
            continue
        gamma_chol = BlockCholesky(theta.response_covs[j])
        sigma_chol = BlockCholesky(theta.residual_covs[j],
                                   theta.structure.groups[j])
        y[sel] = theta.response_means[j] + gamma_chol.sample(rng, sel.size)
        x[sel] = (y[sel] @ theta.coeffs[j].T + theta.intercepts[j]
                  + sigma_chol.sample(rng, sel.size))
    return Dataset(x, y), labels


def snr(theta: InverseParams) -> tuple[np.ndarray, float]:
    """Per-cluster and mixture-weighted signal-to-noise ratios.

    The cluster ratio is the trace of the covariate variance (signal plus
    noise) over the trace of the residual noise alone.
    """
    per_cluster = np.zeros(theta.n_clusters)
    for k in range(theta.n_clusters):
        signal = theta.coeffs[k] @ theta.response_covs[k] @ theta.coeffs[k].T
        noise_trace = float(np.trace(theta.residual_covs[k]))
        per_cluster[k] = (float(np.trace(signal)) + noise_trace) / noise_trace
    return per_cluster, float(theta.weights @ per_cluster)


# ---------------------------------------------------------------------------
# Nonlinear manifold plan
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ManifoldSpec:
    """Nonlinear inverse-regression surfaces with partially hidden responses.

    Each covariate dimension is a cosine wave in the observed response
    (and, depending on the function tag, in a hidden uniform variable)
    plus an optional cubic term in a hidden variable. ``covariance``
    selects the noise dependence pattern.
    """

    function: str = "f"
    covariance: str = "identity"
    n_obs: int = 200
    dim: int = 50
    factor_rank: int = 5
    block_size: int = 5
    rho: float = 0.9
    trace_ratio: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.function not in ("f", "g", "h"):
            raise ValueError("function must be one of 'f', 'g', 'h'")
        if self.covariance not in ("factor", "toeplitz", "identity", "blocks"):
            raise ValueError(
                "covariance must be 'factor', 'toeplitz', 'identity' or 'blocks'")
        if self.n_obs < 1 or self.dim < 1 or self.factor_rank < 1:
            raise ValueError("n_obs, dim and factor_rank must be positive")


@dataclass(frozen=True)
class ManifoldSample:
    """Generated manifold data: observed response only, plus ground truth."""

    data: Dataset
    hidden: np.ndarray      # (n, 2) hidden uniform responses
    noise_cov: np.ndarray   # (D, D) covariance actually used for the noise
    function: str
    amplitude: np.ndarray   # per-dimension cosine amplitudes
    frequency: np.ndarray
    phase: np.ndarray
    hidden_gain: np.ndarray  # weight of the hidden variable inside the cosine
    cubic_gain: np.ndarray   # weight of the cubic hidden term


def factor_covariance(dim: int, rank: int, trace_ratio: float,
                      rng: np.random.Generator) -> np.ndarray:
    """Diagonal-plus-low-rank covariance with an exact trace split.

    The low-rank part is rescaled so that its trace accounts for exactly
    ``trace_ratio`` of the total; the result is returned unnormalized.
    """
    diag = rng.uniform(0.1, 1.0, size=dim)
    loadings = rng.standard_normal((dim, rank))
    low_rank_trace = float(np.sum(loadings ** 2))
    scale = np.sqrt(trace_ratio / (1.0 - trace_ratio) * diag.sum() / low_rank_trace)
    loadings = scale * loadings
    return np.diag(diag) + loadings @ loadings.T


def _to_correlation(matrix: np.ndarray) -> np.ndarray:
    scale = np.sqrt(np.diag(matrix))
    return matrix / np.outer(scale, scale)


def manifold_noise_covariance(spec: ManifoldSpec,
                              rng: np.random.Generator) -> np.ndarray:
    """Draw the noise covariance for one manifold dataset."""
    d = spec.dim
    if spec.covariance == "identity":
        return np.eye(d)
    if spec.covariance == "toeplitz":
        return sla.toeplitz(spec.rho ** np.arange(d))
    if spec.covariance == "factor":
        return _to_correlation(
            factor_covariance(d, spec.factor_rank, spec.trace_ratio, rng))
    # blocks: independent factor structure inside each block
    out = np.zeros((d, d))
    for start in range(0, d, spec.block_size):
        size = min(spec.block_size, d - start)
        idx = np.arange(start, start + size)
        block = factor_covariance(size, min(spec.factor_rank, size),
                                  spec.trace_ratio, rng)
        out[np.ix_(idx, idx)] = _to_correlation(block)
    return out


def manifold_surface(function: str, amplitude, frequency, phase,
                     hidden_gain, cubic_gain, t: np.ndarray,
                     hidden: np.ndarray) -> np.ndarray:
    """Noise-free covariate profiles for the given responses."""
    if function == "f":
        angle = np.outer(t, frequency) / 10.0 + phase
        return amplitude * np.cos(angle) + cubic_gain * hidden[:, :1] ** 3
    if function == "g":
        angle = (np.outer(t, frequency) / 10.0
                 + np.outer(hidden[:, 0], hidden_gain) + phase)
        return amplitude * np.cos(angle)
    if function == "h":
        angle = (np.outer(t, frequency) / 10.0
                 + np.outer(hidden[:, 0], hidden_gain) + phase)
        return amplitude * np.cos(angle) + cubic_gain * hidden[:, 1:2] ** 3
    raise ValueError(f"unknown manifold function {function!r}")


def _draw_observations(sample_params, noise_chol_t: np.ndarray, n: int,
                       rng: np.random.Generator) -> tuple[Dataset, np.ndarray]:
    function, amplitude, frequency, phase, hidden_gain, cubic_gain = sample_params
    t = rng.uniform(1.0, 10.0, size=n)
    hidden = rng.uniform(-1.0, 1.0, size=(n, 2))
    clean = manifold_surface(function, amplitude, frequency, phase,
                             hidden_gain, cubic_gain, t, hidden)
    noise = rng.standard_normal((n, clean.shape[1])) @ noise_chol_t
    return Dataset(clean + noise, t[:, None]), hidden


def generate_manifold(spec: ManifoldSpec) -> ManifoldSample:
    """Generate one manifold dataset; deterministic given the seed.

    One parameter set is drawn per dataset, then ``n_obs`` observations of
    the observed response ``t`` (uniform on [1, 10]) and the hidden pair
    (uniform on [-1, 1] each). Only ``t`` enters the returned dataset.
    """
    rng = np.random.default_rng(spec.seed)
    d = spec.dim
    amplitude = rng.uniform(0.0, 2.0, size=d)
    frequency = rng.uniform(0.0, 4.0 * np.pi, size=d)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=d)
    hidden_gain = rng.uniform(0.0, np.pi, size=d)
    cubic_gain = rng.uniform(0.0, 2.0, size=d)
    noise_cov = manifold_noise_covariance(spec, rng)
    params = (spec.function, amplitude, frequency, phase, hidden_gain, cubic_gain)
    chol_t = sla.cholesky(noise_cov, lower=True).T
    data, hidden = _draw_observations(params, chol_t, spec.n_obs, rng)
    return ManifoldSample(data, hidden, noise_cov, spec.function, amplitude,
                          frequency, phase, hidden_gain, cubic_gain)


def sample_manifold_observations(sample: ManifoldSample, n: int,
                                 seed: int | np.random.Generator
                                 ) -> tuple[Dataset, np.ndarray]:
    """Fresh observations from an already-drawn surface and noise covariance.

    Used to build test sets that share the generating surface with a
    training set but contain independent draws.
    """
    rng = np.random.default_rng(seed)
    params = (sample.function, sample.amplitude, sample.frequency,
              sample.phase, sample.hidden_gain, sample.cubic_gain)
    chol_t = sla.cholesky(sample.noise_cov, lower=True).T
    return _draw_observations(params, chol_t, n, rng)


# ---------------------------------------------------------------------------
# Metrics and cross-validation
# ---------------------------------------------------------------------------

def rmse(y_true: np.ndarray, y_pred: np.ndarray) -> np.ndarray:
    """Root mean square error per response column."""
    y_true = np.atleast_2d(np.asarray(y_true, dtype=float))
    y_pred = np.atleast_2d(np.asarray(y_pred, dtype=float))
    if y_true.shape != y_pred.shape:
        raise ValueError(
            f"shape mismatch: {y_true.shape} vs {y_pred.shape}")
    return np.sqrt(np.mean((y_true - y_pred) ** 2, axis=0))


@dataclass(frozen=True)
class CvResult:
    """Statistics of repeated k-fold cross-validation."""

    mean: np.ndarray        # (L,) mean RMSE per response
    sd: np.ndarray          # (L,) standard deviation of RMSE per response
    evaluations: int
    failures: int
    per_fold: np.ndarray    # (evaluations, L) one row per successful fold


def fold_assignments(n: int, folds: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Random partition of 0..n-1 into folds of near-equal size."""
    if folds < 2 or folds > n:
        raise ValueError("folds must be between 2 and n")
    return [np.sort(part) for part in np.array_split(rng.permutation(n), folds)]


def cross_validate(data: Dataset,
                   fit_predict: Callable[[Dataset, np.ndarray], np.ndarray],
                   folds: int = 10, repetitions: int = 50,
                   seed: int = 0) -> CvResult:
    """Repeated k-fold cross-validation of a fit/predict procedure.

    ``fit_predict(train, x_test)`` must return an (m, L) prediction matrix.
    Fold assignments are re-randomized on every repetition from a stream
    derived from (seed, repetition), so results do not depend on execution
    order. Failing folds are counted and excluded from the statistics.
    """
    scores = []
    failures = 0
    for rep in range(repetitions):
        rng = np.random.default_rng([seed, rep])
        for test_idx in fold_assignments(data.n, folds, rng):
            train_mask = np.ones(data.n, dtype=bool)
            train_mask[test_idx] = False
            train = Dataset(data.X[train_mask], data.Y[train_mask])
            try:
                pred = fit_predict(train, data.X[test_idx])
                scores.append(rmse(data.Y[test_idx], pred))
            except (BllimError, np.linalg.LinAlgError):
                failures += 1
    per_fold = (np.asarray(scores) if scores
                else np.empty((0, data.response_dim)))
    if scores:
        mean = per_fold.mean(axis=0)
        sd = per_fold.std(axis=0, ddof=1) if len(scores) > 1 else np.zeros_like(mean)
    else:
        mean = np.full(data.response_dim, np.nan)
        sd = np.full(data.response_dim, np.nan)
    return CvResult(mean=mean, sd=sd, evaluations=len(scores),
                    failures=failures, per_fold=per_fold)
