"""EM estimation of the joint mixture for a fixed cluster count and block
structure: k-means initialization, responsibility updates, closed-form
weighted M-steps, and the total-variation stopping rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.special import logsumexp
from sklearn.cluster import KMeans

from .errors import DegenerateClusterError, NotSpdError
from .model import BlockCholesky, BlockStructure, Dataset, InverseParams, model_dimension

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class EmConfig:
    """Knobs of a single EM run.

    ``tol_fraction`` stops the iteration once the log-likelihood gain drops
    below that fraction of the total log-likelihood variation so far.
    ``min_mass`` is the smallest effective cluster mass considered
    estimable; ``None`` defaults to ``L + 1`` observations at fit time.
    ``ridge_scale`` sizes the jitter (relative to the mean diagonal) added
    to covariance blocks that fail to factorize.
    """

    max_iterations: int = 200
    tol_fraction: float = 1e-3
    restarts: int = 5
    pilot_iterations: int = 10
    ridge_scale: float = 1e-8
    min_mass: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1 or self.restarts < 1:
            raise ValueError("max_iterations and restarts must be positive")
        if self.pilot_iterations < 1:
            raise ValueError("pilot_iterations must be positive")
        if self.tol_fraction <= 0 or self.ridge_scale <= 0:
            raise ValueError("tol_fraction and ridge_scale must be positive")
        if self.min_mass is not None and self.min_mass <= 0:
            raise ValueError("min_mass must be positive")


@dataclass(frozen=True)
class DegenerateCluster:
    """Marks a fit abandoned because a cluster emptied out."""

    iteration: int
    cluster: int
    mass: float


@dataclass(frozen=True)
class FitResult:
    """Outcome of one EM run.

    ``loglik_trace`` holds the joint log-likelihood after every accepted
    iteration and is non-decreasing up to numerical noise. A degenerate
    run carries no parameters; ``ok`` distinguishes the two outcomes.
    """

    theta: InverseParams | None
    responsibilities: np.ndarray | None
    loglik_trace: np.ndarray
    delta: int
    converged: bool
    iterations: int
    degenerate: DegenerateCluster | None = None

    @property
    def ok(self) -> bool:
        return self.degenerate is None and self.theta is not None


def _spd_block(block: np.ndarray, ridge_scale: float, context: str) -> np.ndarray:
    """Symmetrize and, if needed, jitter a covariance block until it factorizes."""
    block = 0.5 * (block + block.T)
    ridge = max(ridge_scale * float(np.mean(np.diag(block))), 1e-12)
    eye = np.eye(block.shape[0])
    for attempt in range(8):
        try:
            sla.cholesky(block, lower=True)
            return block
        except sla.LinAlgError:
            block = block + ridge * eye
            ridge *= 10.0
    raise NotSpdError("covariance block stayed indefinite after jitter",
                      context=context)


def _whiten(joint: np.ndarray) -> np.ndarray:
    """Decorrelate and unit-scale via the pooled covariance eigenbasis.

    Plain per-column scaling leaves the strongly correlated noise
    directions dominating the Euclidean metric, which reliably traps
    k-means in partitions the EM cannot escape; full whitening makes the
    between-cluster mean differences visible. Near-null directions are
    dropped so rank-deficient data stays usable.
    """
    centered = joint - joint.mean(axis=0)
    cov = (centered.T @ centered) / max(joint.shape[0] - 1, 1)
    eigenvalues, eigenvectors = np.linalg.eigh(cov)
    floor = max(eigenvalues.max(), 0.0) * 1e-10
    keep = eigenvalues > floor
    if not keep.any():
        return np.zeros((joint.shape[0], 1))
    return (centered @ eigenvectors[:, keep]) / np.sqrt(eigenvalues[keep])


def _soften(labels: np.ndarray, n_clusters: int) -> np.ndarray:
    resp = np.full((labels.shape[0], n_clusters), 0.1 / n_clusters)
    resp[np.arange(labels.shape[0]), labels] += 0.9
    return resp


def _pilot_refine(data: Dataset, resp: np.ndarray, config: EmConfig
                  ) -> tuple[np.ndarray, float]:
    """Short regularized full-covariance GMM EM on the joint data.

    The unconstrained joint covariance nests every block structure, so its
    likelihood ranks candidate starts by how well they separate the true
    clusters rather than by how well correlated noise happens to split.
    A strong ridge keeps small clusters from producing near-singular
    covariances whose inflated in-sample likelihood would poison the
    ranking.
    """
    joint = np.hstack([data.Y, data.X])
    n, dim = joint.shape
    n_clusters = resp.shape[1]
    min_mass = config.min_mass if config.min_mass is not None else data.response_dim + 1
    score = -np.inf
    for _ in range(config.pilot_iterations):
        log_dens = np.zeros((n, n_clusters))
        for k in range(n_clusters):
            mass = resp[:, k].sum()
            if mass < min_mass:
                raise DegenerateClusterError(k, float(mass), float(min_mass))
            w = resp[:, k] / mass
            mean = w @ joint
            centered = joint - mean
            cov = (w * centered.T) @ centered
            cov += 0.05 * max(float(np.mean(np.diag(cov))), 1e-12) * np.eye(dim)
            chol = BlockCholesky(cov, context=f"pilot cluster {k}")
            log_dens[:, k] = np.log(mass / n) + chol.logpdf(centered)
        total = logsumexp(log_dens, axis=1)
        resp = np.exp(log_dens - total[:, None])
        score = float(total.sum())
    return resp, score


def initialize(data: Dataset, n_clusters: int, config: EmConfig | None = None) -> np.ndarray:
    """Soft responsibilities from k-means on the whitened joint data.

    Runs ``config.restarts`` independently seeded k-means passes, softens
    each hard assignment (0.9 on the own cluster, 0.1 spread uniformly),
    refines each start with a short full-covariance EM, and keeps the one
    with the best refined log-likelihood. The within-cluster sum of
    squares alone ranks starts poorly under strongly correlated noise.
    Rows are processed in a canonical sort order so the result does not
    depend on how the observations happen to be arranged.
    """
    config = config or EmConfig()
    needed = n_clusters * (data.response_dim + 1)
    if data.n < needed:
        raise ValueError(
            f"need at least {needed} observations to initialize "
            f"{n_clusters} clusters, got {data.n}"
        )
    if n_clusters == 1:
        return np.ones((data.n, 1))

    joint = _whiten(np.hstack([data.Y, data.X]))
    order = np.lexsort(joint.T[::-1])
    seeds = np.random.SeedSequence([config.seed, 0x1715]).generate_state(config.restarts)

    fallback = None
    best_resp = None
    best_score = -np.inf
    labels = np.empty(data.n, dtype=int)
    for seed in seeds:
        km = KMeans(n_clusters=n_clusters, n_init=1,
                    random_state=int(seed) % (2 ** 32))
        labels[order] = km.fit_predict(joint[order])
        resp = _soften(labels, n_clusters)
        if fallback is None:
            fallback = resp
        try:
            refined, score = _pilot_refine(data, resp, config)
        except (DegenerateClusterError, NotSpdError):
            continue
        if score > best_score:
            best_score = score
            best_resp = refined
    return best_resp if best_resp is not None else fallback


def e_step(data: Dataset, theta: InverseParams) -> tuple[np.ndarray, float]:
    """Posterior responsibilities and the joint log-likelihood.

    The per-cluster joint density factors as the response marginal times
    the covariate density around its affine mean; both pieces are evaluated
    in the log domain and normalized per row with log-sum-exp.
    """
    n = data.n
    n_clusters = theta.n_clusters
    log_joint = np.zeros((n, n_clusters))
    for k in range(n_clusters):
        gamma_chol = BlockCholesky(theta.response_covs[k],
                                   context=f"response_covs[{k}]")
        sigma_chol = BlockCholesky(theta.residual_covs[k],
                                   theta.structure.groups[k],
                                   context=f"residual_covs[{k}]")
        fitted = data.Y @ theta.coeffs[k].T + theta.intercepts[k]
        log_joint[:, k] = (np.log(theta.weights[k])
                           + gamma_chol.logpdf(data.Y - theta.response_means[k])
                           + sigma_chol.logpdf(data.X - fitted))
    row_total = logsumexp(log_joint, axis=1)
    bad = np.nonzero(~np.isfinite(row_total))[0]
    if bad.size:
        raise NotSpdError("zero joint density for an observation",
                          context=f"observation {bad[0]}")
    resp = np.exp(log_joint - row_total[:, None])
    return resp, float(row_total.sum())


def m_step(data: Dataset, responsibilities: np.ndarray,
           structure: BlockStructure, ridge_scale: float = 1e-8,
           min_mass: float | None = None) -> InverseParams:
    """Closed-form weighted parameter updates for a fixed block structure.

    Mixture weights and the response mean/covariance are the usual weighted
    mixture-model estimators; the affine map is the responsibility-weighted
    least squares of covariates on responses through the centered,
    sqrt-weight-scaled design; the residual covariance keeps only the
    within-block entries of the weighted residual second moment.

    Raises
    ------
    DegenerateClusterError
        When a cluster's effective mass falls below ``min_mass``, or below
        what its largest covariance block needs to be estimable (one more
        observation than the block size); jittering such blocks into
        formal positive definiteness would let their inflated in-sample
        likelihood corrupt every later model comparison.
    """
    resp = np.asarray(responsibilities, dtype=float)
    n, n_clusters = resp.shape
    l, d = data.response_dim, data.covariate_dim
    if min_mass is None:
        min_mass = l + 1

    weights = np.zeros(n_clusters)
    response_means = np.zeros((n_clusters, l))
    response_covs = np.zeros((n_clusters, l, l))
    coeffs = np.zeros((n_clusters, d, l))
    intercepts = np.zeros((n_clusters, d))
    residual_covs = np.zeros((n_clusters, d, d))

    for k in range(n_clusters):
        mass = float(resp[:, k].sum())
        needed = max(min_mass, max(structure.sizes(k)) + 1)
        if mass < needed:
            raise DegenerateClusterError(k, mass, needed)
        w = resp[:, k] / mass
        weights[k] = mass / n

        c = w @ data.Y
        y_centered = data.Y - c
        response_means[k] = c
        response_covs[k] = _spd_block(
            (w * y_centered.T) @ y_centered, ridge_scale,
            context=f"response_covs[{k}]")

        x_mean = w @ data.X
        x_centered = data.X - x_mean
        root = np.sqrt(w)[:, None]
        design = root * y_centered
        target = root * x_centered
        a = np.linalg.lstsq(design, target, rcond=None)[0].T  # (D, L)
        coeffs[k] = a
        intercepts[k] = x_mean - a @ c

        residuals = root * (x_centered - y_centered @ a.T)
        for g in structure.groups[k]:
            idx = np.asarray(g, dtype=int)
            block = residuals[:, idx].T @ residuals[:, idx]
            residual_covs[k][np.ix_(idx, idx)] = _spd_block(
                block, ridge_scale, context=f"residual_covs[{k}] group {g}")

    return InverseParams(weights, response_means, response_covs,
                         coeffs, intercepts, residual_covs, structure)


def fit(data: Dataset, n_clusters: int, structure: BlockStructure,
        config: EmConfig | None = None,
        init_responsibilities: np.ndarray | None = None) -> FitResult:
    """Run EM to convergence for a fixed (cluster count, block structure).

    Alternates M and E steps starting from k-means responsibilities (or the
    provided warm start). Stops when the log-likelihood gain falls below
    ``tol_fraction`` times the total variation of the trace, or at
    ``max_iterations``. A cluster collapsing below the minimum mass ends
    the run with a degenerate outcome instead of raising.
    """
    config = config or EmConfig()
    if structure.n_clusters != n_clusters or structure.dim != data.covariate_dim:
        raise ValueError("block structure does not match the data and K")
    delta = model_dimension(n_clusters, data.response_dim,
                            data.covariate_dim, structure)
    if init_responsibilities is not None:
        resp = np.asarray(init_responsibilities, dtype=float)
        if resp.shape != (data.n, n_clusters):
            raise ValueError("warm-start responsibilities have the wrong shape")
    else:
        resp = initialize(data, n_clusters, config)

    trace: list[float] = []
    converged = False
    iterations = 0
    for iteration in range(1, config.max_iterations + 1):
        iterations = iteration
        try:
            theta = m_step(data, resp, structure,
                           ridge_scale=config.ridge_scale,
                           min_mass=config.min_mass)
        except DegenerateClusterError as exc:
            return FitResult(
                theta=None, responsibilities=None,
                loglik_trace=np.asarray(trace), delta=delta,
                converged=False, iterations=iteration,
                degenerate=DegenerateCluster(iteration, exc.cluster, exc.mass))
        resp, loglik = e_step(data, theta)
        trace.append(loglik)
        if len(trace) >= 2:
            span = max(trace) - min(trace)
            if trace[-1] - trace[-2] <= config.tol_fraction * span:
                converged = True
                break
    return FitResult(theta=theta, responsibilities=resp,
                     loglik_trace=np.asarray(trace), delta=delta,
                     converged=converged, iterations=iterations)


def residual_covariance_full(data: Dataset, theta: InverseParams,
                             responsibilities: np.ndarray, k: int) -> np.ndarray:
    """Unconstrained residual covariance estimate for cluster ``k``.

    Weighted sample covariance of the covariates in the cluster minus the
    regression part ``A Gamma A^T``; symmetrized. The result may be
    indefinite — downstream structure discovery only looks at the absolute
    entries.
    """
    resp = np.asarray(responsibilities, dtype=float)
    w = resp[:, k] / resp[:, k].sum()
    x_mean = w @ data.X
    x_centered = data.X - x_mean
    sample_cov = (w * x_centered.T) @ x_centered
    out = sample_cov - theta.coeffs[k] @ theta.response_covs[k] @ theta.coeffs[k].T
    return 0.5 * (out + out.T)
