"""Core model objects: parameter containers, Gaussian densities, the
inverse<->forward parameter map, prediction, and free-parameter counting.

The model is a joint Gaussian mixture over (response, covariates) pairs.
Estimation works in the *inverse* direction (covariates regressed on the
low-dimensional response), prediction in the *forward* direction (response
regressed on covariates); the two parameterizations describe the same joint
density and are linked by a closed-form bijection.

All densities are evaluated in the log domain; symmetric positive definite
matrices are handled through Cholesky factors, with failures surfaced as
:class:`~bllim.errors.NotSpdError` rather than silently regularized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.special import logsumexp

from .errors import NotSpdError

_LOG_2PI = float(np.log(2.0 * np.pi))


# ---------------------------------------------------------------------------
# Block structures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BlockStructure:
    """Per-cluster partition of covariate indices into correlated groups.

    ``groups[k]`` is the partition for cluster ``k``: a tuple of groups, each
    group a tuple of 0-based covariate indices. Groups are index sets, not
    contiguous ranges. The constructor normalizes ordering (indices sorted
    within each group, groups sorted by smallest member) so that equal
    partitions compare and hash equal.
    """

    groups: tuple[tuple[tuple[int, ...], ...], ...]
    dim: int

    def __post_init__(self):
        norm = []
        for k, cluster_groups in enumerate(self.groups):
            seen: set[int] = set()
            cleaned = []
            for group in cluster_groups:
                idx = tuple(sorted(int(i) for i in group))
                if not idx:
                    raise ValueError(f"cluster {k}: empty group")
                if seen.intersection(idx):
                    raise ValueError(f"cluster {k}: overlapping groups")
                seen.update(idx)
                cleaned.append(idx)
            if seen != set(range(self.dim)):
                raise ValueError(
                    f"cluster {k}: groups do not partition 0..{self.dim - 1}"
                )
            cleaned.sort(key=lambda g: g[0])
            norm.append(tuple(cleaned))
        object.__setattr__(self, "groups", tuple(norm))

    @classmethod
    def singletons(cls, n_clusters: int, dim: int) -> "BlockStructure":
        """Fully diagonal structure: every variable in its own group."""
        part = tuple((i,) for i in range(dim))
        return cls(tuple(part for _ in range(n_clusters)), dim)

    @classmethod
    def single_block(cls, n_clusters: int, dim: int) -> "BlockStructure":
        """Unstructured case: one full group per cluster."""
        part = (tuple(range(dim)),)
        return cls(tuple(part for _ in range(n_clusters)), dim)

    @property
    def n_clusters(self) -> int:
        return len(self.groups)

    def sizes(self, k: int) -> tuple[int, ...]:
        return tuple(len(g) for g in self.groups[k])

    def mean_group_size(self) -> float:
        """Average group size over all clusters and groups."""
        counts = [len(g) for part in self.groups for g in part]
        return float(np.mean(counts))

    def to_indices_1based(self) -> list[list[list[int]]]:
        return [[[i + 1 for i in g] for g in part] for part in self.groups]

    @classmethod
    def from_indices_1based(cls, lists, dim: int) -> "BlockStructure":
        groups = tuple(
            tuple(tuple(i - 1 for i in g) for g in part) for part in lists
        )
        return cls(groups, dim)


# ---------------------------------------------------------------------------
# Data container
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Dataset:
    """Paired covariate and response matrices.

    ``X`` holds the covariates (n rows, D columns) and ``Y`` the responses
    (n rows, L columns); a 1-D ``Y`` is promoted to a single column. Rows
    must match and all values must be finite.
    """

    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.X, dtype=float)
        y = np.asarray(self.Y, dtype=float)
        if x.ndim != 2:
            raise ValueError("X must be a 2-D array")
        if y.ndim == 1:
            y = y[:, None]
        if y.ndim != 2:
            raise ValueError("Y must be a 1-D or 2-D array")
        if x.shape[0] != y.shape[0]:
            raise ValueError(
                f"X has {x.shape[0]} rows but Y has {y.shape[0]}"
            )
        if not (np.isfinite(x).all() and np.isfinite(y).all()):
            raise ValueError("X and Y must not contain NaN or infinite values")
        object.__setattr__(self, "X", x)
        object.__setattr__(self, "Y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def covariate_dim(self) -> int:
        return self.X.shape[1]

    @property
    def response_dim(self) -> int:
        return self.Y.shape[1]


# ---------------------------------------------------------------------------
# Gaussian density machinery
# ---------------------------------------------------------------------------

class BlockCholesky:
    """Cholesky factors of a block-diagonal SPD matrix, one per group.

    Density evaluation, linear solves and sampling only touch within-group
    entries, so the cost scales with the sum of squared group sizes instead
    of the full matrix dimension squared. A plain dense SPD matrix is the
    single-group special case.
    """

    def __init__(self, cov, groups=None, context: str = ""):
        cov = np.asarray(cov, dtype=float)
        dim = cov.shape[0]
        if cov.shape != (dim, dim):
            raise ValueError("covariance must be square")
        if groups is None:
            groups = (tuple(range(dim)),)
        self.dim = dim
        self.groups = [np.asarray(g, dtype=int) for g in groups]
        self.factors = []
        log_det = 0.0
        for g in self.groups:
            block = cov[np.ix_(g, g)]
            try:
                chol = sla.cholesky(block, lower=True)
            except sla.LinAlgError as exc:
                raise NotSpdError(
                    f"covariance block of size {len(g)} is not positive definite",
                    context=context,
                ) from exc
            self.factors.append(chol)
            log_det += 2.0 * float(np.sum(np.log(np.diag(chol))))
        self.log_det = log_det

    def squared_mahalanobis(self, deviations: np.ndarray) -> np.ndarray:
        """``d_i^T cov^{-1} d_i`` for each row of ``deviations`` (n, dim)."""
        dev = np.atleast_2d(np.asarray(deviations, dtype=float))
        out = np.zeros(dev.shape[0])
        for g, chol in zip(self.groups, self.factors):
            z = sla.solve_triangular(chol, dev[:, g].T, lower=True)
            out += np.einsum("ij,ij->j", z, z)
        return out

    def logpdf(self, deviations: np.ndarray) -> np.ndarray:
        """Log Gaussian density at ``mean + deviations`` rows."""
        quad = self.squared_mahalanobis(deviations)
        return -0.5 * (self.dim * _LOG_2PI + self.log_det + quad)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve ``cov @ out = rhs`` for a vector or matrix right-hand side."""
        rhs = np.asarray(rhs, dtype=float)
        vec = rhs.ndim == 1
        b = rhs[:, None] if vec else rhs
        out = np.zeros_like(b)
        for g, chol in zip(self.groups, self.factors):
            out[g] = sla.cho_solve((chol, True), b[g])
        return out[:, 0] if vec else out

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw ``size`` zero-mean Gaussian vectors with this covariance."""
        out = np.zeros((size, self.dim))
        for g, chol in zip(self.groups, self.factors):
            out[:, g] = rng.standard_normal((size, len(g))) @ chol.T
        return out


def log_gaussian_density(x, mean, cov, context: str = ""):
    """Log density of a multivariate Gaussian.

    Parameters
    ----------
    x : array, shape (p,) or (n, p)
        Evaluation point(s).
    mean : array, shape (p,)
    cov : array, shape (p, p)
        Symmetric positive definite covariance.
    context : str
        Attached to the error when the factorization fails.

    Returns
    -------
    float or ndarray of shape (n,)
    """
    x = np.asarray(x, dtype=float)
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    single = x.ndim <= 1
    points = np.atleast_2d(x)
    chol = BlockCholesky(cov, context=context)
    values = chol.logpdf(points - mean)
    return float(values[0]) if single else values


# ---------------------------------------------------------------------------
# Parameter containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InverseParams:
    """Estimation-direction parameters of the joint mixture.

    Within cluster ``k`` the response is Gaussian with mean
    ``response_means[k]`` and covariance ``response_covs[k]``, and the
    covariates given the response are Gaussian around the affine map
    ``coeffs[k] @ y + intercepts[k]`` with residual covariance
    ``residual_covs[k]``, block-diagonal under ``structure``.
    """

    weights: np.ndarray         # (K,)
    response_means: np.ndarray  # (K, L)
    response_covs: np.ndarray   # (K, L, L)
    coeffs: np.ndarray          # (K, D, L)
    intercepts: np.ndarray      # (K, D)
    residual_covs: np.ndarray   # (K, D, D)
    structure: BlockStructure

    def __post_init__(self):
        for name in ("weights", "response_means", "response_covs",
                     "coeffs", "intercepts", "residual_covs"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        k, l = self.response_means.shape
        d = self.intercepts.shape[1]
        expected = {
            "weights": (k,),
            "response_covs": (k, l, l),
            "coeffs": (k, d, l),
            "intercepts": (k, d),
            "residual_covs": (k, d, d),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, "
                                 f"expected {shape}")
        if self.structure.dim != d or self.structure.n_clusters != k:
            raise ValueError("block structure does not match parameter shapes")

    @property
    def n_clusters(self) -> int:
        return self.weights.shape[0]

    @property
    def response_dim(self) -> int:
        return self.response_means.shape[1]

    @property
    def covariate_dim(self) -> int:
        return self.intercepts.shape[1]

    def validate(self, tol: float = 1e-8) -> None:
        """Check simplex, symmetry, positive definiteness and block zeros."""
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > tol:
            raise ValueError("mixture weights must be positive and sum to 1")
        for k in range(self.n_clusters):
            gam = self.response_covs[k]
            sig = self.residual_covs[k]
            if not np.allclose(gam, gam.T, atol=tol):
                raise ValueError(f"response covariance {k} is not symmetric")
            if not np.allclose(sig, sig.T, atol=tol):
                raise ValueError(f"residual covariance {k} is not symmetric")
            BlockCholesky(gam, context=f"response_covs[{k}]")
            BlockCholesky(sig, self.structure.groups[k],
                          context=f"residual_covs[{k}]")
            mask = np.zeros((self.covariate_dim,) * 2, dtype=bool)
            for g in self.structure.groups[k]:
                mask[np.ix_(g, g)] = True
            if np.any(sig[~mask] != 0.0):
                raise ValueError(
                    f"residual covariance {k} has nonzeros outside its blocks"
                )


@dataclass(frozen=True)
class ForwardParams:
    """Prediction-direction parameters.

    Within cluster ``k`` the covariates are Gaussian with mean
    ``covariate_means[k]`` and covariance ``covariate_covs[k]``; the
    response given the covariates is Gaussian around
    ``coeffs[k] @ x + intercepts[k]`` with covariance ``noise_covs[k]``.
    """

    weights: np.ndarray          # (K,)
    covariate_means: np.ndarray  # (K, D)
    covariate_covs: np.ndarray   # (K, D, D)
    coeffs: np.ndarray           # (K, L, D)
    intercepts: np.ndarray       # (K, L)
    noise_covs: np.ndarray       # (K, L, L)

    def __post_init__(self):
        for name in ("weights", "covariate_means", "covariate_covs",
                     "coeffs", "intercepts", "noise_covs"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

    @property
    def n_clusters(self) -> int:
        return self.weights.shape[0]

    @property
    def response_dim(self) -> int:
        return self.intercepts.shape[1]

    @property
    def covariate_dim(self) -> int:
        return self.covariate_means.shape[1]

    def validate(self, tol: float = 1e-8) -> None:
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > tol:
            raise ValueError("mixture weights must be positive and sum to 1")
        for k in range(self.n_clusters):
            for name in ("covariate_covs", "noise_covs"):
                mat = getattr(self, name)[k]
                if not np.allclose(mat, mat.T, atol=tol):
                    raise ValueError(f"{name}[{k}] is not symmetric")
                BlockCholesky(mat, context=f"{name}[{k}]")


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def forward_from_inverse(theta: InverseParams) -> ForwardParams:
    """Convert estimation-direction parameters to prediction-direction ones.

    The two parameterizations describe the same joint Gaussian per cluster,
    so the conversion is exact Gaussian marginalization/conditioning:
    the covariate marginal has mean ``A c + b`` and covariance
    ``Sigma + A Gamma A^T``; the response given covariates has covariance
    ``(Gamma^{-1} + A^T Sigma^{-1} A)^{-1}`` and the matching affine mean.
    """
    n_clusters = theta.n_clusters
    l, d = theta.response_dim, theta.covariate_dim
    means = np.zeros((n_clusters, d))
    covs = np.zeros((n_clusters, d, d))
    coeffs = np.zeros((n_clusters, l, d))
    intercepts = np.zeros((n_clusters, l))
    noise = np.zeros((n_clusters, l, l))
    for k in range(n_clusters):
        a = theta.coeffs[k]
        b = theta.intercepts[k]
        c = theta.response_means[k]
        gamma = theta.response_covs[k]
        sigma_chol = BlockCholesky(theta.residual_covs[k],
                                   theta.structure.groups[k],
                                   context=f"residual_covs[{k}]")
        gamma_chol = BlockCholesky(gamma, context=f"response_covs[{k}]")

        means[k] = a @ c + b
        covs[k] = theta.residual_covs[k] + a @ gamma @ a.T

        w = sigma_chol.solve(a)                       # Sigma^{-1} A, (D, L)
        precision = gamma_chol.solve(np.eye(l)) + a.T @ w
        try:
            prec_chol = sla.cholesky(precision, lower=True)
        except sla.LinAlgError as exc:
            raise NotSpdError("conditional precision is not positive definite",
                              context=f"cluster {k}") from exc
        noise[k] = sla.cho_solve((prec_chol, True), np.eye(l))
        noise[k] = 0.5 * (noise[k] + noise[k].T)
        coeffs[k] = noise[k] @ w.T
        intercepts[k] = noise[k] @ (gamma_chol.solve(c) - w.T @ b)
    return ForwardParams(theta.weights.copy(), means, covs,
                         coeffs, intercepts, noise)


def joint_gmm_params(theta: InverseParams) -> tuple[np.ndarray, np.ndarray]:
    """Joint Gaussian mean and covariance per cluster, ordered (y, x).

    Composed from the forward parameters: the response block comes first,
    with cross-covariance ``A* Gamma*`` between response and covariates.

    Returns
    -------
    means : ndarray, shape (K, L + D)
    covs : ndarray, shape (K, L + D, L + D)
    """
    star = forward_from_inverse(theta)
    k, l, d = star.n_clusters, star.response_dim, star.covariate_dim
    means = np.zeros((k, l + d))
    covs = np.zeros((k, l + d, l + d))
    for j in range(k):
        a = star.coeffs[j]
        gamma = star.covariate_covs[j]
        means[j, :l] = a @ star.covariate_means[j] + star.intercepts[j]
        means[j, l:] = star.covariate_means[j]
        cross = a @ gamma
        covs[j, :l, :l] = star.noise_covs[j] + cross @ a.T
        covs[j, :l, l:] = cross
        covs[j, l:, :l] = cross.T
        covs[j, l:, l:] = gamma
    return means, covs


def predict(theta_star: ForwardParams, x) -> tuple[np.ndarray, np.ndarray]:
    """Posterior-weighted affine prediction of the response.

    Gating weights are the posterior cluster probabilities of ``x`` under
    the covariate marginals, computed with log-sum-exp normalization; the
    prediction mixes the per-cluster affine maps with those weights.

    Parameters
    ----------
    theta_star : ForwardParams
    x : array, shape (D,) or (n, D)

    Returns
    -------
    prediction : ndarray, shape (L,) or (n, L)
    weights : ndarray, shape (K,) or (n, K)
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    points = np.atleast_2d(x)
    n = points.shape[0]
    n_clusters = theta_star.n_clusters

    log_gate = np.zeros((n, n_clusters))
    experts = np.zeros((n, n_clusters, theta_star.response_dim))
    for k in range(n_clusters):
        chol = BlockCholesky(theta_star.covariate_covs[k],
                             context=f"covariate_covs[{k}]")
        log_gate[:, k] = (np.log(theta_star.weights[k])
                          + chol.logpdf(points - theta_star.covariate_means[k]))
        experts[:, k] = points @ theta_star.coeffs[k].T + theta_star.intercepts[k]
    log_gate -= logsumexp(log_gate, axis=1, keepdims=True)
    weights = np.exp(log_gate)
    prediction = np.einsum("nk,nkl->nl", weights, experts)
    if single:
        return prediction[0], weights[0]
    return prediction, weights


def model_dimension(n_clusters: int, response_dim: int, covariate_dim: int,
                    structure: BlockStructure) -> int:
    """Number of free parameters of a model with the given block structure.

    Counts, per cluster, the response mean and covariance, the affine
    regression of covariates on responses, and the within-block residual
    covariance entries; mixture weights contribute ``K - 1``.
    """
    if structure.n_clusters != n_clusters or structure.dim != covariate_dim:
        raise ValueError("block structure does not match (K, D)")
    l, d = response_dim, covariate_dim
    base = n_clusters * (l + l * (l + 1) // 2 + d * (l + 1) + 1)
    block_terms = sum(
        s * (s + 1) // 2
        for k in range(n_clusters)
        for s in structure.sizes(k)
    )
    return base + block_terms - 1
