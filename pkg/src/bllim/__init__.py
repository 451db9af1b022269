"""Locally-linear Gaussian prediction with data-driven block-diagonal
residual covariances.

The package fits a joint Gaussian mixture over (response, covariates)
pairs in the inverse direction, discovers block-diagonal structure in the
residual covariances by thresholding, selects the structure and cluster
count by a slope-heuristic or BIC criterion, and predicts new responses
with the forward conditional expectation.
"""

from .blocks import ThresholdPath, candidate_structures, partition_from_threshold, threshold_matrix, threshold_path
from .em import DegenerateCluster, EmConfig, FitResult, e_step, fit, initialize, m_step, residual_covariance_full
from .errors import BllimError, DataError, DegenerateClusterError, NoModelError, NotSpdError
from .model import (
    BlockCholesky,
    BlockStructure,
    Dataset,
    ForwardParams,
    InverseParams,
    forward_from_inverse,
    joint_gmm_params,
    log_gaussian_density,
    model_dimension,
    predict,
)
from .selection import (
    CandidateRecord,
    PipelineConfig,
    PipelineResult,
    SelectionReport,
    SlopeSelection,
    bic,
    bllim_pipeline,
    conditional_loglik,
    slope_select,
)
from .simulate import (
    CvResult,
    ManifoldSample,
    ManifoldSpec,
    PlanASpec,
    cross_validate,
    factor_covariance,
    generate_manifold,
    generate_plan_a,
    rmse,
    sample_manifold_observations,
    sample_plan_a_params,
    snr,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
