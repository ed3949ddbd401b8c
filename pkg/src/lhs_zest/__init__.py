"""Latin hypercube sampling, additive-decomposition variance analysis,
and Z-estimation with design-aware sandwich covariances."""

__version__ = "0.1.0"

from .anova import (
    DecompositionReport,
    MainEffectTable,
    VectorField,
    grand_mean,
    main_effect,
    remainder_covariance,
)
from .design import DesignMatrix, MarginalSpec, generate, transform
from .errors import (
    DegenerateDecomposition,
    DomainError,
    ExcessiveFailures,
    LhsZestError,
    LinkDomainViolation,
    NonFiniteValue,
    NonMonotoneQuantile,
    NonPSDInput,
    NumericalError,
    SingularJacobian,
    ValidationError,
)
from .glm import (
    GlmDataset,
    GlmFamily,
    ModelSpec,
    gaussian_identity_family,
    generate_dataset,
    get_model,
    make_generative_psi,
    make_psi,
    mean_problem,
    poisson_log_family,
    poisson_quantile,
    poisson_quantile_batch,
    score_field,
)
from .harness import (
    ExperimentConfig,
    ExperimentTable,
    OracleResult,
    QQTable,
    asymptotic_oracle,
    expansion_correlation,
    qq_data,
    run_cell,
    run_sweep,
)
from .normal import normal_cdf, normal_quantile
from .rngperm import StreamKey, random_permutation, uniform_stream
from .zsolve import (
    FitReport,
    ZProblem,
    check_jacobian,
    mean_jacobian,
    psi_bar,
    sandwich_iid,
    sandwich_lhs,
    solve,
)

__all__ = [
    "__version__",
    "DecompositionReport",
    "MainEffectTable",
    "VectorField",
    "grand_mean",
    "main_effect",
    "remainder_covariance",
    "DesignMatrix",
    "MarginalSpec",
    "generate",
    "transform",
    "DegenerateDecomposition",
    "DomainError",
    "ExcessiveFailures",
    "LhsZestError",
    "LinkDomainViolation",
    "NonFiniteValue",
    "NonMonotoneQuantile",
    "NonPSDInput",
    "NumericalError",
    "SingularJacobian",
    "ValidationError",
    "GlmDataset",
    "GlmFamily",
    "ModelSpec",
    "gaussian_identity_family",
    "generate_dataset",
    "get_model",
    "make_generative_psi",
    "make_psi",
    "mean_problem",
    "poisson_log_family",
    "poisson_quantile",
    "poisson_quantile_batch",
    "score_field",
    "ExperimentConfig",
    "ExperimentTable",
    "OracleResult",
    "QQTable",
    "asymptotic_oracle",
    "expansion_correlation",
    "qq_data",
    "run_cell",
    "run_sweep",
    "normal_cdf",
    "normal_quantile",
    "StreamKey",
    "random_permutation",
    "uniform_stream",
    "FitReport",
    "ZProblem",
    "check_jacobian",
    "mean_jacobian",
    "psi_bar",
    "sandwich_iid",
    "sandwich_lhs",
    "solve",
]
