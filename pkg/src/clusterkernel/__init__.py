"""Positive-semidefinite similarity for multivariate time series with missing
data, built from an ensemble of MAP-EM Gaussian mixture clusterings."""

__version__ = "0.1.0"

from .dataset import (  # noqa: F401
    Dataset,
    EmpiricalMoments,
    MtsRecord,
    apply_standardization,
    concatenate_attributes,
    empirical_moments,
    inject_missing,
    load_dataset,
    mean_impute,
    pooled_moments,
    resample_length,
    save_dataset,
    standardize,
)
from .ensemble import (  # noqa: F401
    EnsembleSpec,
    KernelMatrix,
    MemberConfig,
    TckModel,
    default_component_cap,
    kernel_distance,
    load_kernel_csv,
    load_model,
    normalize_kernel,
    posterior_for,
    sample_member_configs,
    save_kernel_csv,
    save_model,
    test_kernel,
    train_tck,
)
from .errors import ClusterKernelError, ConfigError, DataError, NumericError  # noqa: F401
from .gmm import (  # noqa: F401
    GmmHyperParams,
    GmmParams,
    MeanPrior,
    build_prior,
    e_step,
    fit_map_em,
    m_step,
    map_objective,
    masked_log_component,
)
from .tasks import (  # noqa: F401
    ClusteringResult,
    Embedding,
    adjusted_rand_index,
    clustering_accuracy,
    knn_classify,
    kpca,
    mean_impute_baseline,
    spectral_cluster,
)
from .var1 import Var1Params, generate_var1, make_var1_benchmark  # noqa: F401
