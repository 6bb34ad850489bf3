"""Random CDE/RDE reservoirs and signature kernels for time series.

Feature extraction by fixed random controlled/rough differential equations
(R-CDE, RF-CDE, R-RDE) with a trained linear readout, plus the signature
kernel machinery (truncated, Goursat-PDE, RBF-lifted, Monte Carlo) used to
validate their infinite-width limits.
"""

from . import backend
from .algebra import (
    LieElement,
    LyndonBasis,
    TruncatedTensor,
    Word,
    chen_product,
    enumerate_lyndon,
    inner_product,
    log_signature,
    signature,
    tensor_exp,
    tensor_log,
)
from .paths import (
    AugmentationConfig,
    CorruptionConfig,
    LabeledDataset,
    Path,
    corrupt_and_impute,
    generate_fbm,
    hurst_dataset,
    load_dataset,
    preprocess,
    preprocess_pair,
    save_dataset,
)
from .readout import (
    GridSearchConfig,
    Metrics,
    RidgeModel,
    evaluate,
    fit_ridge,
    grid_search,
    load_model,
    predict,
    save_model,
)
from .reservoir import (
    FeatureMatrix,
    ReservoirSpec,
    ReservoirState,
    extract_batch,
    load_features,
    rcde_extract,
    rfcde_extract,
    rrde_extract,
    save_features,
)
from .rff import RFFSpec, lift_path, median_heuristic, rff_map
from .sigkernel import (
    GramMatrix,
    PDEGrid,
    gaussian_lifted_sig_kernel,
    load_gram,
    mc_kernel_estimate,
    rbf_lifted_sig_kernel,
    save_gram,
    sig_kernel_gram,
    sig_kernel_pde,
    sig_kernel_truncated,
)

__version__ = "0.1.0"

__all__ = [
    "backend",
    "Word",
    "TruncatedTensor",
    "LieElement",
    "LyndonBasis",
    "enumerate_lyndon",
    "chen_product",
    "tensor_exp",
    "tensor_log",
    "signature",
    "log_signature",
    "inner_product",
    "Path",
    "LabeledDataset",
    "AugmentationConfig",
    "CorruptionConfig",
    "generate_fbm",
    "hurst_dataset",
    "preprocess",
    "preprocess_pair",
    "corrupt_and_impute",
    "save_dataset",
    "load_dataset",
    "RFFSpec",
    "rff_map",
    "lift_path",
    "median_heuristic",
    "ReservoirSpec",
    "ReservoirState",
    "FeatureMatrix",
    "rcde_extract",
    "rfcde_extract",
    "rrde_extract",
    "extract_batch",
    "save_features",
    "load_features",
    "PDEGrid",
    "GramMatrix",
    "sig_kernel_pde",
    "sig_kernel_truncated",
    "sig_kernel_gram",
    "rbf_lifted_sig_kernel",
    "gaussian_lifted_sig_kernel",
    "mc_kernel_estimate",
    "save_gram",
    "load_gram",
    "RidgeModel",
    "Metrics",
    "GridSearchConfig",
    "fit_ridge",
    "predict",
    "evaluate",
    "grid_search",
    "save_model",
    "load_model",
    "__version__",
]
