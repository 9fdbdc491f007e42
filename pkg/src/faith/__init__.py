"""Feature-adaptive interactive thresholding of large 3D volumes.

Train a feature-weighted local-threshold model from seed voxels and apply
it in one streaming pass; includes an HTTP service and CLI for the
interactive loop.
"""

__version__ = "0.1.0"

from .errors import (
    BorderSeedError,
    DegeneratePathError,
    JobCancelled,
    ProjectionError,
    SolverError,
    VolumeFormatError,
)
from .features import (
    DEFAULT_FEATURES,
    FeatureConfig,
    build_feature_matrix,
    compute_feature_batch,
    compute_features,
    structure_tensor_eigs,
)
from .mce import Histogram, TargetVector, build_targets, mce_threshold
from .segmenter import (
    SeedSet,
    SegmentationJob,
    decide_slice,
    global_threshold_volume,
    local_threshold,
    segment,
    train_from_seeds,
)
from .solver import (
    FaithModel,
    Polytope,
    SolverParams,
    composed_prox_fixed_point,
    elastic_net_objective,
    grad_f,
    lipschitz_step,
    project_polytope,
    soft_threshold,
    solve_faith,
)
from .tuning import MU_GRID, CVReport, HyperGrid, grid_search, lambda_max, lambda_path
from .volume import (
    Environment,
    Slab,
    Volume,
    VolumeMeta,
    extract_environment,
    iter_slabs,
    load_volume,
    write_volume,
)

__all__ = [
    "BorderSeedError",
    "CVReport",
    "DEFAULT_FEATURES",
    "DegeneratePathError",
    "Environment",
    "FaithModel",
    "FeatureConfig",
    "Histogram",
    "HyperGrid",
    "JobCancelled",
    "MU_GRID",
    "Polytope",
    "ProjectionError",
    "SeedSet",
    "SegmentationJob",
    "Slab",
    "SolverError",
    "SolverParams",
    "TargetVector",
    "Volume",
    "VolumeFormatError",
    "VolumeMeta",
    "build_feature_matrix",
    "build_targets",
    "composed_prox_fixed_point",
    "compute_feature_batch",
    "compute_features",
    "decide_slice",
    "elastic_net_objective",
    "extract_environment",
    "global_threshold_volume",
    "grad_f",
    "grid_search",
    "iter_slabs",
    "lambda_max",
    "lambda_path",
    "lipschitz_step",
    "load_volume",
    "local_threshold",
    "mce_threshold",
    "project_polytope",
    "segment",
    "soft_threshold",
    "solve_faith",
    "structure_tensor_eigs",
    "train_from_seeds",
    "write_volume",
]
