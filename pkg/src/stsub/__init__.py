"""Self-trained cross-view subspace learning for person re-identification."""

from .data import (
    ExperimentConfig,
    FeatureSet,
    LabeledPartition,
    Projection,
    generate_synthetic_crossview,
    load_feature_set,
    load_projection,
    save_feature_set,
    save_projection,
    split_by_ratio,
)
from .evaluation import cmc, distances, manifold_rerank, run_experiment
from .learner import (
    fit_kernelized,
    fit_semi_supervised_linear,
    fit_supervised_linear,
    objective,
    self_train,
)

__version__ = "0.1.0"
