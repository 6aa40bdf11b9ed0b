"""Multi-task representation learning over knowledge graphs.

Shared entity embeddings trained jointly on relational triplet
classification and attribute-value regression, plus a zoo of classic
single-task baselines, all in plain numpy with hand-written gradients.
"""

from .data import (
    AttributeNormalizer,
    AttrTriplet,
    DataError,
    DatasetSplits,
    KnowledgeGraph,
    RelTriplet,
    SyntheticConfig,
    Vocab,
    build_knowledge_graph,
    corrupt,
    fit_normalizer,
    gen_synthetic,
    load_manifest,
    load_triplets,
    split_dataset,
    write_manifest,
    write_triplet_files,
)
from .evaluation import (
    EvalReport,
    ProbeConfig,
    accuracy,
    attribute_prediction_report,
    auc,
    baseline_predictors,
    classification_report,
    load_external_embeddings,
    nearest_attributes,
    probe_linear_regression,
    regression_metrics,
    select_threshold,
)
from .models import (
    MODEL_KINDS,
    Model,
    ModelSpec,
    build_model,
    expected_param_count,
)
from .numerics import NumericError, ParamStore, Rng, grad_check
from .training import (
    Checkpoint,
    TrainConfig,
    TrainResult,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
    train_baseline,
    train_mtkgnn,
    train_model,
)

__version__ = "0.1.0"

__all__ = [
    "AttributeNormalizer",
    "AttrTriplet",
    "Checkpoint",
    "DataError",
    "DatasetSplits",
    "EvalReport",
    "KnowledgeGraph",
    "MODEL_KINDS",
    "Model",
    "ModelSpec",
    "NumericError",
    "ParamStore",
    "ProbeConfig",
    "RelTriplet",
    "Rng",
    "SyntheticConfig",
    "TrainConfig",
    "TrainResult",
    "Vocab",
    "accuracy",
    "attribute_prediction_report",
    "auc",
    "baseline_predictors",
    "build_knowledge_graph",
    "build_model",
    "classification_report",
    "corrupt",
    "expected_param_count",
    "fit_normalizer",
    "gen_synthetic",
    "grad_check",
    "load_checkpoint",
    "load_external_embeddings",
    "load_manifest",
    "load_triplets",
    "model_from_checkpoint",
    "nearest_attributes",
    "probe_linear_regression",
    "regression_metrics",
    "save_checkpoint",
    "select_threshold",
    "split_dataset",
    "train_baseline",
    "train_mtkgnn",
    "train_model",
    "write_manifest",
    "write_triplet_files",
]
