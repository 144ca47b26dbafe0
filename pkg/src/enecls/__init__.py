"""Cross-lingual hierarchical multi-label classification of Wikipedia pages.

The library covers the full workflow: taxonomy loading and target encoding,
corpus ingestion, a pluggable document encoder (with a trainable
hashed-subword reference implementation), a hierarchy-aware prediction head
with frequency-weighted loss and exact manual gradients, three-stage
training (multilingual, per-language fine-tuning, cross-lingual voting),
and micro-F evaluation with reporting.  The ``enecls`` command drives it
all from the shell.
"""

__version__ = "0.1.0"

from .corpus import LinkGroup, Page, corpus_stats, load_gold_labels, load_links, read_pages
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    EneClsError,
    NumericError,
    TaxonomyError,
    UsageError,
)
from .evaluation import Metrics, label_histogram, micro_f1
from .hmcn import (
    HeadParams,
    LevelLogits,
    LossWeights,
    ModelParams,
    OptimizerState,
    adam_step,
    backward,
    compute_weights,
    forward,
    frequency_weights,
    load_checkpoint,
    loss,
    save_checkpoint,
)
from .pipeline import (
    PredictionSet,
    TrainConfig,
    finetune,
    gradient_check,
    predict,
    predict_batch,
    train_multilingual,
)
from .taxonomy import (
    EneLabel,
    LevelTargets,
    Taxonomy,
    encode_targets,
    load_taxonomy,
    parse_label_id,
)
from .voting import VoteInput, VoteResult, apply_voting, vote

__all__ = [
    "__version__",
    "CheckpointError",
    "ConfigError",
    "DataError",
    "EneClsError",
    "EneLabel",
    "HeadParams",
    "LevelLogits",
    "LevelTargets",
    "LinkGroup",
    "LossWeights",
    "Metrics",
    "ModelParams",
    "NumericError",
    "OptimizerState",
    "Page",
    "PredictionSet",
    "Taxonomy",
    "TaxonomyError",
    "TrainConfig",
    "UsageError",
    "VoteInput",
    "VoteResult",
    "adam_step",
    "apply_voting",
    "backward",
    "compute_weights",
    "corpus_stats",
    "encode_targets",
    "finetune",
    "forward",
    "frequency_weights",
    "gradient_check",
    "label_histogram",
    "load_checkpoint",
    "load_gold_labels",
    "load_links",
    "load_taxonomy",
    "loss",
    "micro_f1",
    "parse_label_id",
    "predict",
    "predict_batch",
    "read_pages",
    "save_checkpoint",
    "train_multilingual",
    "vote",
]
