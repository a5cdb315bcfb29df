"""Few-shot matching recommender for cold-start items in interaction sequences."""

__version__ = "0.1.0"

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import Hyperparams, RunConfig, load_config
from .data import (
    DatasetSplits,
    Episode,
    InteractionSequence,
    MetaSplit,
    SequencePair,
    SynthConfig,
    Vocabulary,
    augment,
    build_splits,
    load_interactions,
    partition_cold_items,
    prepare_dataset,
    sample_episode,
    synth_generate,
    write_interactions,
)
from .errors import ColdmatchError, ConfigError, DataError, NumericError
from .estimator import ColdStartMatcher
from .metrics import hr_at, mrr, ndcg_at
from .trainer import (
    EvalReport,
    Pipeline,
    TrainResult,
    evaluate,
    meta_train,
    pipeline_from_checkpoint,
)

__all__ = [
    "Checkpoint",
    "ColdStartMatcher",
    "ColdmatchError",
    "ConfigError",
    "DataError",
    "DatasetSplits",
    "Episode",
    "EvalReport",
    "Hyperparams",
    "InteractionSequence",
    "MetaSplit",
    "NumericError",
    "Pipeline",
    "RunConfig",
    "SequencePair",
    "SynthConfig",
    "TrainResult",
    "Vocabulary",
    "__version__",
    "augment",
    "build_splits",
    "evaluate",
    "hr_at",
    "load_checkpoint",
    "load_config",
    "load_interactions",
    "meta_train",
    "mrr",
    "ndcg_at",
    "partition_cold_items",
    "pipeline_from_checkpoint",
    "prepare_dataset",
    "sample_episode",
    "save_checkpoint",
    "synth_generate",
    "write_interactions",
]
