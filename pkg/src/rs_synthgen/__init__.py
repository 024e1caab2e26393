"""Synthetic remote-sensing imagery pipeline.

Library + CLI for turning an image-caption dataset into a fine-tuned
generator, a retrieval-grounded prompt bank, a class-labeled synthetic
dataset, and the scores (distribution distance, downstream classification)
that tell you whether the synthetic data is any good.
"""

from .benchdown import (
    ClassifyConfig,
    DataBundle,
    LabeledSet,
    MetricsReport,
    SoftmaxRegressionBackend,
    build_classify_config,
    build_transforms,
    evaluate_classifier,
    load_synth,
    metrics_from_confusion,
    train_classifier,
)
from .classes import DEFAULT_CLASS_COUNTS, LULC_CLASSES
from .errors import (
    BackendError,
    ConfigError,
    JobError,
    MissingArtifactError,
    NumericalError,
    PipelineError,
    RecordError,
    SchemaError,
    SplitError,
    StateError,
    ValidationError,
)
from .fidlab import (
    FeatureStats,
    RandomProjectionExtractor,
    extract_features,
    fit_gaussian,
    frechet_distance,
    sampled_fid,
)
from .genfarm import (
    GenerationPlan,
    SynthRecord,
    plan_generation,
    read_synth_dataset,
    run_generation,
    write_synth_dataset,
)
from .ingest import (
    ChannelStats,
    ImageCaptionRecord,
    LayoutManifest,
    RecordSet,
    augment_dihedral,
    compute_stats,
    export_layout,
    ingest_columnar,
    normalize,
    resize_to,
    split_holdout,
)
from .promptforge import (
    CorpusChunk,
    HashedBowEmbedder,
    PromptSpec,
    QLoraJobSpec,
    VectorIndex,
    assemble_prompt,
    build_corpus,
    build_qlora_spec,
    chunk_corpus,
    index_corpus,
    perplexity,
    retrieve,
    split_corpus,
)
from .trainctl import (
    FinetuneConfig,
    LedgerEntry,
    ReferenceDiffusionBackend,
    TrainLedger,
    build_finetune_config,
    run_finetune,
    select_best_checkpoint,
    toy_denoise_loss,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # classes
    "LULC_CLASSES",
    "DEFAULT_CLASS_COUNTS",
    # errors
    "PipelineError",
    "SchemaError",
    "RecordError",
    "ValidationError",
    "StateError",
    "BackendError",
    "JobError",
    "NumericalError",
    "SplitError",
    "ConfigError",
    "MissingArtifactError",
    # ingest
    "ImageCaptionRecord",
    "RecordSet",
    "ChannelStats",
    "LayoutManifest",
    "ingest_columnar",
    "split_holdout",
    "compute_stats",
    "normalize",
    "resize_to",
    "augment_dihedral",
    "export_layout",
    # trainctl
    "FinetuneConfig",
    "build_finetune_config",
    "TrainLedger",
    "LedgerEntry",
    "ReferenceDiffusionBackend",
    "toy_denoise_loss",
    "run_finetune",
    "select_best_checkpoint",
    # promptforge
    "CorpusChunk",
    "build_corpus",
    "chunk_corpus",
    "split_corpus",
    "HashedBowEmbedder",
    "VectorIndex",
    "index_corpus",
    "retrieve",
    "PromptSpec",
    "assemble_prompt",
    "QLoraJobSpec",
    "build_qlora_spec",
    "perplexity",
    # genfarm
    "GenerationPlan",
    "SynthRecord",
    "plan_generation",
    "run_generation",
    "write_synth_dataset",
    "read_synth_dataset",
    # fidlab
    "FeatureStats",
    "RandomProjectionExtractor",
    "extract_features",
    "fit_gaussian",
    "frechet_distance",
    "sampled_fid",
    # benchdown
    "ClassifyConfig",
    "build_classify_config",
    "LabeledSet",
    "DataBundle",
    "load_synth",
    "build_transforms",
    "SoftmaxRegressionBackend",
    "train_classifier",
    "evaluate_classifier",
    "metrics_from_confusion",
    "MetricsReport",
]
