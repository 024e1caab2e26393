"""Exception types shared across the pipeline.

Plain ``ValueError`` is used for bad call arguments; the classes here cover
failures that callers are expected to branch on (and that the CLI maps to
exit codes).
"""


class PipelineError(Exception):
    """Base class for all pipeline-specific failures."""


class SchemaError(PipelineError):
    """Input dataset file is missing a required column or has the wrong layout."""


class RecordError(PipelineError):
    """A single record is unusable (e.g. undecodable image bytes).

    The message names the offending source_id.
    """


class ValidationError(PipelineError):
    """A config value violates its constraint; message names the field."""


class StateError(PipelineError):
    """Operation called in a state that cannot satisfy it (empty index, no checkpoints, ...)."""


class BackendError(PipelineError):
    """A pluggable backend (embedder, extractor, diffusion model) failed."""


class JobError(PipelineError):
    """A training/generation job failed part-way through.

    `last_completed_step` lets callers resume from the surviving ledger/manifest.
    """

    def __init__(self, message: str, last_completed_step: int = 0):
        super().__init__(message)
        self.last_completed_step = last_completed_step


class NumericalError(PipelineError):
    """A numerical routine produced a non-finite or invalid result."""


class SplitError(PipelineError):
    """A dataset split cannot be satisfied (e.g. class too small to stratify)."""


class ConfigError(PipelineError):
    """CLI/pipeline configuration is invalid (exit code 2)."""


class MissingArtifactError(PipelineError):
    """A prerequisite artifact is absent from the workspace (exit code 3)."""
