"""Exception types shared across the pipeline."""


class PipelineError(RuntimeError):
    """A training stage failed; the message names the scene or iteration."""
