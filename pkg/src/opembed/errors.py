"""Exception types shared across the toolkit."""


class OpembedError(Exception):
    """Base class for all toolkit errors."""


class PlanFormatError(OpembedError):
    """A plan file failed to parse or violated a plan-tree invariant."""


class SchemaError(OpembedError):
    """A feature schema was inconsistent or incompatible with its input."""


class CoverageError(OpembedError):
    """A task needs ground-truth fields the corpus does not carry."""


class BundleError(OpembedError):
    """A model bundle failed validation (magic, version, or hash chain)."""


class TrainingDivergedError(OpembedError):
    """Training hit a non-finite loss; carries the epoch and batch index."""

    def __init__(self, epoch: int, batch: int):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
