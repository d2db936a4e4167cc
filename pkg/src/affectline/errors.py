"""Shared exception roots.

Subcommands map these onto the documented exit codes: ConfigError -> 2,
DataError -> 3, DivergenceError -> 4.
"""


class AffectlineError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(AffectlineError):
    """Invalid configuration: unknown keys, bad values, mismatched settings."""


class DataError(AffectlineError):
    """Problems with input data: files, corpora, manifests, checkpoints."""


class DivergenceError(AffectlineError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, batch: int, value: float):
        self.epoch = epoch
        self.batch = batch
        self.value = value
        super().__init__(
            f"non-finite training loss ({value!r}) at epoch {epoch}, batch {batch}"
        )
