"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4.
"""


class ColdmatchError(Exception):
    """Base class for all package errors."""


class ConfigError(ColdmatchError):
    """Invalid configuration, unusable paths, or bad command usage."""


class DataError(ColdmatchError):
    """Problems with input data or derived datasets."""


class ParseError(DataError):
    """Malformed input file; message carries the offending line number."""


class EmptyDatasetError(ConfigError):
    """Input yielded no usable sequences.

    Subclasses ConfigError (not DataError) so an empty input file exits
    with code 2, matching the documented CLI behaviour.
    """


class PartitionError(DataError):
    """Cold-item partitioning is impossible (too few distinct targets)."""


class SplitSizeError(DataError):
    """A train/valid/test split would receive zero items."""


class SamplingError(DataError):
    """Episode sampling cannot satisfy the requested N-way K-shot shape."""


class VocabularyError(DataError):
    """An item id is not part of the known vocabulary."""


class CheckpointError(DataError):
    """Checkpoint file is corrupt or has an incompatible format version."""


class NumericError(ColdmatchError):
    """Numeric failure: non-finite values, degenerate inputs, bad shapes."""


class ShapeError(NumericError):
    """Operand dimensions do not line up."""


class DegenerateVectorError(NumericError):
    """A vector that must have nonzero norm is all zeros."""
