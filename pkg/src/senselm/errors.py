"""Exception types shared across the package."""


class SenseLMError(Exception):
    """Base class for package-specific failures."""


class DimensionError(SenseLMError, ValueError):
    """Array shapes are incompatible for the requested operation."""


class NumericError(SenseLMError, ValueError):
    """Non-finite values where finite ones are required."""


class ConfigError(SenseLMError, ValueError):
    """Inconsistent or unsupported configuration."""


class PoolingError(SenseLMError, ValueError):
    """Requested more pooled outputs than available inputs."""


class LabelError(SenseLMError, ValueError):
    """Class label outside the valid range."""


class VocabError(SenseLMError, ValueError):
    """Token index or string not present in the vocabulary."""


class TruncationError(SenseLMError, ValueError):
    """Sequence exceeds the decoder's maximum length."""


class MetricError(SenseLMError, ValueError):
    """Malformed inputs to a metric."""


class SplitError(SenseLMError, ValueError):
    """Benchmark split would be empty or non-partitioning."""


class ManifestError(SenseLMError, ValueError):
    """Manifest entry violates its dataset spec."""


class CurationError(SenseLMError, ValueError):
    """Missing or malformed curation source for a sequence."""


class CheckpointError(SenseLMError, ValueError):
    """Checkpoint container is malformed or incompatible."""
