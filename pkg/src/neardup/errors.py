"""Exception types shared across the package."""


class NearDupError(Exception):
    """Base class for all package errors."""


class DimensionError(NearDupError):
    """Vector or bit-width mismatch."""


class ConfigMismatchError(NearDupError):
    """Two artifacts were built with incompatible configurations."""


class EncodingError(NearDupError):
    """Invalid input to an encoder, or a corrupt encoded payload."""


class IndexBuildError(NearDupError):
    """Inverted index construction failed (e.g. duplicate image id)."""


class DataError(NearDupError):
    """Referenced ids cannot be resolved, or input rows are malformed."""


class TrainingError(NearDupError):
    """Classifier training was asked to run on unusable data."""


class ModelError(NearDupError):
    """Model structure is inconsistent with its input."""


class MetricError(NearDupError):
    """A metric is undefined for the given inputs (e.g. one class only)."""


class SamplingError(NearDupError):
    """Label sampling cannot satisfy the request."""


class SelectionError(NearDupError):
    """Bit selection over an empty or unusable sample."""


class StoreError(NearDupError):
    """Cluster store is inconsistent with its companion artifacts."""


class FormatError(NearDupError):
    """A serialized file does not parse under its declared format."""
