"""Exception types shared across the toolkit."""


class KnnFuseError(Exception):
    """Base class for all data and format errors raised by this package."""


class DimMismatch(KnnFuseError):
    """Embedding width, vocabulary size, or vector length disagrees."""


class UnsupportedFormat(KnnFuseError):
    """File magic, version, or layout field is not one we can read."""


class CorruptFile(KnnFuseError):
    """File is truncated or structurally inconsistent."""


class DuplicateToken(KnnFuseError):
    """Vocabulary file contains the same token twice."""


class EmptyVocabulary(KnnFuseError):
    """Vocabulary file contains no tokens."""


class DuplicateUtterance(KnnFuseError):
    """Manifest contains the same utterance id twice."""


class InvalidLogits(KnnFuseError):
    """Logit matrix contains NaN or infinite entries."""


class InvalidPosteriors(KnnFuseError):
    """Posterior rows are negative or do not sum to 1 within tolerance."""


class EmptyRetrieval(KnnFuseError):
    """Retrieval returned no neighbors (empty datastore)."""


class TooManyCentroids(KnnFuseError):
    """Requested more k-means centroids than there are datastore entries."""


class UndefinedRate(KnnFuseError):
    """Error rate is undefined because the pooled reference length is zero."""
