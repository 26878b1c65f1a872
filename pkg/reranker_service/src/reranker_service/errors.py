"""Exception hierarchy for the reranker service."""


class RerankerServiceError(Exception):
    """Base class for all reranker service errors."""


class SingleClassLabels(RerankerServiceError):
    """The labels file does not contain both a positive and a negative class."""


class BaseModelUnavailable(RerankerServiceError):
    """The requested base model id is not in the registry."""
