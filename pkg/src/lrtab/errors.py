"""Exception hierarchy for the lrtab engine.

Every error raised by this package derives from LrtabError so callers can
catch engine failures without swallowing programming errors.
"""


class LrtabError(Exception):
    """Base class for all lrtab errors."""


class MalformedRecord(LrtabError):
    """A dataset record violates the canonical instance schema."""


class UnknownFormat(LrtabError):
    """An ingestion format name is not one of the supported adapters."""


class UnknownTokenizer(LrtabError):
    """A tokenizer name is not present in the registry."""


class EndpointError(LrtabError):
    """The model endpoint returned an unusable response."""


class AuthFailure(EndpointError):
    """The endpoint rejected our credentials. Never retried."""


class RateLimited(EndpointError):
    """The endpoint asked us to slow down and retries were exhausted."""


class GatewayTimeout(EndpointError):
    """The endpoint did not answer within the client timeout."""


class MissingSlot(LrtabError):
    """A prompt template required a slot value that was not provided."""


class MalformedFinalAnswer(LrtabError):
    """A final-answer payload could not be coerced to the task's answer type."""


class MalformedCondition(LrtabError):
    """A correction response did not contain a usable condition."""


class CheckpointCorrupt(LrtabError):
    """A training checkpoint is unreadable or inconsistent with its inputs."""


class InterpreterMissing(LrtabError):
    """The configured sandbox interpreter executable does not exist."""


class EmptyIndexForKind(LrtabError):
    """Retrieval was asked for a candidate kind the index has no entries for."""


class DimensionMismatch(LrtabError):
    """Embedding vectors with inconsistent dimensions were mixed."""


class DegenerateLabels(LrtabError):
    """Reranker training data contains only one label class."""


class ScorerUnreachable(LrtabError):
    """The external scoring service could not be reached or answered garbage."""


class MissingGold(LrtabError):
    """Predictions and gold instances do not line up one-to-one."""
