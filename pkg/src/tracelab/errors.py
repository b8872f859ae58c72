"""Exception hierarchy shared across the package."""


class TracelabError(Exception):
    """Base class for all validation and pipeline errors raised by tracelab."""


class CorpusError(TracelabError):
    """Corpus layout, encoding, or link-file validation failure."""


class EmbeddingError(TracelabError):
    """Embedding file does not satisfy the documented vector format."""


class StrategyError(TracelabError):
    """Strategy edge construction received inconsistent inputs."""


class ModelError(TracelabError):
    """Model configuration, shape, or numerical failure."""


class PromptError(TracelabError):
    """Prompt bundle construction failure (unknown pair, bad template)."""
