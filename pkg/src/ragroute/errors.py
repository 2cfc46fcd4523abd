"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes, so library code should raise
the most specific class that applies rather than bare ValueError.
"""


class RagRouteError(Exception):
    """Base class for all package errors."""


class ValidationError(RagRouteError):
    """Bad input data, malformed schema, or violated preconditions."""


class SchemaError(ValidationError):
    """A serialized artifact (checkpoint, report, jsonl record) failed validation."""


class DegenerateEmbeddingError(RagRouteError):
    """A zero-norm vector reached a cosine similarity.

    This signals a training pathology (collapsed encoder or token); callers
    must not silently continue with a fabricated score.
    """


class NumericsError(RagRouteError):
    """Non-finite values or a failed numerical check."""
