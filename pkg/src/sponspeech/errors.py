"""Exception types shared across the package."""


class SponSpeechError(Exception):
    """Base class for all package-specific errors."""


class ParseError(SponSpeechError):
    """A serialized record violates the corpus schema.

    `field` carries the path of the offending field, e.g. "char_labels[3]".
    """

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class ValidationError(SponSpeechError):
    """A structurally well-formed object violates a domain invariant."""


class ConfigError(SponSpeechError):
    """Invalid or inconsistent configuration."""


class StageError(SponSpeechError):
    """A checkpoint's training-stage tag does not match what an operation requires."""
