"""Exception hierarchy shared across the toolkit."""


class TagSentryError(Exception):
    """Base class for every error raised by tagsentry."""


class ValidationError(TagSentryError):
    """Input data violates a structural invariant."""


class ParseError(ValidationError):
    """A line of an input file could not be decoded."""

    def __init__(self, path, line_no: int, message: str):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{self.path}:{line_no}: {message}")


class TopologyError(ValidationError):
    """A tag id is missing from the topology, or the topology is malformed."""


class FeaturizationError(ValidationError):
    pass


class NeighborError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class NumericError(TagSentryError):
    """EM produced a non-finite quantity."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        super().__init__(message if row is None else f"{message} (row {row})")
