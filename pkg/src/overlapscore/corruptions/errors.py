class CorruptionError(ValueError):
    pass


class UnknownCorruptionError(CorruptionError):
    """Configuration error: the corruption id is not registered."""


class CorruptionParamError(CorruptionError):
    """A parameter lies outside its documented range."""
