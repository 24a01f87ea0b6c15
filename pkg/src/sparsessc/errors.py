"""Exception types shared by readers and the command line."""


class FormatError(ValueError):
    """A file does not follow its binary layout."""


class DataError(ValueError):
    """A file is well-formed but holds invalid values."""


class MappingError(DataError):
    """Raw class IDs without an entry in the class map."""


class SpecError(ValueError):
    """An invalid scene or configuration description."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


class ConfigError(ValueError):
    """Inconsistent network or training configuration."""
