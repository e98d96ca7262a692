"""Exception hierarchy shared across the package."""


class MeshGcnError(Exception):
    """Base class for all package errors."""


class StructuralInputError(MeshGcnError):
    """A matrix or graph violates a structural precondition."""


class MeshParseError(MeshGcnError):
    """A mesh file could not be parsed."""

    def __init__(self, path, line_no, message):
        self.path = path
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


class DataError(MeshGcnError):
    """Dataset, manifest, or dimension mismatch problems."""


class ConfigError(MeshGcnError):
    """Invalid configuration value or unknown key."""


class CheckpointError(MeshGcnError):
    """Corrupt, truncated, or incompatible checkpoint file."""


class NumericError(MeshGcnError):
    """Non-finite values encountered where finite ones are required."""
