"""Exception hierarchy shared by the library and the CLI exit-code mapping."""


class LandProspectError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class ConfigError(LandProspectError, ValueError):
    """Invalid configuration, hyperparameter or specification object."""

    exit_code = 2


class DataError(LandProspectError, ValueError):
    """Raster content or alignment problem."""

    exit_code = 3


class GridParseError(DataError):
    """Malformed grid file; carries the offending row/column when known."""

    def __init__(self, message, row=None, col=None, path=None):
        where = []
        if path is not None:
            where.append(str(path))
        if row is not None:
            where.append(f"row {row}")
        if col is not None:
            where.append(f"col {col}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.row = row
        self.col = col
        self.path = path


class AlignmentError(DataError):
    """Layers do not share rows, cols and cell size."""

    def __init__(self, layer, dimension, expected, found):
        super().__init__(
            f"layer {layer!r} misaligned on {dimension}: expected {expected}, found {found}"
        )
        self.layer = layer
        self.dimension = dimension


class EmptySelectionError(DataError):
    """A pixel selection that must be non-empty came out empty."""


class ConvergenceError(LandProspectError, RuntimeError):
    """An iterative fit failed to converge or diverged."""

    exit_code = 4

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class SeparationError(ConvergenceError):
    """Unpenalized likelihood is unbounded (perfectly separable data)."""
