"""Exception types raised across the package."""


class LeafSurfError(Exception):
    """Base class for all package errors."""


class DegenerateGeometryError(LeafSurfError, ValueError):
    """Sample sites or point sets too degenerate for the requested fit."""


class OutsideDomainError(LeafSurfError, ValueError):
    """A query point lies outside the region where a field is defined."""


class ThresholdError(LeafSurfError, ValueError):
    """Histogram does not show two separable intensity peaks."""


class FormatError(LeafSurfError, ValueError):
    """Malformed input file."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class ConfigError(LeafSurfError, ValueError):
    """Invalid pipeline configuration."""
