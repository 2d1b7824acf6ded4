"""
Exception types shared across the toolkit.

Library code raises these; the CLI maps them onto exit codes.
"""

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_VALIDATION = 3
EXIT_INTERNAL = 4


class VolumetricChangeError(Exception):
    """Base class for all toolkit errors."""


class ManifestError(VolumetricChangeError, ValueError):
    """Malformed or unsupported manifest document."""


class RasterFormatError(VolumetricChangeError, ValueError):
    """Bad magic, truncated payload or oversized dimensions in a raster file."""


class DimensionMismatchError(VolumetricChangeError, ValueError):
    """Two rasters (or a raster and a site) disagree on width/height."""


class TilingError(VolumetricChangeError, ValueError):
    """Invalid patch grid parameters or patches that do not fit their grid."""


class ConfigError(VolumetricChangeError, ValueError):
    """Invalid configuration value (environment, file or command line)."""


class EvaluationError(VolumetricChangeError, ValueError):
    """Inputs that cannot be evaluated, e.g. a polygon outside its raster."""


class PlacementError(VolumetricChangeError, RuntimeError):
    """Synthetic event placement gave up after its retry budget."""


class ValidationFailed(VolumetricChangeError):
    """A manifest failed validation; carries the full report."""

    def __init__(self, report):
        self.report = report
        super().__init__(f"{len(report.violations)} validation violation(s)")
