"""Exception taxonomy shared by the services and the CLI.

Numerical non-convergence is reported through ``Status`` values, never raised.
"""


class FractalLabError(Exception):
    """Base class for all library errors"""


class InputError(FractalLabError, ValueError):
    """Malformed argument: bad digit, degenerate region, out-of-range parameter"""


class ResourceLimitError(FractalLabError):
    """Requested construction exceeds the configured memory budget"""


class ResolutionError(FractalLabError):
    """Point lies closer to E than the cover resolution"""


class CoverageError(FractalLabError):
    """Point is not covered by any Whitney ball"""


class EmptyAverageError(FractalLabError):
    """No boundary sample falls inside an averaging ball"""


class PreconditionError(FractalLabError, ValueError):
    """Operation precondition violated (e.g. finite-difference step too large)"""


class ConfigurationError(FractalLabError, ValueError):
    """Experiment configuration failed to parse or validate"""
