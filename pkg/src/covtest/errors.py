"""Exception taxonomy shared by all covtest modules.

Every error carries a ``category`` used by the CLI to prefix diagnostics
and pick exit codes: data, config, model, numerical.
"""


class CovtestError(Exception):
    """Base class for all errors raised by this package."""

    category = "internal"


class DataError(CovtestError):
    """Malformed or unusable input data (missing rows, non-finite cells)."""

    category = "data"


class ConfigError(CovtestError):
    """Invalid configuration: bad flags, incompatible dimensions, bad ranges."""

    category = "config"


class ModelError(CovtestError):
    """Model cannot be formed or estimated (rank deficiency, degenerate design)."""

    category = "model"


class NumericalError(CovtestError):
    """Numerical failure: non-convergence, ill-conditioning, solver breakdown."""

    category = "numerical"


class DegenerateFitError(ModelError):
    """Fit has zero residual variance; downstream statistics would divide by 0."""


class DegenerateTestError(ModelError):
    """Test statistic is degenerate (e.g. smoother kernel annihilated by projection)."""


class StudyError(NumericalError):
    """Too many per-replicate failures for a simulation study to be trustworthy."""
