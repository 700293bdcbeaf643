"""Export-propensity scoring of firms with missingness-aware Bayesian tree ensembles."""

__version__ = "0.1.0"

from .errors import ExportScoreError  # noqa: E402,F401
