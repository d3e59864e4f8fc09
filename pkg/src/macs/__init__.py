"""Model-assisted cohort selection with bias analysis."""

__version__ = "0.1.0"
