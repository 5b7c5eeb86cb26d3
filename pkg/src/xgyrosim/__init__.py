"""Phase-dependent tensor layouts, simulated collectives and shared-cmat ensembles."""

__version__ = "0.1.0"
