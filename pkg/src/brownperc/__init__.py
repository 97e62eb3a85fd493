"""Continuum percolation of Brownian paths: sampling, clustering, estimation, certificates."""
__version__ = "0.1.0"
