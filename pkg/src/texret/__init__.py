"""Color texture image retrieval with shearlet-domain copula signatures."""

__version__ = "0.1.0"
