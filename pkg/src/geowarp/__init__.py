"""Warped Riemannian metric learning and generation on data manifolds."""

__version__ = "0.1.0"
