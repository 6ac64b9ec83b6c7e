"""Diffusion re-ranking with an offline sparsified inverse Laplacian."""

__version__ = "0.1.0"
