"""Surrogate models for mesh-based simulations with geometric variability.

Meshes are morphed onto a reference shape, their fields and coordinates
are interpolated onto a common mesh, compressed with PCA, and regressed
with Gaussian processes.
"""

__version__ = "0.1.0"
