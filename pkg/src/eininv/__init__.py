"""Numerical inversion of affine-in-Ricci curvature operators on periodic grids.

Submodules are imported explicitly (``from eininv import curvature``); the
package root stays free of numpy so the CLI can apply thread settings first.
"""

__version__ = "0.1.0"

__all__ = ["grid", "curvature", "operators", "spectral", "solver", "cli"]
