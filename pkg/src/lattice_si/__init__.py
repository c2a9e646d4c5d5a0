"""Nested-lattice coding with spatial filters for side-information channels."""

__version__ = "0.1.0"

from .lattices import (
    LatticeBasis,
    LatticeError,
    VoronoiStats,
    mod_lattice,
    nearest_point,
    sample_dither,
    voronoi_stats,
)

__all__ = [
    "__version__",
    "LatticeBasis",
    "LatticeError",
    "VoronoiStats",
    "mod_lattice",
    "nearest_point",
    "sample_dither",
    "voronoi_stats",
]
