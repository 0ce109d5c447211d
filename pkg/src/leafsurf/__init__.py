"""Multi-scale surface reconstruction of leaves from point clouds and micro-CT volumes.

A smooth macro-scale height map over a curved leaf coordinate system carries
a periodic micro-scale implicit patch fitted to a volume scan.  Both scales
are partition-of-unity blends of locally smoothed polyharmonic splines.
"""

from .errors import (ConfigError, DegenerateGeometryError, FormatError, LeafSurfError,
                     OutsideDomainError, ThresholdError)
from .frame import LeafFrame, build_frame, leaf_to_world, world_to_leaf
from .multiscale import MultiScaleField, build_tiling
from .pu import PUField, fit_pu
from .rbf import CUBIC_3D, THIN_PLATE_2D, Kernel, fit_local

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DegenerateGeometryError", "FormatError", "LeafSurfError",
    "OutsideDomainError", "ThresholdError",
    "LeafFrame", "build_frame", "leaf_to_world", "world_to_leaf",
    "MultiScaleField", "build_tiling", "PUField", "fit_pu",
    "CUBIC_3D", "THIN_PLATE_2D", "Kernel", "fit_local",
]
