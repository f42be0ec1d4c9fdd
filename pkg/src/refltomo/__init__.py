"""Frequency-domain reflection tomography.

Forward modeling through the discretized Lippmann-Schwinger equation and
contrast reconstruction by TV- and nonnegativity-constrained incremental
frequency proximal quasi-Newton inversion.
"""

__version__ = "0.1.0"

from .scene import (
    AcquisitionGeometry,
    ContrastImage,
    FrequencySchedule,
    Grid,
    cylinder_scene,
    default_acquisition,
    frequency_bands,
    layered_phantom,
    pipes_phantom,
    resample_nearest,
    shepp_logan_phantom,
    square_grid,
)
from .greens import (
    GreenOperators,
    SourceSpec,
    build_all_operators,
    build_green_operators,
    green_kernel_2d,
    hankel_h0_2,
    self_cell_coefficient,
)

__all__ = [
    "AcquisitionGeometry",
    "ContrastImage",
    "FrequencySchedule",
    "Grid",
    "GreenOperators",
    "SourceSpec",
    "build_all_operators",
    "build_green_operators",
    "cylinder_scene",
    "default_acquisition",
    "frequency_bands",
    "green_kernel_2d",
    "hankel_h0_2",
    "layered_phantom",
    "pipes_phantom",
    "resample_nearest",
    "self_cell_coefficient",
    "shepp_logan_phantom",
    "square_grid",
]
