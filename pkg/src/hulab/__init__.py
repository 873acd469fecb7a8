"""hulab: invariant transports of point processes on a periodic torus.

Samplers for source processes, transports that reshape their large-scale
density fluctuations (fair-partition resampling, displacements, local
reorganization dynamics), and second-order statistics (scattering
intensity, number variance) with closed-form spectral predictions.
"""

from hulab.core import (
    KGrid,
    PointSample,
    RngStream,
    SampleMeta,
    TorusBox,
    allowed_wavevectors,
    torus_displacement,
    torus_distance,
)

__version__ = "0.1.0"

__all__ = [
    "TorusBox",
    "PointSample",
    "SampleMeta",
    "KGrid",
    "RngStream",
    "allowed_wavevectors",
    "torus_displacement",
    "torus_distance",
    "__version__",
]
