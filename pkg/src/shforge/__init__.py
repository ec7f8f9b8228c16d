"""Procedural renderer for articulated parametric human bodies.

Produces short image clips together with per-pixel ground truth (depth,
part segmentation, surface normals, optical flow, 2D/3D joints), plus the
split, statistics and evaluation tooling that goes with such a dataset.
"""

__version__ = "0.1.0"

GENERATOR_VERSION = f"shforge/{__version__}"
