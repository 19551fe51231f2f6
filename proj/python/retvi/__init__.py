"""Content-aware video retargeting: energy-map deformation with a learned
content feature analyzer.

Frames are numpy arrays of shape (H, W, C) with float values in [0, 1].
Displacement fields and energy maps are (H, W, 2) with the x component in
channel 0.
"""

from ._core import (
    Retargeter,
    bidirectional_error,
    build_deformation,
    deform_and_sample,
    flow_scale,
    frame_difference,
    stability,
)

__all__ = [
    "Retargeter",
    "bidirectional_error",
    "build_deformation",
    "deform_and_sample",
    "flow_scale",
    "frame_difference",
    "stability",
]
