"""Cross-spectral stereo depth toolkit.

Simulates a rig of two gated NIR cameras and two RCCB visible cameras over
synthetic scenes, decodes metric depth from gated slices, registers and
fuses features across the two spectra, estimates disparity by iterative
correlation matching, and evaluates against exact ground truth.
"""

__version__ = "0.1.0"

from .core import (
    CameraModel,
    DepthMap,
    DisparityMap,
    Image,
    RigidTransform,
    backproject,
    bilinear_sample,
    compose,
    exp_twist,
    invert,
    log_twist,
    project,
)

__all__ = [
    "CameraModel",
    "DepthMap",
    "DisparityMap",
    "Image",
    "RigidTransform",
    "backproject",
    "bilinear_sample",
    "compose",
    "exp_twist",
    "invert",
    "log_twist",
    "project",
    "__version__",
]
