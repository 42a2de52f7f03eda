"""Alignment features shared by pose refinement and disparity matching.

Photometric comparison across an active NIR stack and a passive visible
camera needs channels that survive the appearance gap between the two
sensors.  We use the classic gradient-augmented stand-in: one collapsed
intensity plane plus its two spatial derivatives, each standardized to
zero mean / unit variance over the raster, so absolute gain and offset
differences between the spectra drop out and only structure is compared.
"""

from __future__ import annotations

import numpy as np

from .core import Image, avgpool2, resize_bilinear
from .errors import ShapeMismatch
from .gating import GatedSliceStack

_STD_FLOOR = 1e-12

# Rec.601 luma weights.
_LUMA = np.array([0.299, 0.587, 0.114])


def luma(rgb: np.ndarray) -> np.ndarray:
    """Collapse an (H, W, 3) linear RGB image to one luma plane."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ShapeMismatch(f"expected (H, W, 3), got {rgb.shape}")
    return rgb @ _LUMA


def gated_intensity(stack: GatedSliceStack) -> np.ndarray:
    """Collapse a gated stack to one plane: mean dark-corrected slice.

    Averaging the slices keeps both the active range response and the
    ambient texture; the dark level is a per-slice constant and carries no
    structure, so it is removed.
    """
    corrected = stack.slices - stack.dark[None, None, :]
    return np.clip(corrected, 0.0, None).mean(axis=2)


def gradient_channels(intensity: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(d/du, d/dv) of a plane: central differences, one-sided at borders."""
    plane = np.asarray(intensity, dtype=np.float64)
    if plane.ndim != 2:
        raise ShapeMismatch(f"expected a 2-D plane, got shape {plane.shape}")
    gv, gu = np.gradient(plane)
    return gu, gv


def standardize(plane: np.ndarray) -> np.ndarray:
    """Zero-mean / unit-variance rescale; a flat plane maps to all zeros."""
    plane = np.asarray(plane, dtype=np.float64)
    mu = plane.mean()
    sd = plane.std()
    if sd < _STD_FLOOR:
        return np.zeros_like(plane)
    return (plane - mu) / sd


def feature_image(intensity: np.ndarray, normalized: bool = True) -> Image:
    """Build the 3-channel alignment feature raster of one intensity plane.

    Channels are [intensity, d/du, d/dv], each independently standardized
    when `normalized` is set (the default; raw channels are only useful for
    debugging).
    """
    plane = np.asarray(intensity, dtype=np.float64)
    if plane.ndim == 3 and plane.shape[2] == 1:
        plane = plane[:, :, 0]
    gu, gv = gradient_channels(plane)
    channels = (plane, gu, gv)
    if normalized:
        channels = tuple(standardize(c) for c in channels)
    return Image(np.stack(channels, axis=-1))


def halve(plane: np.ndarray) -> np.ndarray:
    """Downsample a plane (or multichannel raster) by a factor of two.

    Exact 2x2 averaging when both dimensions are even; bilinear resampling
    to the rounded-up half size otherwise.
    """
    arr = np.asarray(plane, dtype=np.float64)
    h, w = arr.shape[:2]
    if h % 2 == 0 and w % 2 == 0:
        return avgpool2(arr)
    return resize_bilinear(arr, (h + 1) // 2, (w + 1) // 2)


def intensity_pyramid(intensity: np.ndarray, levels: int) -> list[np.ndarray]:
    """`levels` planes from finest (index 0) to coarsest, halving each step."""
    if levels < 1:
        raise ValueError(f"pyramid needs at least one level, got {levels}")
    planes = [np.asarray(intensity, dtype=np.float64)]
    for _ in range(levels - 1):
        planes.append(halve(planes[-1]))
    return planes


def feature_pyramid(intensity: np.ndarray, levels: int) -> list[Image]:
    """Feature rasters per pyramid level, finest first.

    Gradients are taken after downsampling (not downsampled themselves) so
    each level's derivative channels live in that level's pixel units.
    """
    return [feature_image(p) for p in intensity_pyramid(intensity, levels)]
