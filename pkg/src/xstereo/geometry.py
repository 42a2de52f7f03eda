"""Stereo geometry: disparity/depth conversion and backward warping.

All warps here are target-driven (backward): for every pixel of the target
raster we compute where it lands in the source raster and gather from
there, so the warped result is defined on the target grid with no holes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    CameraModel,
    DepthMap,
    DisparityMap,
    Image,
    RigidTransform,
    backproject,
    bilinear_sample,
    invert,
    pixel_grid,
    project,
)
from .errors import ShapeMismatch

DISPARITY_EPS = 1e-3
"""Disparities below this (px) are treated as unresolvable (depth invalid)."""

OCCLUSION_TOL = 0.3
"""Default source/target depth disagreement (m) that flags occlusion."""


def disparity_to_depth(disp: DisparityMap, baseline: float, fx: float) -> DepthMap:
    """z = baseline * fx / d; disparities under DISPARITY_EPS become invalid."""
    if baseline <= 0.0 or fx <= 0.0:
        raise ValueError("baseline and focal length must be positive")
    valid = disp.mask & (disp.values >= DISPARITY_EPS)
    values = np.where(valid, baseline * fx / np.where(valid, disp.values, 1.0), np.nan)
    return DepthMap(values, valid)


def depth_to_disparity(depth: DepthMap, baseline: float, fx: float) -> DisparityMap:
    """d = baseline * fx / z on valid pixels."""
    if baseline <= 0.0 or fx <= 0.0:
        raise ValueError("baseline and focal length must be positive")
    values = np.where(depth.mask, baseline * fx / np.where(depth.mask, depth.values, 1.0), 0.0)
    return DisparityMap(values, depth.mask.copy())


@dataclass(frozen=True)
class WarpField:
    """Per-target-pixel source coordinates.

    uv: (H, W, 2) coordinates into the source raster; valid: target pixels
    whose depth was valid, whose transformed point lies in front of the
    source camera, and whose landing point is inside the source raster.
    """

    uv: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        uv = np.ascontiguousarray(np.asarray(self.uv, dtype=np.float64))
        valid = np.ascontiguousarray(np.asarray(self.valid, dtype=bool))
        if uv.ndim != 3 or uv.shape[2] != 2:
            raise ShapeMismatch(f"uv must be (H, W, 2), got {uv.shape}")
        if valid.shape != uv.shape[:2]:
            raise ShapeMismatch(f"valid shape {valid.shape} != uv raster {uv.shape[:2]}")
        object.__setattr__(self, "uv", uv)
        object.__setattr__(self, "valid", valid)


def build_warp(
    depth_target: DepthMap,
    x_src_from_target: RigidTransform,
    cam_target: CameraModel,
    cam_src: CameraModel,
) -> WarpField:
    """Map every target pixel through its depth into the source raster.

    Per target pixel: backproject with cam_target at the target depth,
    transform into the source frame, project with cam_src.
    """
    h, w = depth_target.shape
    if (cam_target.height, cam_target.width) != (h, w):
        raise ShapeMismatch(
            f"target camera raster {cam_target.height}x{cam_target.width} != depth {h}x{w}"
        )
    grid = pixel_grid(w, h)
    z = np.where(depth_target.mask, depth_target.values, 1.0)
    pts_t = backproject(cam_target, grid, z)
    pts_s = x_src_from_target.apply(pts_t)
    in_front = pts_s[..., 2] > 0.0
    uv = project(cam_src, pts_s, strict=False)
    uv = np.where(np.isfinite(uv), uv, -1.0)
    inside = (
        (uv[..., 0] >= 0.0)
        & (uv[..., 0] <= cam_src.width - 1.0)
        & (uv[..., 1] >= 0.0)
        & (uv[..., 1] <= cam_src.height - 1.0)
    )
    valid = depth_target.mask & in_front & inside
    return WarpField(uv, valid)


def warp_image(img: Image | np.ndarray, warp: WarpField) -> tuple[np.ndarray, np.ndarray]:
    """Gather source-image content onto the target grid.

    Returns (data, mask): data has the target raster shape with the source
    channel count and is zero outside the mask.
    """
    values, inb = bilinear_sample(img, warp.uv)
    mask = warp.valid & inb
    return np.where(mask[..., None], values, 0.0), mask


def occlusion_mask(
    warp: WarpField,
    depth_target: DepthMap,
    depth_src: DepthMap,
    x_src_from_target: RigidTransform,
    cam_target: CameraModel,
    tol: float = OCCLUSION_TOL,
) -> np.ndarray:
    """Flag target pixels whose landing point sees a different surface.

    For each valid warp pixel, the target depth is transformed into the
    source frame and compared against the source depth sampled at the
    landing coordinates; disagreement beyond tol marks occlusion.  Pixels
    landing on invalid source depth are also flagged.
    """
    h, w = depth_target.shape
    grid = pixel_grid(w, h)
    z = np.where(depth_target.mask, depth_target.values, 1.0)
    pts_s = x_src_from_target.apply(backproject(cam_target, grid, z))
    expected = pts_s[..., 2]

    src_vals = np.where(depth_src.mask, depth_src.values, 0.0)
    sampled, _ = bilinear_sample(src_vals[:, :, None], warp.uv)
    sampled_mask, _ = bilinear_sample(depth_src.mask.astype(np.float64)[:, :, None], warp.uv)
    clean = sampled_mask[..., 0] > 0.999  # all four neighbors valid

    occluded = np.zeros((h, w), dtype=bool)
    occluded[warp.valid & ~clean] = True
    disagree = np.abs(sampled[..., 0] - expected) > tol
    occluded[warp.valid & clean & disagree] = True
    return occluded


def transfer_depth(
    depth_target: DepthMap,
    depth_src: DepthMap,
    warp: WarpField,
    x_src_from_target: RigidTransform,
    cam_src: CameraModel,
) -> DepthMap:
    """Express the source camera's depth estimate on the target grid.

    Correspondence comes from the target depth (through `warp`); the source
    depth sampled at the landing point is lifted to 3D in the source frame
    and mapped back, and its z in the target frame is returned.  Useful for
    cross-view depth-consistency losses.
    """
    src_vals = np.where(depth_src.mask, depth_src.values, 0.0)
    sampled, _ = bilinear_sample(src_vals[:, :, None], warp.uv)
    sampled_mask, _ = bilinear_sample(depth_src.mask.astype(np.float64)[:, :, None], warp.uv)
    clean = sampled_mask[..., 0] > 0.999
    z_src = sampled[..., 0]
    valid = warp.valid & clean & (z_src > 0.0)

    pts_src = backproject(cam_src, warp.uv, np.where(valid, z_src, 1.0))
    pts_t = invert(x_src_from_target).apply(pts_src)
    z_t = pts_t[..., 2]
    valid = valid & (z_t > 0.0)
    return DepthMap(np.where(valid, z_t, np.nan), valid)
