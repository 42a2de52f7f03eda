"""Quality functionals over depth estimates and synthetic captures.

No component here is trained; the losses serve as measurable objectives
— oracle checks pin their zeros and their response to perturbations.
All reductions are masked means, so values are resolution-independent,
and inputs are zeroed outside the mask before windowed statistics are
taken, which keeps "equal on the mask" losses exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from .core import DepthMap, DisparityMap, Image, invert, resize_bilinear
from .errors import EmptyMask, InvalidConfig, ShapeMismatch
from .features import gated_intensity, luma
from .gating import GatedSliceStack, rip_eval
from .geometry import build_warp, occlusion_mask, transfer_depth, warp_image
from .scenesim import FrameBundle

# Depth maps are normalized by the working-range cap before entering the
# photometric loss, whose SSIM constants assume unit-range data.
DEPTH_LP_SCALE = 1.0 / 220.0

_SSIM_C1 = 0.01**2
_SSIM_C2 = 0.03**2
_SSIM_WINDOW = 7


@dataclass(frozen=True)
class LossWeights:
    """Scalar weights of the combined objective plus the step decay."""

    c1: float = 1.0
    c2: float = 0.1
    c3: float = 1.0
    gamma: float = 0.9

    def __post_init__(self):
        for name in ("c1", "c2", "c3", "gamma"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0.0:
                raise InvalidConfig(f"{name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class LossParts:
    """The three measured components entering the total."""

    reproj: float
    recon: float
    lidar: float


def _as_data(img) -> np.ndarray:
    if isinstance(img, Image):
        return img.data
    data = np.asarray(img, dtype=np.float64)
    if data.ndim == 2:
        data = data[:, :, None]
    if data.ndim != 3:
        raise ShapeMismatch(f"expected 2-D or 3-D image data, got {data.shape}")
    return data


def _ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-pixel, per-channel SSIM with a 7x7 box window."""
    size = (_SSIM_WINDOW, _SSIM_WINDOW, 1)

    def box(x):
        return uniform_filter(x, size=size, mode="reflect")

    mu_a, mu_b = box(a), box(b)
    var_a = box(a * a) - mu_a * mu_a
    var_b = box(b * b) - mu_b * mu_b
    cov = box(a * b) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + _SSIM_C1) * (2.0 * cov + _SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + _SSIM_C1) * (var_a + var_b + _SSIM_C2)
    return num / den


def photometric_lp(a, b, mask=None) -> float:
    """Masked mean of 0.85*(1-SSIM)/2 + 0.15*|a-b|.

    Inputs are zeroed outside the mask first, so window statistics near
    the mask boundary stay consistent between the two images.
    """
    da, db = _as_data(a), _as_data(b)
    if da.shape != db.shape:
        raise ShapeMismatch(f"image shapes differ: {da.shape} vs {db.shape}")
    if mask is None:
        mask = np.ones(da.shape[:2], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != da.shape[:2]:
        raise ShapeMismatch(f"mask shape {mask.shape} != raster {da.shape[:2]}")
    if not mask.any():
        raise EmptyMask("photometric_lp: no valid pixels")
    da = np.where(mask[:, :, None], da, 0.0)
    db = np.where(mask[:, :, None], db, 0.0)
    per_channel = 0.85 * (1.0 - _ssim_map(da, db)) / 2.0 + 0.15 * np.abs(da - db)
    per_pixel = per_channel.mean(axis=2)
    return float(per_pixel[mask].mean())


_PARTNER = {
    "gated_left": "gated_right",
    "gated_right": "gated_left",
    "rccb_left": "rccb_right",
    "rccb_right": "rccb_left",
}
# The other modality's same-side view anchors the depth-consistency term.
_CROSS_SIDE = {
    "gated_left": "rccb_left",
    "gated_right": "rccb_right",
    "rccb_left": "gated_left",
    "rccb_right": "gated_right",
}


def _view_images(bundle: FrameBundle) -> dict[str, np.ndarray]:
    return {
        "gated_left": gated_intensity(bundle.gated["left"]),
        "gated_right": gated_intensity(bundle.gated["right"]),
        "rccb_left": luma(bundle.rccb_rgb["left"]),
        "rccb_right": luma(bundle.rccb_rgb["right"]),
    }


def _view_camera(bundle: FrameBundle, view: str):
    return bundle.rig.cam_gated if view.startswith("gated") else bundle.rig.cam_rccb


def reprojection_loss(bundle: FrameBundle, depths: dict, poses: dict) -> float:
    """Photometric + geometric consistency across all four views.

    Per view, three terms: the stereo partner's image warped into the
    view, the two other-modality images warped into the view compared
    against each other, and the other modality's same-side depth
    transferred into the view against the view's own depth.  All warps
    use the view's depth map; occluded and out-of-view pixels are
    excluded from every mean.
    """
    images = _view_images(bundle)
    total = 0.0
    for view, img_t in images.items():
        depth_t = depths[view]
        cam_t = _view_camera(bundle, view)
        pose_t = poses[view]

        def warp_from(src_view):
            rel = invert(poses[src_view]) @ pose_t
            warp = build_warp(depth_t, rel, cam_t, _view_camera(bundle, src_view))
            warped, wmask = warp_image(images[src_view], warp)
            occ = occlusion_mask(warp, depth_t, depths[src_view], rel, cam_t)
            return warped[:, :, 0], wmask & ~occ, warp, rel

        partner = _PARTNER[view]
        warped_p, ok_p, _, _ = warp_from(partner)
        total += photometric_lp(img_t, warped_p, ok_p & depth_t.mask)

        cross_l = _CROSS_SIDE[view if view.endswith("left") else _PARTNER[view]]
        cross_r = _PARTNER[cross_l]
        warped_cl, ok_cl, warp_cl, rel_cl = warp_from(cross_l)
        warped_cr, ok_cr, _, _ = warp_from(cross_r)
        ok_cross = ok_cl & ok_cr & depth_t.mask
        total += photometric_lp(warped_cl, warped_cr, ok_cross)

        side = _CROSS_SIDE[view]
        rel_s = invert(poses[side]) @ pose_t
        warp_s = build_warp(depth_t, rel_s, cam_t, _view_camera(bundle, side))
        z_side = transfer_depth(depth_t, depths[side], warp_s, rel_s,
                                _view_camera(bundle, side))
        occ_s = occlusion_mask(warp_s, depth_t, depths[side], rel_s, cam_t)
        ok_z = z_side.mask & ~occ_s & depth_t.mask
        if not ok_z.any():
            raise EmptyMask(f"no overlap for depth consistency at {view}")
        za = np.where(ok_z, z_side.values, 0.0) * DEPTH_LP_SCALE
        zb = np.where(ok_z, depth_t.values, 0.0) * DEPTH_LP_SCALE
        total += photometric_lp(za, zb, ok_z)
    return float(total)


def gated_reconstruction_loss(stack: GatedSliceStack, z: DepthMap, albedo_hat,
                              ambient_hat, mask) -> float:
    """Forward-rendered slices from (z, albedo, ambient) vs the measured
    stack, plus an anchor tying the ambient estimate to the passive
    reference.  Measured slices are dark-corrected before comparison."""
    mask = np.asarray(mask, dtype=bool) & z.mask
    if not mask.any():
        raise EmptyMask("gated_reconstruction_loss: empty coverage mask")
    albedo_hat = np.asarray(albedo_hat, dtype=np.float64)
    ambient_hat = np.asarray(ambient_hat, dtype=np.float64)
    if ambient_hat.ndim == 0:
        ambient_hat = np.full(z.shape, float(ambient_hat))
    z_safe = np.where(mask, z.values, 1.0)
    total = 0.0
    for k, profile in enumerate(stack.profiles):
        model = albedo_hat * rip_eval(profile, z_safe) + ambient_hat
        measured = stack.slices[:, :, k] - stack.dark[k]
        total += photometric_lp(np.where(mask, model, 0.0),
                                np.where(mask, measured, 0.0), mask)
    total += photometric_lp(np.where(mask, ambient_hat, 0.0),
                            np.where(mask, stack.ambient_ref, 0.0), mask)
    return float(total)


def lidar_loss(pred_disparities, gt_disparity: DisparityMap,
               gamma: float = 0.9) -> float:
    """Decayed sum of (2/3)*L1 + (1/3)*L2^2 against sparse ground truth.

    Later predictions weigh more (gamma^(n-i)).  Coarser maps are
    upsampled bilinearly to the ground-truth raster, with values scaled
    by the width ratio so they stay in full-resolution pixel units.
    """
    preds = list(pred_disparities)
    if not preds:
        raise InvalidConfig("need at least one predicted disparity")
    if not 0.0 <= gamma or not np.isfinite(gamma):
        raise InvalidConfig("gamma must be finite and >= 0")
    gt_mask = gt_disparity.mask
    if not gt_mask.any():
        raise EmptyMask("lidar_loss: ground truth has no valid pixels")
    h, w = gt_disparity.shape
    gt_vals = gt_disparity.values
    n = len(preds)
    total = 0.0
    for i, pred in enumerate(preds, start=1):
        if isinstance(pred, DisparityMap):
            vals, pmask = pred.values, pred.mask
        else:
            vals = np.asarray(pred, dtype=np.float64)
            pmask = np.ones(vals.shape, dtype=bool)
        if vals.shape != (h, w):
            scale = w / vals.shape[1]
            vals = resize_bilinear(vals, h, w) * scale
            pmask = resize_bilinear(pmask.astype(np.float64), h, w) > 0.999
        ok = gt_mask & pmask
        if not ok.any():
            raise EmptyMask(f"lidar_loss: prediction {i} shares no valid pixels")
        err = np.abs(gt_vals[ok] - vals[ok])
        step = (2.0 / 3.0) * err.mean() + (1.0 / 3.0) * (err * err).mean()
        total += gamma ** (n - i) * step
    return float(total)


def total_loss(parts: LossParts, weights: LossWeights = LossWeights()) -> float:
    """Weighted combination of the three objective components."""
    return float(weights.c1 * parts.reproj
                 + weights.c2 * parts.recon
                 + weights.c3 * parts.lidar)
