"""Cross-spectral feature fusion and correlation-based disparity estimation.

The estimator runs a coarse-to-fine loop over feature pyramids.  At each
level it scores candidate disparities with a local correlation volume,
alternating between a 1-D sweep along the epipolar axis and a cheaper 2-D
neighborhood probe, takes the winner per pixel, and sharpens it with a
parabolic sub-pixel fit.  In fused mode the first iteration of a level
matches the target modality alone; every later iteration warps the other
modality into the target frame with the current depth and a refined
cross-camera pose, blends the two feature images with attention weights,
and correlates the blend.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve, gaussian_filter, median_filter, uniform_filter

from .core import (
    CameraModel,
    DisparityMap,
    Image,
    RigidTransform,
    bilinear_sample,
    compose,
    exp_twist,
    invert,
    resize_bilinear,
)
from .errors import Diverged, InsufficientValidPixels, InvalidConfig, ShapeMismatch
from .features import feature_image, gated_intensity, intensity_pyramid, luma
from .geometry import build_warp, disparity_to_depth, warp_image
from .poserefine import PoseRefineConfig, refine_pose
from .scenesim import FrameBundle

MODES = ("gated-only", "rccb-only", "fused")

# Logistic arguments saturate to exactly 0.0/1.0 in float64 beyond ~|37|;
# clamping keeps attention outputs strictly inside (0, 1).
_LOGIT_CLAMP = 36.0

# A parabola fit needs genuine curvature; flatter vertices keep the integer
# winner.
_CURVATURE_FLOOR = 1e-12


@dataclass(frozen=True)
class AttentionFn:
    """Deterministic per-channel gate in (0, 1).

    Each channel c is scored by an affine map over its local 3x3 mean and
    its global mean, then squashed:
        w_c(x) = sigmoid(gain_c * (local3x3(F_c)(x) + mean(F_c)) + bias_c)
    """

    gains: tuple[float, ...]
    biases: tuple[float, ...]

    def __post_init__(self):
        gains = tuple(float(g) for g in self.gains)
        biases = tuple(float(b) for b in self.biases)
        if len(gains) != len(biases) or not gains:
            raise InvalidConfig("gains and biases must be non-empty and equal length")
        if not all(math.isfinite(v) for v in gains + biases):
            raise InvalidConfig("attention parameters must be finite")
        object.__setattr__(self, "gains", gains)
        object.__setattr__(self, "biases", biases)

    @property
    def channels(self) -> int:
        return len(self.gains)

    def __call__(self, feat: Image) -> np.ndarray:
        if feat.channels != self.channels:
            raise ShapeMismatch(
                f"attention expects {self.channels} channels, got {feat.channels}"
            )
        data = feat.data
        local = uniform_filter(data, size=(3, 3, 1), mode="nearest")
        global_mean = data.mean(axis=(0, 1))
        gains = np.asarray(self.gains)
        biases = np.asarray(self.biases)
        logit = gains * (local + global_mean) + biases
        logit = np.clip(logit, -_LOGIT_CLAMP, _LOGIT_CLAMP)
        return 1.0 / (1.0 + np.exp(-logit))


def uniform_attention(weight: float = 0.5, channels: int = 3):
    """Attention that ignores the image and returns `weight` everywhere."""
    if not 0.0 < weight < 1.0:
        raise InvalidConfig("uniform attention weight must lie in (0, 1)")
    bias = math.log(weight / (1.0 - weight))
    return AttentionFn(gains=(0.0,) * channels, biases=(bias,) * channels)


@dataclass(frozen=True)
class CorrVolume:
    """Per-pixel correlation scores against a table of integer offsets."""

    values: np.ndarray                      # (H, W, K)
    offsets: tuple[tuple[int, int], ...]    # K entries of (f, g)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        offsets = tuple((int(f), int(g)) for f, g in self.offsets)
        if values.ndim != 3 or values.shape[2] != len(offsets):
            raise ShapeMismatch(
                f"need (H, W, {len(offsets)}) values, got {values.shape}"
            )
        if not np.isfinite(values).all():
            raise InvalidConfig("correlation values must be finite")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "offsets", offsets)

    @property
    def num_offsets(self) -> int:
        return len(self.offsets)


def fuse_features(f_g: Image, f_c_aligned: Image, a_u, a_m) -> Image:
    """Attention-weighted blend of two aligned feature images.

    Each input is first scaled by its own unary weight; a mixing weight
    computed from their normalized sum then interpolates between the two
    weighted images per pixel and channel.
    """
    if f_g.data.shape != f_c_aligned.data.shape:
        raise ShapeMismatch(
            f"feature shapes differ: {f_g.data.shape} vs {f_c_aligned.data.shape}"
        )
    w_g = np.broadcast_to(a_u(f_g), f_g.data.shape)
    w_c = np.broadcast_to(a_u(f_c_aligned), f_c_aligned.data.shape)
    weighted_g = f_g.data * w_g
    weighted_c = f_c_aligned.data * w_c
    blended = Image((weighted_g + weighted_c) / (w_g + w_c))
    mix = np.broadcast_to(a_m(blended), weighted_g.shape)
    return Image(weighted_g * mix + weighted_c * (1.0 - mix))


def correlation(f_l: Image, f_r: Image, offsets) -> CorrVolume:
    """Channel-mean inner product of f_l against integer-shifted f_r.

    Out-of-bounds samples of the shifted image contribute zero.
    """
    if f_l.channels != f_r.channels:
        raise ShapeMismatch(
            f"channel counts differ: {f_l.channels} vs {f_r.channels}"
        )
    if f_l.data.shape[:2] != f_r.data.shape[:2]:
        raise ShapeMismatch(
            f"raster sizes differ: {f_l.data.shape[:2]} vs {f_r.data.shape[:2]}"
        )
    offs = tuple((int(f), int(g)) for f, g in offsets)
    h, w = f_l.data.shape[:2]
    values = np.zeros((h, w, len(offs)))
    for k, (f, g) in enumerate(offs):
        x0, x1 = max(0, -f), min(w, w - f)
        y0, y1 = max(0, -g), min(h, h - g)
        if x0 >= x1 or y0 >= y1:
            continue
        left = f_l.data[y0:y1, x0:x1]
        right = f_r.data[y0 + g:y1 + g, x0 + f:x1 + f]
        values[y0:y1, x0:x1, k] = np.einsum(
            "hwc,hwc->hw", left, right, optimize=False
        ) / f_l.channels
    return CorrVolume(values=values, offsets=offs)


def search_offsets(iteration: int, radius: int) -> tuple[tuple[int, int], ...]:
    """Offset table for one refinement iteration.

    Odd iterations sweep the epipolar axis at full radius; even iterations
    probe a square neighborhood at roughly half radius.  (0, 0) is always a
    member, so the incumbent disparity can defend itself.
    """
    if iteration < 1:
        raise InvalidConfig("iteration indices start at 1")
    if radius < 1:
        raise InvalidConfig("search radius must be at least 1 px")
    if iteration % 2 == 1:
        return tuple((f, 0) for f in range(-radius, radius + 1))
    half = math.ceil(radius / 2)
    return tuple(
        (f, g)
        for g in range(-half, half + 1)
        for f in range(-half, half + 1)
    )


@dataclass(frozen=True)
class DisparityResult:
    """Disparity per requested view plus the per-level left-view maps."""

    mode: str
    disparity: dict[str, DisparityMap]
    intermediates: tuple[np.ndarray, ...]   # coarsest..finest left-view maps
    camera: CameraModel                     # target-grid intrinsics (finest)
    baseline: float
    pose_correction: RigidTransform | None = None


def _resampled_camera(cam: CameraModel, height: int, width: int) -> CameraModel:
    """Intrinsics for the same FOV on an (height, width) raster."""
    ru = width / cam.width
    rv = height / cam.height
    return CameraModel(
        fx=cam.fx * ru,
        fy=cam.fy * rv,
        cx=(cam.cx + 0.5) * ru - 0.5,
        cy=(cam.cy + 0.5) * rv - 0.5,
        width=width,
        height=height,
    )


def _box(field: np.ndarray, window: int) -> np.ndarray:
    if window <= 1:
        return field
    return uniform_filter(field, size=window, mode="nearest")


def _score_candidates(
    f_t: Image, f_o: Image, disparity: np.ndarray, offsets, sign: float,
    agg_window: int,
) -> np.ndarray:
    """Windowed normalized correlation of target features against the other
    view at per-pixel fractional positions u + sign*(d + f), v + g.

    Normalizing by both windows' feature energy makes the score rank match
    quality rather than texture energy; without it the argmax drifts toward
    whatever neighborhood happens to be loud."""
    h, w = disparity.shape
    u, v = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    scores = np.empty((h, w, len(offsets)))
    channels = f_t.channels
    energy_t = _box(
        np.einsum("hwc,hwc->hw", f_t.data, f_t.data, optimize=False) / channels,
        agg_window,
    )
    for k, (f, g) in enumerate(offsets):
        uv = np.stack([u + sign * (disparity + f), v + float(g)], axis=-1)
        sampled, _ = bilinear_sample(f_o, uv)
        num = _box(
            np.einsum("hwc,hwc->hw", f_t.data, sampled, optimize=False) / channels,
            agg_window,
        )
        energy_o = _box(
            np.einsum("hwc,hwc->hw", sampled, sampled, optimize=False) / channels,
            agg_window,
        )
        scores[:, :, k] = num / np.sqrt(energy_t * energy_o + 1e-12)
    return scores


def _wta_refine(scores: np.ndarray, offsets, disparity: np.ndarray, max_disp: float) -> np.ndarray:
    """Winner-take-all over the offset axis plus parabolic sub-pixel fit
    along the epipolar direction."""
    index_of = {off: k for k, off in enumerate(offsets)}
    k_count = len(offsets)
    minus = np.full(k_count, -1, dtype=np.int64)
    plus = np.full(k_count, -1, dtype=np.int64)
    f_of = np.empty(k_count)
    for k, (f, g) in enumerate(offsets):
        f_of[k] = f
        minus[k] = index_of.get((f - 1, g), -1)
        plus[k] = index_of.get((f + 1, g), -1)

    best = np.argmax(scores, axis=2)
    c0 = np.take_along_axis(scores, best[:, :, None], axis=2)[:, :, 0]
    km = minus[best]
    kp = plus[best]
    has_nb = (km >= 0) & (kp >= 0)
    cm = np.take_along_axis(scores, np.where(km >= 0, km, 0)[:, :, None], axis=2)[:, :, 0]
    cp = np.take_along_axis(scores, np.where(kp >= 0, kp, 0)[:, :, None], axis=2)[:, :, 0]
    denom = cm - 2.0 * c0 + cp
    with np.errstate(divide="ignore", invalid="ignore"):
        shift = 0.5 * (cm - cp) / denom
    shift = np.where(has_nb & (denom < -_CURVATURE_FLOOR), shift, 0.0)
    shift = np.clip(shift, -0.5, 0.5)
    return np.clip(disparity + f_of[best] + shift, 0.0, max_disp)


def _handoff(disparity: np.ndarray, height: int, width: int) -> np.ndarray:
    """Carry a disparity map to a finer grid, rescaling values by the
    width ratio (exactly x2 for dyadic pyramids)."""
    ratio = width / disparity.shape[1]
    return resize_bilinear(disparity, height, width) * ratio


def _rig_motion_inits(bundle: FrameBundle) -> dict[str, RigidTransform]:
    """Calibration-only source-from-target transforms (no motion model)."""
    rig = bundle.rig
    return {
        "left": compose(invert(rig.pose_rccb_left), rig.pose_gated_left),
        "right": compose(invert(rig.pose_rccb_right), rig.pose_gated_right),
    }


def _measured_pose_inits(bundle: FrameBundle) -> dict[str, RigidTransform]:
    """Static extrinsics composed with the rig's motion over the *measured*
    capture-time offset.  This is the best pose available before any
    photometric refinement; what remains is the offset-measurement jitter."""
    rig = bundle.rig
    motion = exp_twist(bundle.delta_t * np.asarray(rig.rig_velocity))
    out = {}
    for v, pose_rccb in (("left", rig.pose_rccb_left),
                         ("right", rig.pose_rccb_right)):
        src_pose = compose(motion, pose_rccb)
        tgt = rig.pose_gated_left if v == "left" else rig.pose_gated_right
        out[v] = compose(invert(src_pose), tgt)
    return out


# Refinement sanity envelope around the measured-offset pose: the only
# unknown left is clock jitter (millimeters at vehicle speeds), so a
# refined pose that wanders further than this is a photometric artifact
# (flat or noise-dominated scenes) and gets discarded.
_POSE_TRANS_CAP = 0.01           # m
_POSE_ROT_CAP = math.radians(0.2)


def _pose_within_envelope(pose: RigidTransform, ref: RigidTransform) -> bool:
    if np.linalg.norm(pose.translation - ref.translation) > _POSE_TRANS_CAP:
        return False
    cos = (np.trace(ref.rotation.T @ pose.rotation) - 1.0) / 2.0
    return math.acos(min(1.0, max(-1.0, cos))) <= _POSE_ROT_CAP


def _refine_view_poses(
    bundle: FrameBundle,
    views: tuple[str, ...],
    plain_feats: dict[str, Image],
    rccb_feats: dict[str, Image],
    disparity: dict[str, np.ndarray],
    cam_level: CameraModel,
    baseline: float,
    calib: dict[str, RigidTransform],
    measured: dict[str, RigidTransform],
    state: dict[str, RigidTransform],
    cfg: PoseRefineConfig,
) -> dict[str, RigidTransform]:
    """Photometrically refine the source-from-target pose for one view and
    propagate the correction to the other (the rig moves rigidly, so the
    correction conjugates across the pure-x stereo baseline).  Divergence or
    pixel starvation falls back to the incoming state."""
    lead = "left" if "left" in views else views[0]
    h, w = disparity[lead].shape
    depth_lead = disparity_to_depth(
        DisparityMap(disparity[lead], np.ones((h, w), dtype=bool)),
        baseline, cam_level.fx,
    )
    try:
        refined, _, _ = refine_pose(
            plain_feats[lead], rccb_feats[lead], depth_lead, state[lead],
            bundle.delta_t, (cam_level, bundle.rig.cam_rccb), cfg,
        )
    except (Diverged, InsufficientValidPixels):
        refined = state[lead]
    if not _pose_within_envelope(refined, measured[lead]):
        refined = state[lead]
    correction = compose(invert(calib[lead]), refined)
    out = {lead: refined}
    for v in views:
        if v == lead:
            continue
        step = baseline if (lead, v) == ("left", "right") else -baseline
        rel = RigidTransform.from_translation([step, 0.0, 0.0])
        conjugated = compose(compose(invert(rel), correction), rel)
        out[v] = compose(calib[v], conjugated)
    return out


# Immerkaer's fast noise estimate: the 3x3 difference-of-Laplacians kernel
# annihilates constant and linear image content, so the mean absolute
# response measures noise sigma (up to the sqrt(pi/2)/6 normalization).
_NOISE_KERNEL = np.array([[1.0, -2.0, 1.0], [-2.0, 4.0, -2.0], [1.0, -2.0, 1.0]])


def _structure_to_noise(img: np.ndarray) -> float:
    """Smoothed-image contrast over a blind estimate of the noise sigma."""
    response = convolve(img, _NOISE_KERNEL, mode="nearest")
    sigma = math.sqrt(math.pi / 2.0) / 6.0 * float(np.abs(response).mean())
    structure = float(np.std(gaussian_filter(img, 1.5, mode="nearest")))
    return structure / max(sigma, 1e-12)


def estimate_disparity(
    bundle: FrameBundle,
    mode: str,
    iterations: int = 4,
    pyramid_levels: int = 3,
    radius: int = 4,
    *,
    views: tuple[str, ...] = ("left", "right"),
    target_upsample: int = 1,
    a_u=None,
    a_m=None,
    refine_cfg: PoseRefineConfig | None = None,
    agg_window: int = 7,
    min_source_snr: float = 3.0,
) -> DisparityResult:
    """Iterative correlation matching on a rectified pair.

    gated-only / rccb-only match that modality's own stereo pair.  fused
    matches the gated pair, but from each level's second iteration on it
    warps the RCCB features into the gated frame (using the disparity
    estimated so far and a pose refined against the measured capture-time
    offset) and correlates the attention-fused features instead.

    Three feature channels are too few for a per-pixel inner product to
    rank candidates reliably, so candidate scores are box-aggregated over
    an agg_window neighborhood before the winner is picked.

    Cross-spectral fusion only helps when the RCCB captures actually carry
    signal.  Feature standardization would happily amplify a pitch-dark
    image's read noise to unit variance, so fused mode first checks the
    RCCB luma's structure-to-noise ratio (smoothed-image contrast over a
    blind Laplacian noise estimate): below min_source_snr the warped
    branch is dropped and the output equals the target-modality result
    exactly.
    """
    if mode not in MODES:
        raise InvalidConfig(f"mode must be one of {MODES}, got {mode!r}")
    if iterations < 1 or pyramid_levels < 1:
        raise InvalidConfig("iterations and pyramid_levels must be >= 1")
    if radius < 1:
        raise InvalidConfig("radius must be >= 1")
    if target_upsample < 1:
        raise InvalidConfig("target_upsample must be >= 1")
    if agg_window < 1 or agg_window % 2 == 0:
        raise InvalidConfig("agg_window must be a positive odd integer")
    if not 0.0 <= min_source_snr or not np.isfinite(min_source_snr):
        raise InvalidConfig("min_source_snr must be finite and >= 0")
    bad = [v for v in views if v not in ("left", "right")]
    if bad:
        raise InvalidConfig(f"unknown views: {bad}")
    if a_u is None:
        a_u = uniform_attention(0.5)
    if a_m is None:
        a_m = uniform_attention(0.5)

    rig = bundle.rig
    fused = mode == "fused"
    if mode == "rccb-only":
        cam_target = rig.cam_rccb
        baseline = rig.baseline_rccb
        intensity = {v: luma(bundle.rccb_rgb[v]) for v in views}
    else:
        cam_target = rig.cam_gated
        baseline = rig.baseline_gated
        intensity = {v: gated_intensity(bundle.gated[v]) for v in views}
        if target_upsample > 1:
            h = rig.cam_gated.height * target_upsample
            w = rig.cam_gated.width * target_upsample
            intensity = {v: resize_bilinear(img, h, w) for v, img in intensity.items()}
            cam_target = _resampled_camera(rig.cam_gated, h, w)

    pyramids = {v: intensity_pyramid(img, pyramid_levels) for v, img in intensity.items()}

    # Secondary-modality (RCCB) sources for fused mode, native resolution.
    if fused:
        rccb_intensity = {v: luma(bundle.rccb_rgb[v]) for v in views}
        fused = min(map(_structure_to_noise, rccb_intensity.values())) >= min_source_snr
    if fused:
        rccb_feats = {v: feature_image(img) for v, img in rccb_intensity.items()}
        calib = _rig_motion_inits(bundle)
        measured = _measured_pose_inits(bundle)
        pose_state = dict(measured)
        cfg = refine_cfg if refine_cfg is not None else PoseRefineConfig(pyramid_levels=1)

    other = {"left": "right", "right": "left"}
    sign = {"left": -1.0, "right": 1.0}
    disparity: dict[str, np.ndarray] = {}
    intermediates = []
    correction: RigidTransform | None = None

    for level in range(pyramid_levels - 1, -1, -1):
        level_int = {v: pyramids[v][level] for v in views}
        h, w = next(iter(level_int.values())).shape
        cam_level = _resampled_camera(cam_target, h, w)
        plain_feats = {v: feature_image(img) for v, img in level_int.items()}
        target_feats = {
            v: Image(plain_feats[v].data
                     * np.broadcast_to(a_u(plain_feats[v]), plain_feats[v].data.shape))
            for v in views
        }
        if not disparity:
            disparity = {v: np.zeros((h, w)) for v in views}
        else:
            disparity = {v: _handoff(d, h, w) for v, d in disparity.items()}

        refined_this_level = False
        for it in range(1, iterations + 1):
            offsets = search_offsets(it, radius)
            if fused and it > 1:
                # Warp geometry comes from a median-filtered disparity: the
                # raw per-pixel estimate would fetch RCCB support from the
                # wrong place at exactly the outlier pixels that most need
                # correcting, locking them in.  A neighborhood prior keeps
                # the warp sane there while leaving good regions unchanged.
                warp_disp = {
                    v: median_filter(disparity[v], size=5, mode="nearest")
                    for v in views
                }
                if not refined_this_level:
                    pose_state = _refine_view_poses(
                        bundle, views, plain_feats, rccb_feats, warp_disp,
                        cam_level, baseline, calib, measured, pose_state, cfg,
                    )
                    refined_this_level = True
                    lead = "left" if "left" in views else views[0]
                    correction = compose(invert(calib[lead]), pose_state[lead])
                corr_feats = {}
                for v in views:
                    depth_now = disparity_to_depth(
                        DisparityMap(warp_disp[v], np.ones((h, w), dtype=bool)),
                        baseline, cam_level.fx,
                    )
                    warp = build_warp(depth_now, pose_state[v], cam_level, rig.cam_rccb)
                    warped, wmask = warp_image(rccb_intensity[v], warp)
                    aligned = feature_image(warped[:, :, 0])
                    masked_mix = _mask_overridden(a_m, wmask > 0.999)
                    corr_feats[v] = fuse_features(
                        plain_feats[v], aligned, a_u, masked_mix
                    )
            else:
                corr_feats = target_feats
            for v in views:
                scores = _score_candidates(
                    corr_feats[v], corr_feats[other[v]], disparity[v], offsets,
                    sign[v], agg_window,
                )
                disparity[v] = _wta_refine(scores, offsets, disparity[v], float(w - 1))
        if "left" in disparity:
            intermediates.append(disparity["left"].copy())

    maps = {
        v: DisparityMap(disparity[v], np.ones(disparity[v].shape, dtype=bool))
        for v in views
    }
    return DisparityResult(
        mode=mode,
        disparity=maps,
        intermediates=tuple(intermediates),
        camera=cam_target,
        baseline=baseline,
        pose_correction=correction,
    )


def _mask_overridden(a_m, hole_free: np.ndarray):
    """Wrap a mixing attention so holes in the warped source fall back to
    the target modality (mix weight forced to 1)."""
    def wrapped(feat: Image) -> np.ndarray:
        mix = np.broadcast_to(a_m(feat), feat.data.shape).copy()
        mix[~hole_free] = 1.0
        return mix
    return wrapped
