"""Synthetic scene generation with exact depth ground truth.

Scenes are built from analytic primitives (planes, spheres, axis-aligned
boxes) with procedural albedo textures evaluated in world coordinates, so
appearance is Lambertian and view-independent.  Each primitive carries a
visible-band texture, an optional distinct NIR-band texture (the two
spectra need not look alike), and an RGB tint for the visible band.

Ray casting stores plane-parallel z-depth (the camera-frame z of the hit
point), not ray length.  A scene must contain an unbounded background plane
within 300 m so every pixel of every camera receives a finite depth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import CameraModel, DepthMap, RigidTransform, compose, exp_twist, pixel_grid
from .errors import InvalidConfig, ShapeMismatch
from .gating import (
    EXPOSURE_REF,
    GatedSliceStack,
    RangeIntensityProfile,
    SensorNoise,
    default_profiles,
    form_gated_slice,
    form_passive_image,
    rccb_demosaic,
    rccb_mosaic,
)

_RAY_EPS = 1e-6

# Irrational-ish phase shift keeping checker lattice boundaries away from
# axis-aligned surfaces at round coordinates.
_CHECKER_PHASE = 0.1234567


@dataclass(frozen=True)
class TextureSpec:
    """Procedural scalar albedo in [0, 1].

    kind "constant": value; kind "checker": alternates a/b on a cubic
    lattice of the given period (m); kind "noise": smooth value noise in
    [lo, hi] with feature size `scale` (m).  `octaves` > 1 layers halved-
    scale, halved-amplitude noise on top (fBm), so surfaces keep contrast
    at finer image scales instead of flattening into ramps up close.
    """

    kind: str = "constant"
    value: float = 0.5
    a: float = 0.3
    b: float = 0.7
    period: float = 2.0
    lo: float = 0.2
    hi: float = 0.8
    scale: float = 3.0
    seed: int = 0
    octaves: int = 1

    def __post_init__(self):
        if self.kind not in ("constant", "checker", "noise"):
            raise InvalidConfig(f"unknown texture kind {self.kind!r}")
        for v in (self.value, self.a, self.b, self.lo, self.hi):
            if not 0.0 <= v <= 1.0:
                raise InvalidConfig("texture values must lie in [0, 1]")
        if self.period <= 0.0 or self.scale <= 0.0:
            raise InvalidConfig("texture period/scale must be positive")
        if self.octaves < 1:
            raise InvalidConfig("octaves must be >= 1")


def _hash01(ix: np.ndarray, iy: np.ndarray, iz: np.ndarray, seed: int) -> np.ndarray:
    """Deterministic lattice hash to [0, 1): splitmix-style bit mixing."""
    with np.errstate(over="ignore"):
        h = (
            ix.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
            + iy.astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
            + iz.astype(np.uint64) * np.uint64(0x165667B19E3779F9)
            + np.uint64(seed & 0xFFFFFFFF) * np.uint64(0x27D4EB2F165667C5)
        )
        h ^= h >> np.uint64(30)
        h *= np.uint64(0xBF58476D1CE4E5B9)
        h ^= h >> np.uint64(27)
        h *= np.uint64(0x94D049BB133111EB)
        h ^= h >> np.uint64(31)
    return h.astype(np.float64) / 18446744073709551616.0


def _value_noise(pts: np.ndarray, scale: float, seed: int) -> np.ndarray:
    """Smooth value noise in [0, 1): trilinear blend of hashed lattice
    corners with smoothstep weights."""
    q = pts / scale
    q0 = np.floor(q)
    f = q - q0
    w = f * f * (3.0 - 2.0 * f)
    i0 = q0.astype(np.int64)
    acc = np.zeros(pts.shape[:-1])
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                corner = _hash01(i0[..., 0] + dx, i0[..., 1] + dy, i0[..., 2] + dz, seed)
                wx = w[..., 0] if dx else 1.0 - w[..., 0]
                wy = w[..., 1] if dy else 1.0 - w[..., 1]
                wz = w[..., 2] if dz else 1.0 - w[..., 2]
                acc += corner * wx * wy * wz
    return acc


def eval_texture(spec: TextureSpec, points: np.ndarray) -> np.ndarray:
    """Evaluate a texture at world points (..., 3); returns values in [0,1]."""
    pts = np.asarray(points, dtype=np.float64)
    if spec.kind == "constant":
        return np.full(pts.shape[:-1], spec.value)
    if spec.kind == "checker":
        cells = np.floor(pts / spec.period + _CHECKER_PHASE).astype(np.int64).sum(axis=-1)
        return np.where(cells % 2 == 0, spec.a, spec.b)
    acc = _value_noise(pts, spec.scale, spec.seed)
    if spec.octaves > 1:
        amp, total = 1.0, 1.0
        for i in range(1, spec.octaves):
            amp *= 0.5
            total += amp
            acc += amp * _value_noise(pts, spec.scale / 2.0**i, spec.seed + 131 * i)
        acc /= total
    return spec.lo + (spec.hi - spec.lo) * acc


@dataclass(frozen=True)
class Primitive:
    """One scene surface.

    kind "plane": point, normal, extent (half-size of a square patch in the
    plane; inf = unbounded); kind "sphere": center, radius; kind "box":
    center, half_extents, axis-aligned.  `texture` is the visible-band
    albedo, `nir` the NIR-band albedo (defaults to the visible one), and
    `tint` scales the visible albedo per RGB channel.
    """

    kind: str
    texture: TextureSpec
    nir: TextureSpec | None = None
    tint: tuple[float, float, float] = (1.0, 1.0, 1.0)
    point: tuple[float, float, float] = (0.0, 0.0, 0.0)
    normal: tuple[float, float, float] = (0.0, 0.0, -1.0)
    extent: float = math.inf
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    radius: float = 1.0
    half_extents: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.kind not in ("plane", "sphere", "box"):
            raise InvalidConfig(f"unknown primitive kind {self.kind!r}")
        if self.kind == "sphere" and self.radius <= 0.0:
            raise InvalidConfig("sphere radius must be positive")
        if self.kind == "box" and any(h <= 0.0 for h in self.half_extents):
            raise InvalidConfig("box half_extents must be positive")
        if self.kind == "plane":
            n = np.linalg.norm(np.asarray(self.normal, dtype=np.float64))
            if n < 1e-12:
                raise InvalidConfig("plane normal must be nonzero")
        if not all(0.0 <= t <= 1.0 for t in self.tint):
            raise InvalidConfig("tint channels must lie in [0, 1]")

    def band_texture(self, band: str) -> TextureSpec:
        if band == "nir":
            return self.nir if self.nir is not None else self.texture
        return self.texture


@dataclass(frozen=True)
class SceneSpec:
    """A list of primitives forming one static scene."""

    primitives: tuple[Primitive, ...]

    def __post_init__(self):
        prims = tuple(self.primitives)
        if not prims:
            raise InvalidConfig("scene needs at least one primitive")
        object.__setattr__(self, "primitives", prims)
        if not self._has_background():
            raise InvalidConfig(
                "scene needs an unbounded background plane within 300 m of the origin"
            )

    def _has_background(self) -> bool:
        fwd = np.array([0.0, 0.0, 1.0])
        for p in self.primitives:
            if p.kind != "plane" or not math.isinf(p.extent):
                continue
            n = np.asarray(p.normal, dtype=np.float64)
            n = n / np.linalg.norm(n)
            denom = fwd @ n
            if abs(denom) < 1e-6:
                continue
            t = (np.asarray(p.point) @ n) / denom
            if 0.0 < t <= 300.0:
                return True
        return False


def _intersect_plane(prim: Primitive, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    n = np.asarray(prim.normal, dtype=np.float64)
    n = n / np.linalg.norm(n)
    p0 = np.asarray(prim.point, dtype=np.float64)
    denom = dirs @ n
    safe = np.where(np.abs(denom) > 1e-12, denom, 1.0)
    t = ((p0 - origins) @ n) / safe
    t = np.where((np.abs(denom) > 1e-12) & (t > _RAY_EPS), t, np.inf)
    if math.isfinite(prim.extent):
        up = np.array([0.0, 1.0, 0.0]) if abs(n[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
        e1 = np.cross(n, up)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(n, e1)
        hit = origins + t[..., None] * dirs - p0
        inside = (np.abs(hit @ e1) <= prim.extent) & (np.abs(hit @ e2) <= prim.extent)
        t = np.where(inside, t, np.inf)
    return t


def _intersect_sphere(prim: Primitive, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    c = np.asarray(prim.center, dtype=np.float64)
    oc = origins - c
    a = np.einsum("...i,...i->...", dirs, dirs)
    b = 2.0 * np.einsum("...i,...i->...", dirs, oc)
    cc = np.einsum("...i,...i->...", oc, oc) - prim.radius**2
    disc = b * b - 4.0 * a * cc
    sq = np.sqrt(np.clip(disc, 0.0, None))
    t_near = (-b - sq) / (2.0 * a)
    t_far = (-b + sq) / (2.0 * a)
    t = np.where(t_near > _RAY_EPS, t_near, t_far)
    return np.where((disc >= 0.0) & (t > _RAY_EPS), t, np.inf)


def _intersect_box(prim: Primitive, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    c = np.asarray(prim.center, dtype=np.float64)
    h = np.asarray(prim.half_extents, dtype=np.float64)
    lo, hi = c - h, c + h
    d = np.where(np.abs(dirs) > 1e-30, dirs, 1e-30)
    t1 = (lo - origins) / d
    t2 = (hi - origins) / d
    t_near = np.minimum(t1, t2).max(axis=-1)
    t_far = np.maximum(t1, t2).min(axis=-1)
    hit = (t_far >= t_near) & (t_far > _RAY_EPS)
    t = np.where(t_near > _RAY_EPS, t_near, np.inf)
    return np.where(hit, t, np.inf)


_INTERSECTORS = {"plane": _intersect_plane, "sphere": _intersect_sphere, "box": _intersect_box}


@dataclass(frozen=True)
class RaycastResult:
    depth: DepthMap
    albedo: np.ndarray       # (H, W) scalar band albedo
    rgb_albedo: np.ndarray   # (H, W, 3) albedo * tint (meaningful for visible band)


def raycast(
    scene: SceneSpec,
    cam: CameraModel,
    pose_cam_to_world: RigidTransform,
    band: str = "visible",
) -> RaycastResult:
    """Render exact z-depth and albedo for one camera.

    Rays are parameterized so the ray parameter equals camera-frame z,
    which makes the stored depth plane-parallel by construction.
    """
    if band not in ("visible", "nir"):
        raise InvalidConfig(f"unknown band {band!r}")
    grid = pixel_grid(cam.width, cam.height)
    dirs_cam = np.stack(
        [
            (grid[..., 0] - cam.cx) / cam.fx,
            (grid[..., 1] - cam.cy) / cam.fy,
            np.ones((cam.height, cam.width)),
        ],
        axis=-1,
    )
    dirs_w = dirs_cam @ pose_cam_to_world.rotation.T
    origin = np.broadcast_to(pose_cam_to_world.translation, dirs_w.shape)

    ts = np.stack(
        [_INTERSECTORS[p.kind](p, origin, dirs_w) for p in scene.primitives], axis=0
    )
    winner = ts.argmin(axis=0)
    t_hit = np.take_along_axis(ts, winner[None], axis=0)[0]
    mask = np.isfinite(t_hit)

    albedo = np.zeros((cam.height, cam.width))
    tint = np.ones((cam.height, cam.width, 3))
    safe_t = np.where(mask, t_hit, 1.0)
    hits = origin + safe_t[..., None] * dirs_w
    for idx, prim in enumerate(scene.primitives):
        sel = mask & (winner == idx)
        if not sel.any():
            continue
        albedo[sel] = eval_texture(prim.band_texture(band), hits[sel])
        tint[sel] = np.asarray(prim.tint, dtype=np.float64)

    values = np.where(mask, safe_t, np.nan)
    depth = DepthMap(values, mask)
    return RaycastResult(depth=depth, albedo=albedo, rgb_albedo=albedo[..., None] * tint)


@dataclass(frozen=True)
class RigSpec:
    """Camera rig: a rectified gated pair and a rectified RCCB pair.

    Poses map camera frames to the rig frame (which is also the world frame
    at the gated exposure instant).  rig_velocity is a twist
    [wx, wy, wz, vx, vy, vz]; time_offset_truth (s) is how much later the
    RCCB pair actually fires.
    """

    cam_gated: CameraModel
    cam_rccb: CameraModel
    pose_gated_left: RigidTransform
    pose_gated_right: RigidTransform
    pose_rccb_left: RigidTransform
    pose_rccb_right: RigidTransform
    baseline_gated: float = 0.76
    baseline_rccb: float = 0.76
    time_offset_truth: float = 0.02
    rig_velocity: tuple[float, float, float, float, float, float] = (0.0, 0.0, 0.0, 0.0, 0.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "rig_velocity", tuple(float(v) for v in self.rig_velocity))
        if len(self.rig_velocity) != 6:
            raise InvalidConfig("rig_velocity must be a 6-vector twist")
        for b in (self.baseline_gated, self.baseline_rccb):
            if b <= 0.0:
                raise InvalidConfig("baselines must be positive")
        self._check_rectified(self.pose_gated_left, self.pose_gated_right, self.baseline_gated)
        self._check_rectified(self.pose_rccb_left, self.pose_rccb_right, self.baseline_rccb)

    @staticmethod
    def _check_rectified(left: RigidTransform, right: RigidTransform, baseline: float) -> None:
        if np.abs(left.rotation - right.rotation).max() > 1e-12:
            raise InvalidConfig("stereo pair must share its rotation (rectified)")
        # Right camera sits +baseline along the pair's own x axis.
        offset = left.rotation.T @ (right.translation - left.translation)
        if np.abs(offset - np.array([baseline, 0.0, 0.0])).max() > 1e-9:
            raise InvalidConfig(f"stereo pair must be a pure-x baseline of {baseline} m")

    def cameras(self) -> dict[str, CameraModel]:
        return {
            "gated_left": self.cam_gated,
            "gated_right": self.cam_gated,
            "rccb_left": self.cam_rccb,
            "rccb_right": self.cam_rccb,
        }

    def rig_poses(self) -> dict[str, RigidTransform]:
        return {
            "gated_left": self.pose_gated_left,
            "gated_right": self.pose_gated_right,
            "rccb_left": self.pose_rccb_left,
            "rccb_right": self.pose_rccb_right,
        }


def default_rig(
    gated_size: tuple[int, int] = (320, 160),
    rccb_scale: int = 3,
    baseline: float = 0.76,
    time_offset_truth: float = 0.02,
    rig_velocity: tuple[float, ...] = (0.0, 0.0, 0.0, 0.0, 0.0, 1.0),
) -> RigSpec:
    w, h = gated_size
    cam_g = CameraModel(fx=float(w), fy=float(w), cx=(w - 1) / 2.0, cy=(h - 1) / 2.0, width=w, height=h)
    cam_c = cam_g.scaled(float(rccb_scale))
    eye = np.eye(3)
    return RigSpec(
        cam_gated=cam_g,
        cam_rccb=cam_c,
        pose_gated_left=RigidTransform(eye, [0.0, 0.0, 0.0]),
        pose_gated_right=RigidTransform(eye, [baseline, 0.0, 0.0]),
        pose_rccb_left=RigidTransform(eye, [0.05, -0.06, 0.02]),
        pose_rccb_right=RigidTransform(eye, [0.05 + baseline, -0.06, 0.02]),
        baseline_gated=baseline,
        baseline_rccb=baseline,
        time_offset_truth=time_offset_truth,
        rig_velocity=tuple(rig_velocity),
    )


@dataclass(frozen=True)
class RenderConfig:
    """Illumination, sensor, and supervision settings for one capture."""

    ambient_level: float = 1.0
    amplitude_scale: float = 1.0
    sigma_atm: float = 0.0
    exposure: float = EXPOSURE_REF
    gated_ambient_gain: float = 0.15
    dark: tuple[float, ...] = (0.02, 0.02, 0.02)
    gated_noise: tuple[float, float] | None = None  # (read_sigma, shot_scale)
    rccb_noise: tuple[float, float] | None = None
    lidar_rows: int = 16
    lidar_sigma: float = 0.03
    delta_t_jitter: float = 1e-3
    profiles: tuple[RangeIntensityProfile, ...] | None = None

    def resolved_profiles(self) -> tuple[RangeIntensityProfile, ...]:
        if self.profiles is not None:
            return self.profiles
        return default_profiles(self.amplitude_scale, self.sigma_atm)


@dataclass(frozen=True)
class FrameBundle:
    """Everything one synthetic capture produces.

    poses are camera->world at each camera's own exposure time (the RCCB
    pair is displaced by the rig motion over the true time offset).
    delta_t is the *measured* offset: truth plus clock jitter.
    """

    rig: RigSpec
    config: RenderConfig
    poses: dict[str, RigidTransform]
    gt_depth: dict[str, DepthMap]
    gt_albedo: dict[str, np.ndarray]
    gated: dict[str, GatedSliceStack]
    rccb_rgb: dict[str, np.ndarray]
    rccb_raw: dict[str, np.ndarray]
    delta_t: float
    lidar: DepthMap
    seed: int

    def camera(self, view: str) -> CameraModel:
        return self.rig.cameras()[view]


def displaced_rccb_pose(rig: RigSpec, side: str) -> RigidTransform:
    """World pose of an RCCB camera at its true (offset) exposure time."""
    motion = exp_twist(rig.time_offset_truth * np.asarray(rig.rig_velocity))
    base = rig.pose_rccb_left if side == "left" else rig.pose_rccb_right
    return compose(motion, base)


def sample_lidar(depth: DepthMap, rows: int, sigma: float, rng: np.random.Generator) -> DepthMap:
    """Sparse depth supervision: `rows` equally spaced raster rows of the
    reference depth with Gaussian range jitter."""
    h, w = depth.shape
    idx = np.unique(np.linspace(0, h - 1, max(1, rows)).round().astype(int))
    mask = np.zeros((h, w), dtype=bool)
    mask[idx] = True
    mask &= depth.mask
    noisy = depth.values + rng.normal(0.0, sigma, size=depth.values.shape) if sigma > 0 else depth.values
    values = np.where(mask, np.clip(noisy, 0.1, None), np.nan)
    return DepthMap(values, mask)


def render_bundle(scene: SceneSpec, rig: RigSpec, config: RenderConfig, seed: int) -> FrameBundle:
    """Simulate one four-camera capture of a scene."""
    profiles = config.resolved_profiles()
    if len(config.dark) != len(profiles):
        raise InvalidConfig("need one dark level per gated slice")

    poses = {
        "gated_left": rig.pose_gated_left,
        "gated_right": rig.pose_gated_right,
        "rccb_left": displaced_rccb_pose(rig, "left"),
        "rccb_right": displaced_rccb_pose(rig, "right"),
    }

    gt_depth: dict[str, DepthMap] = {}
    gt_albedo: dict[str, np.ndarray] = {}
    gated: dict[str, GatedSliceStack] = {}
    rccb_rgb: dict[str, np.ndarray] = {}
    rccb_raw: dict[str, np.ndarray] = {}

    gated_noise = (
        SensorNoise(config.gated_noise[0], config.gated_noise[1], seed)
        if config.gated_noise is not None
        else None
    )
    rccb_noise = (
        SensorNoise(config.rccb_noise[0], config.rccb_noise[1], seed)
        if config.rccb_noise is not None
        else None
    )

    for side_idx, side in enumerate(("left", "right")):
        view = f"gated_{side}"
        cast = raycast(scene, rig.cam_gated, poses[view], band="nir")
        gt_depth[view] = cast.depth
        gt_albedo[view] = cast.albedo
        ambient_img = cast.albedo * (config.ambient_level * config.gated_ambient_gain)
        slices = np.stack(
            [
                form_gated_slice(
                    cast.depth.values,
                    cast.depth.mask,
                    cast.albedo,
                    profiles[k],
                    ambient_img,
                    config.dark[k],
                    noise=gated_noise,
                    stream=(1, side_idx, k),
                )
                for k in range(len(profiles))
            ],
            axis=-1,
        )
        gated[side] = GatedSliceStack(slices, profiles, np.asarray(config.dark), ambient_img)

    for side_idx, side in enumerate(("left", "right")):
        view = f"rccb_{side}"
        cast = raycast(scene, rig.cam_rccb, poses[view], band="visible")
        gt_depth[view] = cast.depth
        gt_albedo[view] = cast.rgb_albedo
        clean_rgb = form_passive_image(cast.rgb_albedo, config.ambient_level, config.exposure)
        raw = rccb_mosaic(clean_rgb)
        if rccb_noise is not None:
            raw = np.clip(rccb_noise.apply(raw, stream=(2, side_idx)), 0.0, 1.0)
        rccb_raw[side] = raw
        rccb_rgb[side] = rccb_demosaic(raw)

    jitter_rng = np.random.default_rng([seed, 3])
    delta_t = rig.time_offset_truth + (
        jitter_rng.normal(0.0, config.delta_t_jitter) if config.delta_t_jitter > 0 else 0.0
    )
    lidar = sample_lidar(
        gt_depth["gated_left"], config.lidar_rows, config.lidar_sigma, np.random.default_rng([seed, 4])
    )
    return FrameBundle(
        rig=rig,
        config=config,
        poses=poses,
        gt_depth=gt_depth,
        gt_albedo=gt_albedo,
        gated=gated,
        rccb_rgb=rccb_rgb,
        rccb_raw=rccb_raw,
        delta_t=float(delta_t),
        lidar=lidar,
        seed=seed,
    )


def make_test_scene(seed: int = 0) -> SceneSpec:
    """A compact textured scene used across the test suite.

    Slanted ground running from ~10 m out, structure at 30/55/75/95 m, a
    bounded wall segment at 115 m, and a slightly slanted background wall
    sweeping ~122-158 m, so the depth histogram exercises the whole 10-160 m
    working range instead of piling onto a single far plane.
    """
    return SceneSpec(
        primitives=(
            Primitive(
                kind="plane",
                point=(0.0, 2.5, 0.0),
                normal=(0.0, -1.0, 0.0),
                texture=TextureSpec(kind="noise", lo=0.25, hi=0.7, scale=2.5, seed=seed * 31 + 1),
                nir=TextureSpec(kind="noise", lo=0.3, hi=0.8, scale=2.0, seed=seed * 31 + 2),
            ),
            Primitive(
                kind="sphere",
                center=(-3.0, 0.0, 30.0),
                radius=2.0,
                texture=TextureSpec(kind="checker", a=0.25, b=0.65, period=1.0),
                tint=(0.9, 0.7, 0.6),
            ),
            Primitive(
                kind="box",
                center=(4.0, 0.5, 55.0),
                half_extents=(2.0, 2.0, 2.0),
                texture=TextureSpec(kind="noise", lo=0.3, hi=0.75, scale=0.8, seed=seed * 31 + 3),
            ),
            Primitive(
                kind="sphere",
                center=(6.0, -1.5, 75.0),
                radius=3.0,
                texture=TextureSpec(kind="noise", lo=0.35, hi=0.8, scale=1.2, seed=seed * 31 + 6),
                tint=(0.7, 0.8, 0.9),
            ),
            Primitive(
                kind="box",
                center=(-8.0, -1.0, 95.0),
                half_extents=(3.0, 3.0, 2.0),
                texture=TextureSpec(kind="noise", lo=0.3, hi=0.75, scale=1.5, seed=seed * 31 + 7),
            ),
            Primitive(
                kind="plane",
                point=(-10.0, -2.0, 115.0),
                normal=(0.0, 0.0, -1.0),
                extent=12.0,
                texture=TextureSpec(kind="noise", lo=0.3, hi=0.7, scale=4.0, seed=seed * 31 + 8),
                nir=TextureSpec(kind="noise", lo=0.35, hi=0.85, scale=3.0, seed=seed * 31 + 9),
            ),
            Primitive(
                kind="plane",
                point=(0.0, 0.0, 140.0),
                normal=(-0.25, 0.0, -1.0),
                texture=TextureSpec(kind="noise", lo=0.3, hi=0.7, scale=6.0, seed=seed * 31 + 4),
                nir=TextureSpec(kind="noise", lo=0.55, hi=0.95, scale=5.0, seed=seed * 31 + 5),
            ),
        )
    )
