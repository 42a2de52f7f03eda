"""Dataset on-disk format.

One dataset is a root directory with a `calib.json` (rig, render settings,
per-frame seed and measured time offset) and one `frame_%06d/` directory
per capture:

    gated_{l,r}_slice{k}.png   16-bit grayscale, DN = value / 65535
    gated_{l,r}_passive.png    ambient reference image, same scale
    rccb_{l,r}_raw.png         16-bit mosaic
    rccb_{l,r}_rgb.png         16-bit 3-channel demosaiced image
    gt_depth_{view}.f32        little-endian float32, row-major, meters,
                               NaN = invalid
    lidar_sparse.f32           sparse depth on the gated-left grid

PNG round-trips quantize to 1/65535; the float32 rasters are exact.
Ground-truth albedo is not serialized, so bundles read back from disk have
an empty gt_albedo.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .core import CameraModel, DepthMap, RigidTransform
from .errors import InvalidConfig, IoError, ShapeMismatch
from .gating import GatedSliceStack, RangeIntensityProfile
from .scenesim import (
    FrameBundle,
    Primitive,
    RenderConfig,
    RigSpec,
    SceneSpec,
    TextureSpec,
    displaced_rccb_pose,
)

_SIDES = (("left", "l"), ("right", "r"))
_VIEWS = ("gated_left", "gated_right", "rccb_left", "rccb_right")


def frame_dir(root: str | Path, index: int) -> Path:
    return Path(root) / f"frame_{index:06d}"


# --------------------------------------------------------------------------
# raster I/O

def save_raster16(path: str | Path, values: np.ndarray) -> None:
    """Quantize a [0, 1] float raster to 16-bit PNG (RGB stored as BGR)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim not in (2, 3):
        raise ShapeMismatch(f"raster must be 2-D or 3-D, got {arr.shape}")
    dn = np.clip(np.round(arr * 65535.0), 0.0, 65535.0).astype(np.uint16)
    if dn.ndim == 3:
        dn = dn[:, :, ::-1]
    if not cv2.imwrite(str(path), dn):
        raise IoError(f"could not write {path}")


def load_raster16(path: str | Path) -> np.ndarray:
    dn = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if dn is None:
        raise IoError(f"could not read {path}")
    if dn.ndim == 3:
        dn = dn[:, :, ::-1]
    return dn.astype(np.float64) / 65535.0


def save_depth_f32(path: str | Path, depth: DepthMap) -> None:
    values = np.where(depth.mask, depth.values, np.nan).astype("<f4")
    Path(path).write_bytes(values.tobytes())


def load_depth_f32(path: str | Path, shape: tuple[int, int]) -> DepthMap:
    path = Path(path)
    if not path.is_file():
        raise IoError(f"missing depth raster {path}")
    flat = np.frombuffer(path.read_bytes(), dtype="<f4")
    if flat.size != shape[0] * shape[1]:
        raise ShapeMismatch(
            f"{path} holds {flat.size} floats, expected {shape[0]}x{shape[1]}")
    values = flat.reshape(shape).astype(np.float64)
    mask = np.isfinite(values) & (values > 0.0)
    return DepthMap(np.where(mask, values, np.nan), mask)


# --------------------------------------------------------------------------
# calibration / config serialization

def _pose_to_dict(pose: RigidTransform) -> dict:
    return {"rotation": pose.rotation.tolist(),
            "translation": pose.translation.tolist()}


def _pose_from_dict(blob: dict) -> RigidTransform:
    return RigidTransform(np.asarray(blob["rotation"], dtype=np.float64),
                          np.asarray(blob["translation"], dtype=np.float64))


def _camera_to_dict(cam: CameraModel) -> dict:
    return {"fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
            "width": cam.width, "height": cam.height}


def _camera_from_dict(blob: dict) -> CameraModel:
    return CameraModel(fx=float(blob["fx"]), fy=float(blob["fy"]),
                       cx=float(blob["cx"]), cy=float(blob["cy"]),
                       width=int(blob["width"]), height=int(blob["height"]))


def rig_to_dict(rig: RigSpec) -> dict:
    return {
        "cam_gated": _camera_to_dict(rig.cam_gated),
        "cam_rccb": _camera_to_dict(rig.cam_rccb),
        "poses": {v: _pose_to_dict(p) for v, p in rig.rig_poses().items()},
        "baseline_gated": rig.baseline_gated,
        "baseline_rccb": rig.baseline_rccb,
        "time_offset_truth": rig.time_offset_truth,
        "rig_velocity": list(rig.rig_velocity),
    }


def rig_from_dict(blob: dict) -> RigSpec:
    poses = {v: _pose_from_dict(blob["poses"][v]) for v in _VIEWS}
    return RigSpec(
        cam_gated=_camera_from_dict(blob["cam_gated"]),
        cam_rccb=_camera_from_dict(blob["cam_rccb"]),
        pose_gated_left=poses["gated_left"],
        pose_gated_right=poses["gated_right"],
        pose_rccb_left=poses["rccb_left"],
        pose_rccb_right=poses["rccb_right"],
        baseline_gated=float(blob["baseline_gated"]),
        baseline_rccb=float(blob["baseline_rccb"]),
        time_offset_truth=float(blob["time_offset_truth"]),
        rig_velocity=tuple(blob["rig_velocity"]),
    )


def _profile_to_dict(p: RangeIntensityProfile) -> dict:
    return {"xi": p.xi, "tau_g": p.tau_g, "tau_p": p.tau_p,
            "amplitude": p.amplitude, "sigma_atm": p.sigma_atm}


def _profile_from_dict(blob: dict) -> RangeIntensityProfile:
    return RangeIntensityProfile(
        xi=float(blob["xi"]), tau_g=float(blob["tau_g"]),
        tau_p=float(blob["tau_p"]), amplitude=float(blob["amplitude"]),
        sigma_atm=float(blob["sigma_atm"]))


def render_config_to_dict(config: RenderConfig) -> dict:
    return {
        "ambient_level": config.ambient_level,
        "amplitude_scale": config.amplitude_scale,
        "sigma_atm": config.sigma_atm,
        "exposure": config.exposure,
        "gated_ambient_gain": config.gated_ambient_gain,
        "dark": list(config.dark),
        "gated_noise": list(config.gated_noise) if config.gated_noise else None,
        "rccb_noise": list(config.rccb_noise) if config.rccb_noise else None,
        "lidar_rows": config.lidar_rows,
        "lidar_sigma": config.lidar_sigma,
        "delta_t_jitter": config.delta_t_jitter,
        "profiles": ([_profile_to_dict(p) for p in config.profiles]
                     if config.profiles is not None else None),
    }


def render_config_from_dict(blob: dict) -> RenderConfig:
    noise = lambda v: tuple(float(x) for x in v) if v is not None else None
    profiles = blob.get("profiles")
    return RenderConfig(
        ambient_level=float(blob["ambient_level"]),
        amplitude_scale=float(blob["amplitude_scale"]),
        sigma_atm=float(blob["sigma_atm"]),
        exposure=float(blob["exposure"]),
        gated_ambient_gain=float(blob["gated_ambient_gain"]),
        dark=tuple(float(d) for d in blob["dark"]),
        gated_noise=noise(blob["gated_noise"]),
        rccb_noise=noise(blob["rccb_noise"]),
        lidar_rows=int(blob["lidar_rows"]),
        lidar_sigma=float(blob["lidar_sigma"]),
        delta_t_jitter=float(blob["delta_t_jitter"]),
        profiles=(tuple(_profile_from_dict(p) for p in profiles)
                  if profiles is not None else None),
    )


def texture_to_dict(tex: TextureSpec) -> dict:
    return {"kind": tex.kind, "value": tex.value, "a": tex.a, "b": tex.b,
            "period": tex.period, "lo": tex.lo, "hi": tex.hi,
            "scale": tex.scale, "seed": tex.seed, "octaves": tex.octaves}


def texture_from_dict(blob: dict) -> TextureSpec:
    allowed = set(texture_to_dict(TextureSpec()))
    bad = set(blob) - allowed
    if bad:
        raise InvalidConfig(f"unknown texture fields {sorted(bad)}")
    return TextureSpec(**blob)


def primitive_to_dict(prim: Primitive) -> dict:
    blob = {"kind": prim.kind, "texture": texture_to_dict(prim.texture),
            "tint": list(prim.tint)}
    if prim.nir is not None:
        blob["nir"] = texture_to_dict(prim.nir)
    if prim.kind == "plane":
        blob.update(point=list(prim.point), normal=list(prim.normal),
                    extent=prim.extent if math.isfinite(prim.extent) else None)
    elif prim.kind == "sphere":
        blob.update(center=list(prim.center), radius=prim.radius)
    else:
        blob.update(center=list(prim.center),
                    half_extents=list(prim.half_extents))
    return blob


def primitive_from_dict(blob: dict) -> Primitive:
    kind = blob.get("kind")
    kwargs = {"kind": kind, "texture": texture_from_dict(blob["texture"])}
    if "nir" in blob and blob["nir"] is not None:
        kwargs["nir"] = texture_from_dict(blob["nir"])
    if "tint" in blob:
        kwargs["tint"] = tuple(blob["tint"])
    if kind == "plane":
        kwargs["point"] = tuple(blob["point"])
        kwargs["normal"] = tuple(blob["normal"])
        extent = blob.get("extent")
        kwargs["extent"] = math.inf if extent is None else float(extent)
    elif kind == "sphere":
        kwargs["center"] = tuple(blob["center"])
        kwargs["radius"] = float(blob["radius"])
    elif kind == "box":
        kwargs["center"] = tuple(blob["center"])
        kwargs["half_extents"] = tuple(blob["half_extents"])
    else:
        raise InvalidConfig(f"unknown primitive kind {kind!r}")
    return Primitive(**kwargs)


def scene_to_dict(scene: SceneSpec) -> dict:
    return {"primitives": [primitive_to_dict(p) for p in scene.primitives]}


def scene_from_dict(blob: dict) -> SceneSpec:
    prims = blob.get("primitives")
    if not isinstance(prims, list) or not prims:
        raise InvalidConfig("scene config needs a non-empty 'primitives' list")
    return SceneSpec(primitives=tuple(primitive_from_dict(p) for p in prims))


def load_scene(path: str | Path) -> SceneSpec:
    path = Path(path)
    if not path.is_file():
        raise IoError(f"missing scene config {path}")
    try:
        blob = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise InvalidConfig(f"{path}:{e.lineno}: {e.msg}") from e
    return scene_from_dict(blob)


# --------------------------------------------------------------------------
# dataset read/write

@dataclass(frozen=True)
class DatasetCalib:
    """Everything `calib.json` holds: rig, render settings, frame metadata."""

    rig: RigSpec
    render: RenderConfig
    frames: tuple[dict, ...]  # {"index": int, "seed": int, "delta_t": float}


def write_calib(root: str | Path, rig: RigSpec, render: RenderConfig,
                frames: list[dict]) -> Path:
    path = Path(root) / "calib.json"
    blob = {
        "format": "xstereo-dataset-v1",
        "rig": rig_to_dict(rig),
        "render": render_config_to_dict(render),
        "frames": frames,
    }
    path.write_text(json.dumps(blob, indent=2, sort_keys=True) + "\n")
    return path


def read_calib(root: str | Path) -> DatasetCalib:
    path = Path(root) / "calib.json"
    if not path.is_file():
        raise IoError(f"missing calibration file {path}")
    blob = json.loads(path.read_text())
    return DatasetCalib(
        rig=rig_from_dict(blob["rig"]),
        render=render_config_from_dict(blob["render"]),
        frames=tuple(blob["frames"]),
    )


def write_frame(root: str | Path, index: int, bundle: FrameBundle) -> Path:
    out = frame_dir(root, index)
    out.mkdir(parents=True, exist_ok=True)
    for side, tag in _SIDES:
        stack = bundle.gated[side]
        for k in range(stack.slices.shape[2]):
            save_raster16(out / f"gated_{tag}_slice{k}.png",
                          stack.slices[:, :, k])
        save_raster16(out / f"gated_{tag}_passive.png", stack.ambient_ref)
        save_raster16(out / f"rccb_{tag}_raw.png", bundle.rccb_raw[side])
        save_raster16(out / f"rccb_{tag}_rgb.png", bundle.rccb_rgb[side])
    for view in _VIEWS:
        save_depth_f32(out / f"gt_depth_{view}.f32", bundle.gt_depth[view])
    save_depth_f32(out / "lidar_sparse.f32", bundle.lidar)
    return out


def read_frame(root: str | Path, index: int,
               calib: DatasetCalib) -> FrameBundle:
    """Reconstruct a frame bundle from disk (gt_albedo is not stored)."""
    src = frame_dir(root, index)
    if not src.is_dir():
        raise IoError(f"missing frame directory {src}")
    meta = next((f for f in calib.frames if f["index"] == index), None)
    if meta is None:
        raise IoError(f"frame {index} not listed in calib.json")

    rig = calib.rig
    profiles = calib.render.resolved_profiles()
    dark = np.asarray(calib.render.dark)
    g_shape = (rig.cam_gated.height, rig.cam_gated.width)
    c_shape = (rig.cam_rccb.height, rig.cam_rccb.width)

    gated = {}
    rccb_rgb = {}
    rccb_raw = {}
    for side, tag in _SIDES:
        slices = np.stack(
            [load_raster16(src / f"gated_{tag}_slice{k}.png")
             for k in range(len(profiles))], axis=-1)
        ambient = load_raster16(src / f"gated_{tag}_passive.png")
        if slices.shape[:2] != g_shape or ambient.shape != g_shape:
            raise ShapeMismatch(f"{src}: gated rasters disagree with calib")
        gated[side] = GatedSliceStack(slices, profiles, dark, ambient)
        raw = load_raster16(src / f"rccb_{tag}_raw.png")
        rgb = load_raster16(src / f"rccb_{tag}_rgb.png")
        if raw.shape != c_shape or rgb.shape[:2] != c_shape:
            raise ShapeMismatch(f"{src}: RCCB rasters disagree with calib")
        rccb_raw[side] = raw
        rccb_rgb[side] = rgb

    gt_depth = {}
    for view in _VIEWS:
        shape = g_shape if view.startswith("gated") else c_shape
        gt_depth[view] = load_depth_f32(src / f"gt_depth_{view}.f32", shape)

    poses = {
        "gated_left": rig.pose_gated_left,
        "gated_right": rig.pose_gated_right,
        "rccb_left": displaced_rccb_pose(rig, "left"),
        "rccb_right": displaced_rccb_pose(rig, "right"),
    }
    return FrameBundle(
        rig=rig,
        config=calib.render,
        poses=poses,
        gt_depth=gt_depth,
        gt_albedo={},
        gated=gated,
        rccb_rgb=rccb_rgb,
        rccb_raw=rccb_raw,
        delta_t=float(meta["delta_t"]),
        lidar=load_depth_f32(src / "lidar_sparse.f32", g_shape),
        seed=int(meta["seed"]),
    )
