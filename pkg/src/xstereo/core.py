"""Core geometric primitives: cameras, rigid transforms, rasters, sampling.

Conventions used throughout the toolkit:

* Camera frame: +x right, +y down, +z forward (optical axis).
* Pixel coordinates (u, v): u indexes columns, v indexes rows, and the
  *center* of pixel (i, j) sits at the integer coordinate (u=j, v=i).
* Raster arrays are indexed ``data[v, u, channel]``.
* Depth is the z-coordinate of a point in the camera frame (plane-parallel
  depth), not the Euclidean ray length.
* Twists are 6-vectors ``[wx, wy, wz, vx, vy, vz]``: rotational part first
  (radians), translational part last (meters).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonPositiveDepth, ShapeMismatch

# Rotation matrices must satisfy R^T R = I to this tolerance.
_ORTHO_TOL = 1e-9

# Below this angle (radians) the exp/log trigonometric coefficients switch
# to their Taylor series to avoid catastrophic cancellation.
_SMALL_ANGLE = 1e-8


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera intrinsics plus raster dimensions.

    Focal lengths and principal point are in pixels; no distortion model
    (all rasters in this toolkit are synthetic and rectified).
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"raster dimensions must be positive, got ({self.width}, {self.height})")

    @property
    def K(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def scaled(self, factor: float) -> "CameraModel":
        """Intrinsics for the same field of view resampled by `factor`.

        Follows the resampling convention of `resize_bilinear`: destination
        pixel u' sees the source at u = (u' + 0.5)/factor - 0.5, hence
        cx' = factor*cx + (factor-1)/2.
        """
        return CameraModel(
            fx=self.fx * factor,
            fy=self.fy * factor,
            cx=self.cx * factor + (factor - 1.0) / 2.0,
            cy=self.cy * factor + (factor - 1.0) / 2.0,
            width=int(round(self.width * factor)),
            height=int(round(self.height * factor)),
        )


def _check_rotation(rotation: np.ndarray) -> None:
    if rotation.shape != (3, 3):
        raise ShapeMismatch(f"rotation must be 3x3, got {rotation.shape}")
    err = np.abs(rotation.T @ rotation - np.eye(3)).max()
    if err > _ORTHO_TOL:
        raise ValueError(f"rotation is not orthonormal (max |R^T R - I| = {err:.3e})")
    if np.linalg.det(rotation) < 0.0:
        raise ValueError("rotation has negative determinant (reflection)")


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) element mapping points between frames: p_out = R @ p_in + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rotation = np.ascontiguousarray(np.asarray(self.rotation, dtype=np.float64))
        translation = np.ascontiguousarray(np.asarray(self.translation, dtype=np.float64).reshape(3))
        _check_rotation(rotation)
        if not np.all(np.isfinite(translation)):
            raise ValueError("translation must be finite")
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_translation(cls, t) -> "RigidTransform":
        return cls(np.eye(3), np.asarray(t, dtype=np.float64))

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an (..., 3) array of points."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Composition a∘b: (a∘b)(p) = a(b(p))."""
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(x: RigidTransform) -> RigidTransform:
    rt = x.rotation.T
    return RigidTransform(rt, -rt @ x.translation)


def hat(w: np.ndarray) -> np.ndarray:
    """Skew-symmetric cross-product matrix of a 3-vector."""
    wx, wy, wz = w
    return np.array([[0.0, -wz, wy], [wz, 0.0, -wx], [-wy, wx, 0.0]])


def _exp_coefficients(theta: float) -> tuple[float, float, float]:
    """(sinθ/θ, (1-cosθ)/θ², (θ-sinθ)/θ³) with series fallbacks near zero."""
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        return 1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0
    t2 = theta * theta
    return np.sin(theta) / theta, (1.0 - np.cos(theta)) / t2, (theta - np.sin(theta)) / (t2 * theta)


def exp_twist(nu: np.ndarray) -> RigidTransform:
    """SE(3) exponential of a twist [w, v] (rotation first, translation last)."""
    nu = np.asarray(nu, dtype=np.float64).reshape(6)
    w, v = nu[:3], nu[3:]
    theta = float(np.linalg.norm(w))
    W = hat(w)
    a, b, c = _exp_coefficients(theta)
    R = np.eye(3) + a * W + b * (W @ W)
    V = np.eye(3) + b * W + c * (W @ W)
    # Re-orthonormalize to keep RigidTransform's validation happy under
    # accumulated rounding (projection via SVD changes R by < 1e-12 here).
    u, _, vt = np.linalg.svd(R)
    R = u @ vt
    return RigidTransform(R, V @ v)


def log_twist(x: RigidTransform) -> np.ndarray:
    """Inverse of `exp_twist`; returns the twist [w, v] with |w| in [0, π]."""
    R = x.rotation
    cos_theta = np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0)
    theta = float(np.arccos(cos_theta))
    if theta < _SMALL_ANGLE:
        w = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    elif theta > np.pi - 1e-6:
        # Near π the antisymmetric part vanishes; recover the axis from the
        # dominant diagonal of R + I.
        B = (R + np.eye(3)) * 0.5
        axis = np.sqrt(np.clip(np.diag(B), 0.0, None))
        k = int(np.argmax(axis))
        axis = B[:, k] / max(axis[k], 1e-12)
        axis = axis / np.linalg.norm(axis)
        # Fix the sign using the antisymmetric residue.
        s = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        if np.dot(s, axis) < 0.0:
            axis = -axis
        w = theta * axis
    else:
        w = theta / (2.0 * np.sin(theta)) * np.array(
            [R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]
        )
    W = hat(w)
    if theta < _SMALL_ANGLE:
        Vinv = np.eye(3) - 0.5 * W + (W @ W) / 12.0
    else:
        # V^{-1} = I - W/2 + (1/θ² - (1+cosθ)/(2θ sinθ)) W²
        coef = 1.0 / (theta * theta) - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
        Vinv = np.eye(3) - 0.5 * W + coef * (W @ W)
    v = Vinv @ x.translation
    return np.concatenate([w, v])


@dataclass(frozen=True)
class Image:
    """A float raster with shape (height, width, channels), values finite."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3:
            raise ShapeMismatch(f"image data must be 2-D or 3-D, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("image data must be finite")
        object.__setattr__(self, "data", np.ascontiguousarray(data))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


def _check_map_pair(values: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    values = np.ascontiguousarray(np.asarray(values, dtype=np.float64))
    mask = np.ascontiguousarray(np.asarray(mask, dtype=bool))
    if values.ndim != 2:
        raise ShapeMismatch(f"values must be 2-D, got shape {values.shape}")
    if mask.shape != values.shape:
        raise ShapeMismatch(f"mask shape {mask.shape} != values shape {values.shape}")
    return values, mask


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel z-depth in meters with a validity mask.

    Valid pixels are finite and strictly positive; invalid pixels may hold
    any placeholder (NaN when serialized).
    """

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        values, mask = _check_map_pair(self.values, self.mask)
        valid = values[mask]
        if valid.size and (not np.all(np.isfinite(valid)) or np.any(valid <= 0.0)):
            raise ValueError("depth must be finite and > 0 at valid pixels")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class DisparityMap:
    """Per-pixel horizontal disparity in pixels with a validity mask."""

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        values, mask = _check_map_pair(self.values, self.mask)
        valid = values[mask]
        if valid.size and (not np.all(np.isfinite(valid)) or np.any(valid < 0.0)):
            raise ValueError("disparity must be finite and >= 0 at valid pixels")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def project(cam: CameraModel, xyz: np.ndarray, strict: bool = True) -> np.ndarray:
    """Project camera-frame points (..., 3) to pixel coordinates (..., 2).

    With strict=True a point at z <= 0 raises NonPositiveDepth; with
    strict=False such points yield NaN coordinates instead (callers that
    warp whole rasters mask them out).
    """
    pts = np.asarray(xyz, dtype=np.float64)
    if pts.shape[-1] != 3:
        raise ShapeMismatch(f"points must have a trailing dimension of 3, got {pts.shape}")
    z = pts[..., 2]
    if strict:
        if np.any(z <= 0.0):
            raise NonPositiveDepth("cannot project points with z <= 0")
        zz = z
    else:
        zz = np.where(z > 0.0, z, np.nan)
    u = cam.fx * pts[..., 0] / zz + cam.cx
    v = cam.fy * pts[..., 1] / zz + cam.cy
    return np.stack([u, v], axis=-1)


def backproject(cam: CameraModel, uv: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Lift pixels (..., 2) at depth z (...) to camera-frame points (..., 3)."""
    uv = np.asarray(uv, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if uv.shape[-1] != 2:
        raise ShapeMismatch(f"uv must have a trailing dimension of 2, got {uv.shape}")
    x = (uv[..., 0] - cam.cx) / cam.fx * z
    y = (uv[..., 1] - cam.cy) / cam.fy * z
    return np.stack([x, y, np.broadcast_to(z, x.shape)], axis=-1)


def pixel_grid(width: int, height: int) -> np.ndarray:
    """(H, W, 2) array of pixel-center coordinates (u, v)."""
    u, v = np.meshgrid(np.arange(width, dtype=np.float64), np.arange(height, dtype=np.float64))
    return np.stack([u, v], axis=-1)


def bilinear_sample(img: Image | np.ndarray, uv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sample an image at fractional pixel coordinates.

    Returns (values, in_bounds): values has shape uv.shape[:-1] + (C,) and is
    zero wherever in_bounds is False.  A coordinate is in bounds when
    0 <= u <= W-1 and 0 <= v <= H-1; at the far edge the interpolation
    weight of the phantom neighbor is exactly zero, so edge samples are
    still exact.
    """
    data = img.data if isinstance(img, Image) else np.asarray(img, dtype=np.float64)
    if data.ndim == 2:
        data = data[:, :, None]
    h, w = data.shape[:2]
    uv = np.asarray(uv, dtype=np.float64)
    u = uv[..., 0]
    v = uv[..., 1]
    inb = (u >= 0.0) & (u <= w - 1.0) & (v >= 0.0) & (v <= h - 1.0)

    uc = np.clip(u, 0.0, w - 1.0)
    vc = np.clip(v, 0.0, h - 1.0)
    u0 = np.floor(uc).astype(np.int64)
    v0 = np.floor(vc).astype(np.int64)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = (uc - u0)[..., None]
    fv = (vc - v0)[..., None]

    flat = data.reshape(-1, data.shape[2])
    i00 = flat[v0 * w + u0]
    i01 = flat[v0 * w + u1]
    i10 = flat[v1 * w + u0]
    i11 = flat[v1 * w + u1]
    top = i00 * (1.0 - fu) + i01 * fu
    bot = i10 * (1.0 - fu) + i11 * fu
    out = top * (1.0 - fv) + bot * fv
    out = np.where(inb[..., None], out, 0.0)
    return out, inb


def resize_bilinear(data: np.ndarray, height: int, width: int) -> np.ndarray:
    """Resample a (H, W[, C]) array to (height, width[, C]).

    Destination pixel centers map to source coordinates via
    u_src = (u_dst + 0.5) * W_src / W_dst - 0.5, matching
    `CameraModel.scaled`.  Edges clamp.
    """
    src = np.asarray(data, dtype=np.float64)
    squeeze = src.ndim == 2
    if squeeze:
        src = src[:, :, None]
    h, w = src.shape[:2]
    u = (np.arange(width, dtype=np.float64) + 0.5) * (w / width) - 0.5
    v = (np.arange(height, dtype=np.float64) + 0.5) * (h / height) - 0.5
    uv = np.stack(np.meshgrid(u, v), axis=-1)
    uv[..., 0] = np.clip(uv[..., 0], 0.0, w - 1.0)
    uv[..., 1] = np.clip(uv[..., 1], 0.0, h - 1.0)
    out, _ = bilinear_sample(src, uv)
    return out[:, :, 0] if squeeze else out


def avgpool2(data: np.ndarray) -> np.ndarray:
    """Downsample a (H, W[, C]) array by exact 2x2 averaging."""
    from .errors import OddDimensions

    src = np.asarray(data, dtype=np.float64)
    h, w = src.shape[:2]
    if h % 2 or w % 2:
        raise OddDimensions(f"2x2 pooling needs even dimensions, got {h}x{w}")
    if src.ndim == 2:
        return 0.25 * (src[0::2, 0::2] + src[0::2, 1::2] + src[1::2, 0::2] + src[1::2, 1::2])
    return 0.25 * (src[0::2, 0::2] + src[0::2, 1::2] + src[1::2, 0::2] + src[1::2, 1::2])
