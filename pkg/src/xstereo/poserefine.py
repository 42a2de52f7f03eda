"""Photometric pose refinement driven by a measured capture-time offset.

The secondary camera fires `delta_t` seconds after the reference camera,
so whatever misalignment the offset caused must be explainable as rig
motion over that interval.  We therefore do not optimize a free SE(3)
correction: the unknown is a *velocity* twist nu (units per second) and
the refined extrinsic is

    X_refined = X_init . exp(delta_t * nu).

A zero measured offset can never move the pose, no matter what the images
say -- the correction is parameterized by the physics rather than fitted.

The solver is Levenberg-Marquardt on a Huber-robustified photometric
residual between target features and source features warped through the
target depth, run coarse-to-fine.  Per-pixel terms are accumulated in a
fixed tile order so the normal equations are bit-reproducible regardless
of how the underlying array library schedules its work.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    CameraModel,
    DepthMap,
    Image,
    RigidTransform,
    avgpool2,
    compose,
    exp_twist,
)
from .errors import Diverged, InsufficientValidPixels, InvalidConfig, ShapeMismatch

MIN_VALID_PIXELS = 100
"""Fewest valid target-depth pixels the refinement will accept."""

_TILE_ROWS = 8192
"""Rows per accumulation tile; summation runs tile-by-tile in index order."""

# Damping beyond this means rejected steps have shrunk to nothing useful.
_LAMBDA_CEILING = 1e14


@dataclass(frozen=True)
class PoseRefineConfig:
    """Levenberg-Marquardt settings for `refine_pose`."""

    max_iters: int = 30
    lm_lambda0: float = 1e-3
    lambda_up: float = 10.0
    lambda_down: float = 0.5
    convergence_tol: float = 1e-7
    huber_delta: float = 0.1
    pyramid_levels: int = 3

    def __post_init__(self):
        numeric = {
            "max_iters": self.max_iters,
            "lm_lambda0": self.lm_lambda0,
            "lambda_up": self.lambda_up,
            "lambda_down": self.lambda_down,
            "convergence_tol": self.convergence_tol,
            "huber_delta": self.huber_delta,
            "pyramid_levels": self.pyramid_levels,
        }
        for name, value in numeric.items():
            if value <= 0:
                raise InvalidConfig(f"{name} must be positive, got {value}")
        if self.pyramid_levels < 1:
            raise InvalidConfig("pyramid_levels must be >= 1")


def _sample_with_grad(data: np.ndarray, uv: np.ndarray):
    """Bilinear sample plus the exact in-cell derivative of the interpolant.

    Returns (values, d/du, d/dv, in_bounds), each (N, C) except the mask.
    The derivatives are those of the bilinear surface itself (piecewise
    linear per cell), which is what a finite-difference probe of the
    sampled values sees, so gradient checks against this sampler are exact
    away from cell boundaries.
    """
    h, w, _ = data.shape
    u = uv[..., 0]
    v = uv[..., 1]
    inb = (u >= 0.0) & (u <= w - 1.0) & (v >= 0.0) & (v <= h - 1.0)

    uc = np.clip(u, 0.0, w - 1.0)
    vc = np.clip(v, 0.0, h - 1.0)
    u0 = np.floor(uc).astype(np.int64)
    v0 = np.floor(vc).astype(np.int64)
    u0 = np.minimum(u0, w - 2) if w > 1 else u0
    v0 = np.minimum(v0, h - 2) if h > 1 else v0
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
    values = top * (1.0 - fv) + bot * fv
    du = (i01 - i00) * (1.0 - fv) + (i11 - i10) * fv
    dv = bot - top
    keep = inb[..., None]
    return (
        np.where(keep, values, 0.0),
        np.where(keep, du, 0.0),
        np.where(keep, dv, 0.0),
        inb,
    )


def _hat_stack(pts: np.ndarray) -> np.ndarray:
    """Per-row skew matrices: (N, 3) -> (N, 3, 3)."""
    n = pts.shape[0]
    out = np.zeros((n, 3, 3))
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    out[:, 0, 1] = -z
    out[:, 0, 2] = y
    out[:, 1, 0] = z
    out[:, 1, 2] = -x
    out[:, 2, 0] = -y
    out[:, 2, 1] = x
    return out


def linearize_residual(
    f_target: Image,
    f_src: Image,
    depth_target: DepthMap,
    x_cur: RigidTransform,
    delta_t: float,
    cams: tuple[CameraModel, CameraModel],
    pixels: np.ndarray | None = None,
):
    """Residual and its Jacobian w.r.t. an incremental velocity twist.

    The model perturbs the current transform multiplicatively on the
    right, X(d) = x_cur . exp(delta_t * d), and linearizes at d = 0, where
    the SE(3) exponential's Jacobian is the identity and the chain rule is
    exact.  Returns (r, J, valid, uv):

    * r: (N, C) photometric residual F_target - F_src(warp(.)),
    * J: (N, C, 6) analytic d r / d d,
    * valid: (N,) pixels with valid depth landing in-bounds in the source,
    * uv: (N, 2) source coordinates.

    `pixels` optionally restricts evaluation to an (N, 2) list of integer
    (u, v) target coordinates; by default every target pixel is used.
    Rows where `valid` is False carry zero residual and Jacobian.
    """
    cam_t, cam_s = cams
    h, w = depth_target.shape
    if (f_target.height, f_target.width) != (h, w):
        raise ShapeMismatch(
            f"target features {f_target.height}x{f_target.width} != depth {h}x{w}"
        )
    if f_target.channels != f_src.channels:
        raise ShapeMismatch(
            f"feature channels differ: {f_target.channels} vs {f_src.channels}"
        )

    if pixels is None:
        uu, vv = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
        pix = np.stack([uu.ravel(), vv.ravel()], axis=-1)
        depth_vals = depth_target.values.ravel()
        depth_ok = depth_target.mask.ravel()
        target_vals = f_target.data.reshape(-1, f_target.channels)
    else:
        pix = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
        iu = pix[:, 0].astype(np.int64)
        iv = pix[:, 1].astype(np.int64)
        depth_vals = depth_target.values[iv, iu]
        depth_ok = depth_target.mask[iv, iu]
        target_vals = f_target.data[iv, iu, :]

    z = np.where(depth_ok, depth_vals, 1.0)
    p_t = np.stack(
        [
            (pix[:, 0] - cam_t.cx) / cam_t.fx * z,
            (pix[:, 1] - cam_t.cy) / cam_t.fy * z,
            z,
        ],
        axis=-1,
    )
    p_s = p_t @ x_cur.rotation.T + x_cur.translation
    zs = p_s[:, 2]
    in_front = zs > 1e-9
    zs_safe = np.where(in_front, zs, 1.0)
    uv = np.stack(
        [
            cam_s.fx * p_s[:, 0] / zs_safe + cam_s.cx,
            cam_s.fy * p_s[:, 1] / zs_safe + cam_s.cy,
        ],
        axis=-1,
    )

    vals, du, dv, inb = _sample_with_grad(f_src.data, uv)
    valid = depth_ok & in_front & inb
    r = np.where(valid[:, None], target_vals - vals, 0.0)

    # d p_s / d d = delta_t * R_cur @ [-hat(p_t) | I]  (3 x 6 per pixel).
    n = pix.shape[0]
    g = np.zeros((n, 3, 6))
    g[:, :, :3] = -_hat_stack(p_t)
    g[:, :, 3:] = np.eye(3)
    dps = delta_t * np.einsum("ij,njk->nik", x_cur.rotation, g, optimize=False)

    # d uv / d p_s for a pinhole projection.
    inv_z = 1.0 / zs_safe
    duv = np.zeros((n, 2, 3))
    duv[:, 0, 0] = cam_s.fx * inv_z
    duv[:, 0, 2] = -cam_s.fx * p_s[:, 0] * inv_z * inv_z
    duv[:, 1, 1] = cam_s.fy * inv_z
    duv[:, 1, 2] = -cam_s.fy * p_s[:, 1] * inv_z * inv_z

    a = np.einsum("nij,njk->nik", duv, dps, optimize=False)  # (N, 2, 6)
    # r = F_t - F_s(uv): d r / d d = -(dF/du * du/dd + dF/dv * dv/dd).
    jac = -(du[:, :, None] * a[:, None, 0, :] + dv[:, :, None] * a[:, None, 1, :])
    jac = np.where(valid[:, None, None], jac, 0.0)
    return r, jac, valid, uv


def _huber_cost(r: np.ndarray, valid: np.ndarray, delta: float) -> float:
    """Mean Huber penalty over valid residual entries."""
    vals = r[valid]
    if vals.size == 0:
        return 0.0
    a = np.abs(vals)
    quad = a <= delta
    per = np.where(quad, 0.5 * a * a, delta * (a - 0.5 * delta))
    return float(per.mean())


def _accumulate_normal_eqs(r: np.ndarray, jac: np.ndarray, valid: np.ndarray, delta: float):
    """Huber-weighted J^T W J and J^T W r, summed over fixed row tiles.

    Tiles are reduced sequentially in index order so the result is
    independent of any parallelism in the elementwise work above.
    """
    rows = r[valid]
    jrows = jac[valid]
    if rows.size == 0:
        return np.zeros((6, 6)), np.zeros(6), 0
    rflat = rows.reshape(-1)
    jflat = jrows.reshape(-1, 6)
    a = np.abs(rflat)
    wgt = np.where(a <= delta, 1.0, delta / np.maximum(a, 1e-300))

    hess = np.zeros((6, 6))
    grad = np.zeros(6)
    for start in range(0, rflat.size, _TILE_ROWS):
        sl = slice(start, start + _TILE_ROWS)
        jw = jflat[sl] * wgt[sl, None]
        hess += np.einsum("ni,nj->ij", jw, jflat[sl], optimize=False)
        grad += np.einsum("ni,n->i", jw, rflat[sl], optimize=False)
    return hess, grad, rows.shape[0]


def _pool_depth(depth: DepthMap) -> DepthMap:
    """Halve a depth map; a coarse pixel is valid iff all four fine ones are."""
    h, w = depth.shape
    he, we = h - h % 2, w - w % 2
    vals = np.where(depth.mask, depth.values, 0.0)[:he, :we]
    mask = depth.mask[:he, :we]
    pooled_mask = mask[0::2, 0::2] & mask[0::2, 1::2] & mask[1::2, 0::2] & mask[1::2, 1::2]
    pooled_vals = avgpool2(vals)
    return DepthMap(np.where(pooled_mask, pooled_vals, np.nan), pooled_mask)


def _pool_features(img: Image) -> Image:
    h, w = img.height, img.width
    return Image(avgpool2(img.data[: h - h % 2, : w - w % 2]))


def refine_pose(
    f_target: Image,
    f_src: Image,
    depth_target: DepthMap,
    x_init: RigidTransform,
    delta_t: float,
    cams: tuple[CameraModel, CameraModel],
    cfg: PoseRefineConfig | None = None,
) -> tuple[RigidTransform, float, int]:
    """Recover the velocity twist explaining a time-offset misalignment.

    Minimizes sum huber(F_target(x) - warp(F_src; X_init . exp(delta_t*nu))(x))
    over nu in R^6, coarse-to-fine, and returns (X_refined, final mean
    robust cost, total candidate evaluations).  `cams` is the
    (target camera, source camera) pair; `depth_target` drives the warp.

    Raises InsufficientValidPixels when fewer than 100 target-depth pixels
    are valid, and Diverged when cfg.max_iters consecutive candidate steps
    all increase the cost.
    """
    cfg = cfg or PoseRefineConfig()
    if not math.isfinite(delta_t):
        raise InvalidConfig(f"delta_t must be finite, got {delta_t}")
    n_valid = int(depth_target.mask.sum())
    if n_valid < MIN_VALID_PIXELS:
        raise InsufficientValidPixels(
            f"pose refinement needs >= {MIN_VALID_PIXELS} valid depth pixels, got {n_valid}"
        )

    cam_t, cam_s = cams

    # Build the pyramids (finest first).  Levels stop early if a raster
    # becomes too small to pool meaningfully.
    tgt_levels: list[Image] = [f_target]
    src_levels: list[Image] = [f_src]
    depth_levels: list[DepthMap] = [depth_target]
    cam_t_levels: list[CameraModel] = [cam_t]
    cam_s_levels: list[CameraModel] = [cam_s]
    for _ in range(cfg.pyramid_levels - 1):
        prev = tgt_levels[-1]
        if prev.height < 8 or prev.width < 8:
            break
        tgt_levels.append(_pool_features(tgt_levels[-1]))
        src_levels.append(_pool_features(src_levels[-1]))
        depth_levels.append(_pool_depth(depth_levels[-1]))
        cam_t_levels.append(cam_t_levels[-1].scaled(0.5))
        cam_s_levels.append(cam_s_levels[-1].scaled(0.5))

    x_cur = x_init
    total_evals = 0
    final_cost = 0.0

    for level in reversed(range(len(tgt_levels))):
        ft = tgt_levels[level]
        fs = src_levels[level]
        dep = depth_levels[level]
        level_cams = (cam_t_levels[level], cam_s_levels[level])
        if int(dep.mask.sum()) < MIN_VALID_PIXELS and level > 0:
            continue  # pooled too thin; the finer levels still run

        lam = cfg.lm_lambda0
        r, jac, valid, _ = linearize_residual(ft, fs, dep, x_cur, delta_t, level_cams)
        cost = _huber_cost(r, valid, cfg.huber_delta)
        rejected_run = 0

        for _ in range(cfg.max_iters):
            hess, grad, nrows = _accumulate_normal_eqs(r, jac, valid, cfg.huber_delta)
            if nrows == 0:
                break
            step = np.linalg.solve(hess + lam * np.eye(6), -grad)
            if np.linalg.norm(step) < cfg.convergence_tol:
                break  # no meaningful update left at this damping
            candidate = compose(x_cur, exp_twist(delta_t * step))
            r_new, jac_new, valid_new, _ = linearize_residual(
                ft, fs, dep, candidate, delta_t, level_cams
            )
            cost_new = _huber_cost(r_new, valid_new, cfg.huber_delta)
            total_evals += 1
            if cost_new < cost:
                x_cur, cost = candidate, cost_new
                r, jac, valid = r_new, jac_new, valid_new
                lam = max(lam * cfg.lambda_down, 1e-15)
                rejected_run = 0
                if np.linalg.norm(step) < cfg.convergence_tol:
                    break
            else:
                lam *= cfg.lambda_up
                rejected_run += 1
                if rejected_run >= cfg.max_iters:
                    raise Diverged(
                        f"cost increased for {rejected_run} consecutive steps "
                        f"(cost {cost:.6g}, lambda {lam:.3g})"
                    )
                if lam > _LAMBDA_CEILING:
                    break
        final_cost = cost

    return x_cur, final_cost, total_evals
