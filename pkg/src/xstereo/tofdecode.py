"""Metric depth decoding from gated slice stacks.

Each pixel's dark-corrected slice intensities are modeled as

    b_k = albedo * C_k(z) + ambient,   k = 1..K

with per-pixel unknowns (z, albedo >= 0, ambient).  For fixed z the model is
linear, so albedo and ambient are eliminated in closed form from the 2x2
normal equations and the search reduces to a 1-D scan over z (variable
projection).  A coarse grid locates the residual minimum, then golden-section
refinement tightens it below `refine_tol`.

The ambient channel can be softly anchored to a passive ambient estimate
(`decode_depth` uses the stack's `ambient_ref`) with weight `ambient_weight`:
the anchor acts as one extra pseudo-measurement of the ambient.  With K
slices and a free ambient, distinct (z, albedo, ambient) triples can
otherwise reproduce the same K intensities near the edges of slice support,
and the anchor breaks exactly that tie.  Setting the weight to 0 restores
the unanchored fit.

Pixels whose residual profile is flat across the whole search range carry no
range information (e.g. pure-ambient pixels): `fit_pixel` raises
DegenerateSystem for such a pixel, while the bulk `decode_depth` reports it
unfittable instead of raising.  An optional SNR gate additionally rejects
pixels whose peak ambient-corrected signal is below a multiple of the sensor
noise floor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DepthMap
from .errors import DegenerateSystem, InvalidConfig, ShapeMismatch
from .gating import GatedSliceStack, rip_eval

_FLAT_TOL = 1e-12
_DET_TINY = 1e-300
_INVPHI = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class DecodeResult:
    """Decoded range image plus per-pixel fit diagnostics."""

    depth: DepthMap
    albedo_hat: np.ndarray   # fitted backscatter amplitude, >= 0
    ambient_hat: np.ndarray  # fitted ambient offset
    residual: np.ndarray     # RMS of the model fit at the solution, DN
    fittable: np.ndarray     # residual profile actually varies with z
    snr_ok: np.ndarray       # passed the noise-floor gate (all True when unused)

    @property
    def mask(self) -> np.ndarray:
        """Pixels with a usable range estimate (fittable and above the
        noise floor)."""
        return self.depth.mask


def _profile_table(profiles, z: np.ndarray) -> np.ndarray:
    """Stack C_k(z) for every profile: returns (..., K)."""
    return np.stack([rip_eval(p, z) for p in profiles], axis=-1)


def _fit_at(c: np.ndarray, b: np.ndarray, weight: float = 0.0, anchor=0.0):
    """Closed-form least squares of b ~ albedo*c + ambient with albedo >= 0.

    c: (..., K) profile values, b: (..., K) dark-corrected measurements,
    broadcast against each other.  `weight` adds the pseudo-measurement
    weight*(ambient - anchor)^2 to the objective.  Returns
    (albedo, ambient, rss) where rss includes the anchor term.
    """
    k = b.shape[-1]
    s_c = c.sum(axis=-1)
    s_cc = (c * c).sum(axis=-1)
    s_b = b.sum(axis=-1)
    s_cb = (c * b).sum(axis=-1)
    s_bb = (b * b).sum(axis=-1)

    kw = k + weight
    s_b_aug = s_b + weight * anchor
    s_bb_aug = s_bb + weight * anchor * anchor

    det = kw * s_cc - s_c * s_c
    safe = np.where(np.abs(det) > _DET_TINY, det, 1.0)
    albedo = (kw * s_cb - s_c * s_b_aug) / safe
    ambient = (s_cc * s_b_aug - s_c * s_cb) / safe

    # Degenerate system or negative amplitude: fall back to ambient-only.
    bad = (np.abs(det) <= _DET_TINY) | (albedo < 0.0)
    albedo = np.where(bad, 0.0, albedo)
    ambient = np.where(bad, s_b_aug / kw, ambient)

    # Sum the residual explicitly: the normal-equation shortcut
    # s_bb - albedo*s_cb - ambient*s_b cancels catastrophically near perfect
    # fits, which would leave the golden-section comparisons noise-bound.
    r = albedo[..., None] * c + ambient[..., None] - b
    rss = (r * r).sum(axis=-1) + weight * np.square(ambient - anchor)
    return albedo, ambient, rss


def _refine(profiles, b, lo, hi, tol, weight, anchor):
    """Lockstep golden-section minimization of the per-pixel residual over
    per-pixel brackets [lo, hi]."""
    span = float(np.max(hi - lo, initial=0.0))
    iters = 0 if span <= tol else int(np.ceil(np.log(tol / span) / np.log(_INVPHI)))
    a, d = lo.astype(np.float64).copy(), hi.astype(np.float64).copy()
    for _ in range(iters):
        h = d - a
        m1 = a + (1.0 - _INVPHI) * h
        m2 = a + _INVPHI * h
        _, _, r1 = _fit_at(_profile_table(profiles, m1), b, weight, anchor)
        _, _, r2 = _fit_at(_profile_table(profiles, m2), b, weight, anchor)
        left = r1 < r2
        d = np.where(left, m2, d)
        a = np.where(left, a, m1)
    return 0.5 * (a + d)


def _decode_vectors(b, profiles, anchor, weight, z_min, z_max, z_step, refine_tol):
    """Shared grid + golden-section search over dark-corrected pixel vectors.

    b: (N, K), anchor: (N,).  Returns (z, albedo, ambient, rms, fittable)
    where rms is the data-only RMS of the K residuals (the anchor term is
    used for selection but excluded from the reported misfit).
    """
    grid = np.arange(z_min, z_max + 0.5 * z_step, z_step)
    c_table = _profile_table(profiles, grid)                     # (G, K)
    _, _, rss = _fit_at(c_table[None], b[:, None, :], weight, anchor[:, None])
    j = rss.argmin(axis=1)
    fittable = rss.max(axis=1) - rss.min(axis=1) > _FLAT_TOL
    lo = grid[np.maximum(j - 1, 0)]
    hi = grid[np.minimum(j + 1, grid.size - 1)]
    z = _refine(profiles, b, lo, hi, refine_tol, weight, anchor)
    c_fin = _profile_table(profiles, z)
    albedo, ambient, _ = _fit_at(c_fin, b, weight, anchor)
    misfit = albedo[:, None] * c_fin + ambient[:, None] - b
    rms = np.sqrt(np.mean(misfit * misfit, axis=-1))
    return z, albedo, ambient, rms, fittable


def fit_pixel(
    measurements: np.ndarray,
    profiles,
    dark,
    search: tuple[float, float] = (5.0, 220.0),
    z_step: float = 0.5,
    refine_tol: float = 1e-7,
    ambient_ref: float = 0.0,
    ambient_weight: float = 0.0,
) -> tuple[float, float, float, float]:
    """Fit one pixel's K slice intensities; returns (z, albedo, ambient, rms).

    measurements: raw slice values (K,); dark: per-slice offset, scalar or
    (K,); search: (z_min, z_max) range bracket in meters.  At least three
    slices are required to separate range from amplitude and ambient.
    Raises DegenerateSystem when the measurements carry no range information
    (residual flat over the whole search range).
    """
    m = np.asarray(measurements, dtype=np.float64)
    if m.ndim != 1:
        raise ShapeMismatch(f"expected a single pixel's (K,) slice vector, got {m.shape}")
    if m.size < 3 or len(profiles) != m.size:
        raise DegenerateSystem(
            "need K >= 3 slices (one profile per slice) to separate range, "
            f"amplitude and ambient; got {m.size} slices, {len(profiles)} profiles"
        )
    z_min, z_max = float(search[0]), float(search[1])
    if not (0.0 < z_min < z_max):
        raise InvalidConfig("need 0 < z_min < z_max")
    if z_step <= 0.0 or refine_tol <= 0.0:
        raise InvalidConfig("z_step and refine_tol must be positive")
    b = (m - np.asarray(dark, dtype=np.float64))[None, :]
    anchor = np.asarray([float(ambient_ref)])
    z, albedo, ambient, rms, fittable = _decode_vectors(
        b, profiles, anchor, float(ambient_weight), z_min, z_max, z_step, refine_tol
    )
    if not fittable[0]:
        raise DegenerateSystem("pixel carries no range information (flat residual)")
    return float(z[0]), float(albedo[0]), float(ambient[0]), float(rms[0])


def snr_mask(
    slices: np.ndarray,
    ambient_hat: np.ndarray,
    dark,
    noise_sigma: float,
    threshold: float = 3.0,
) -> np.ndarray:
    """Pixels whose strongest ambient- and dark-corrected slice clears the
    noise floor: max_k(slice_k - dark_k - ambient) > threshold * sigma."""
    if noise_sigma <= 0.0:
        raise InvalidConfig("noise_sigma must be positive")
    corrected = np.asarray(slices, dtype=np.float64) - np.asarray(dark, dtype=np.float64)
    peak = corrected.max(axis=-1) - np.asarray(ambient_hat, dtype=np.float64)
    return peak > threshold * noise_sigma


def decode_depth(
    stack: GatedSliceStack,
    z_min: float = 5.0,
    z_max: float = 220.0,
    z_step: float = 0.5,
    refine_tol: float = 1e-7,
    ambient_weight: float = 1.0,
    noise_sigma: float | None = None,
    snr_threshold: float = 3.0,
    block: int = 2048,
) -> DecodeResult:
    """Decode a gated stack to metric depth via variable projection."""
    if not (0.0 < z_min < z_max):
        raise InvalidConfig("need 0 < z_min < z_max")
    if z_step <= 0.0 or refine_tol <= 0.0:
        raise InvalidConfig("z_step and refine_tol must be positive")
    if ambient_weight < 0.0:
        raise InvalidConfig("ambient_weight must be non-negative")
    if stack.num_slices < 3:
        raise InvalidConfig("need at least three slices to separate range, amplitude and ambient")

    h, w, k = stack.slices.shape
    b_all = (stack.slices - stack.dark).reshape(-1, k)      # (N, K)
    anchor_all = stack.ambient_ref.reshape(-1)
    n = b_all.shape[0]

    z_hat = np.empty(n)
    albedo = np.empty(n)
    ambient = np.empty(n)
    residual = np.empty(n)
    fittable = np.empty(n, dtype=bool)

    for start in range(0, n, block):
        sl = slice(start, min(start + block, n))
        z_hat[sl], albedo[sl], ambient[sl], residual[sl], fittable[sl] = _decode_vectors(
            b_all[sl], stack.profiles, anchor_all[sl], ambient_weight,
            z_min, z_max, z_step, refine_tol,
        )

    snr_ok = np.ones(n, dtype=bool)
    if noise_sigma is not None:
        snr_ok = snr_mask(
            stack.slices.reshape(-1, k), ambient, stack.dark, noise_sigma, snr_threshold
        )

    valid = fittable & snr_ok
    values = np.where(valid, z_hat, np.nan).reshape(h, w)
    return DecodeResult(
        depth=DepthMap(values, valid.reshape(h, w)),
        albedo_hat=albedo.reshape(h, w),
        ambient_hat=ambient.reshape(h, w),
        residual=residual.reshape(h, w),
        fittable=fittable.reshape(h, w),
        snr_ok=snr_ok.reshape(h, w),
    )
