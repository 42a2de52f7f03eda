"""Command-line entry point.

Subcommands: `simulate` renders synthetic datasets to disk, `decode` runs
the gated ToF inversion, `estimate` runs stereo matching in one of the
three modes, `evaluate` scores predicted depth against ground truth, and
`benchmark` chains the whole day/night x mode matrix into a summary table
with plots.

Every flag has a config-file equivalent (JSON, same key names) and an
environment override `XSTEREO_<NAME>`; precedence is flag > env > config
file > default.  All commands are deterministic given seed + config,
regardless of --threads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import dataio
from .core import CameraModel, DepthMap, RigidTransform
from .errors import InvalidConfig, IoError, XStereoError
from .eval import DEFAULT_BUCKETS, EvalReport, bucketed_report
from .gating import EXPOSURE_REF
from .geometry import disparity_to_depth
from .matching import MODES, estimate_disparity
from .scenesim import (
    Primitive,
    RenderConfig,
    RigSpec,
    SceneSpec,
    TextureSpec,
    render_bundle,
)
from .tofdecode import decode_depth

PRESETS = ("day", "night")


def benchmark_rig() -> RigSpec:
    """Long-range rig: narrow-FOV gated pair at 160x96 (fx = 600 px, about
    15 deg), RCCB pair at twice the resolution, 0.76 m baselines, RCCB
    offset sideways and 20 ms late on a rig moving 1 m/s forward.

    The narrow FOV is what makes a 220 m working range meaningful at this
    raster size: at fx = 600 the far wall still subtends ~2.5 px of
    disparity on the gated grid (5 px on the RCCB grid)."""
    w, h = 160, 96
    cam_g = CameraModel(fx=600.0, fy=600.0, cx=(w - 1) / 2.0,
                        cy=(h - 1) / 2.0, width=w, height=h)
    eye = np.eye(3)
    baseline = 0.76
    return RigSpec(
        cam_gated=cam_g,
        cam_rccb=cam_g.scaled(2.0),
        pose_gated_left=RigidTransform(eye, [0.0, 0.0, 0.0]),
        pose_gated_right=RigidTransform(eye, [baseline, 0.0, 0.0]),
        pose_rccb_left=RigidTransform(eye, [0.05, -0.06, 0.02]),
        pose_rccb_right=RigidTransform(eye, [0.05 + baseline, -0.06, 0.02]),
        baseline_gated=baseline,
        baseline_rccb=baseline,
        time_offset_truth=0.02,
        rig_velocity=(0.0, 0.0, 0.0, 0.0, 0.0, 1.0),
    )


def preset_render_config(preset: str) -> RenderConfig:
    """Radiometry + sensor noise for the two lighting regimes.

    Night: almost no ambient light, full laser power, RCCB exposure pushed
    4x and still starved (strong read noise, low full-well).  Day: bright
    ambient, laser at a third of its power against the sun, RCCB at base
    exposure with a deep full well.
    """
    if preset == "night":
        return RenderConfig(
            ambient_level=0.02,
            amplitude_scale=1.0,
            exposure=4.0 * EXPOSURE_REF,
            gated_noise=(0.003, 5000.0),
            rccb_noise=(0.005, 1200.0),
        )
    if preset == "day":
        return RenderConfig(
            ambient_level=1.0,
            amplitude_scale=0.3,
            exposure=EXPOSURE_REF,
            gated_noise=(0.003, 5000.0),
            rccb_noise=(0.001, 20000.0),
        )
    raise InvalidConfig(f"preset must be one of {PRESETS}, got {preset!r}")


def benchmark_scene(variant: int) -> SceneSpec:
    """Built-in scene family: far wall, ground patch, mid-range obstacles.

    The same layout with per-variant texture seeds, so every frame of a
    dataset sees fresh surface detail while geometry and radiometry stay
    fixed.  Both spectral bands share each surface's texture (correlated
    appearance, as for real materials).  Nothing sits nearer than ~55 m:
    the matcher's coarsest pyramid level must keep peak disparity inside
    its search radius.
    """
    s = 9000 + 1000 * variant

    def tex(seed, scale, lo=0.1, hi=0.95):
        return TextureSpec(kind="noise", scale=scale, lo=lo, hi=hi,
                           seed=seed, octaves=4)

    return SceneSpec(primitives=(
        # back wall: dominates the [100, 220) bucket
        Primitive("plane", tex(s + 1, 14.0), point=(0.0, 0.0, 185.0),
                  normal=(0.0, 0.0, -1.0)),
        # ground patch 3 m below the rig, spanning z = 60..180 m
        Primitive("plane", tex(s + 2, 7.0), point=(0.0, 3.0, 120.0),
                  normal=(0.0, -1.0, 0.0), extent=60.0),
        Primitive("sphere", tex(s + 3, 2.2), center=(4.0, 1.2, 62.0),
                  radius=2.5),
        Primitive("box", tex(s + 4, 3.0), center=(-7.0, 0.2, 75.0),
                  half_extents=(3.0, 2.8, 3.0)),
        Primitive("box", tex(s + 5, 4.5), center=(9.0, -0.8, 110.0),
                  half_extents=(4.5, 3.5, 4.0)),
        Primitive("sphere", tex(s + 6, 5.0), center=(-6.0, -1.5, 150.0),
                  radius=5.5),
    ))


# --------------------------------------------------------------------------
# settings resolution: flag > env > config file > default

_MISSING = object()


class Settings:
    def __init__(self, args: argparse.Namespace):
        self._cli = vars(args)
        config_path = self._raw("config", str)
        self._file = {}
        if config_path is not None:
            path = Path(config_path)
            if not path.is_file():
                raise IoError(f"missing config file {path}")
            try:
                self._file = json.loads(path.read_text())
            except json.JSONDecodeError as e:
                raise InvalidConfig(f"{path}:{e.lineno}: {e.msg}") from e
            if not isinstance(self._file, dict):
                raise InvalidConfig(f"{path}: config must be a JSON object")

    def _raw(self, name: str, cast):
        cli = self._cli.get(name)
        if cli is not None:
            return cli
        env = os.environ.get("XSTEREO_" + name.upper())
        if env is not None:
            try:
                return cast(env)
            except ValueError as e:
                raise InvalidConfig(f"XSTEREO_{name.upper()}={env!r}: {e}")
        return None

    def get(self, name: str, default, cast=str):
        value = self._raw(name, cast)
        if value is not None:
            return value
        if name in self._file:
            value = self._file[name]
            if value is None:
                return default
            try:
                return cast(value)
            except (TypeError, ValueError) as e:
                raise InvalidConfig(f"config key {name!r}: {e}")
        if default is _MISSING:
            raise InvalidConfig(f"missing required setting {name!r}")
        return default


# --------------------------------------------------------------------------
# frame-parallel helper

def _run_frames(worker, indices, threads: int) -> list:
    """Apply worker to each frame index; results come back in index order."""
    if threads <= 1:
        return [worker(i) for i in indices]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(worker, indices))


# --------------------------------------------------------------------------
# simulate

def cmd_simulate(args: argparse.Namespace) -> int:
    s = Settings(args)
    out = Path(s.get("out", _MISSING))
    frames = s.get("frames", 1, int)
    preset = s.get("preset", "day")
    seed = s.get("seed", 0, int)
    threads = s.get("threads", 1, int)
    scene_path = s.get("scene", None)
    if frames < 1:
        raise InvalidConfig("frames must be >= 1")

    config = preset_render_config(preset)
    rig = benchmark_rig()
    fixed_scene = dataio.load_scene(scene_path) if scene_path else None
    out.mkdir(parents=True, exist_ok=True)

    def worker(i: int) -> dict:
        scene = fixed_scene if fixed_scene is not None else benchmark_scene(i)
        bundle = render_bundle(scene, rig, config, seed=seed + i)
        dataio.write_frame(out, i, bundle)
        return {"index": i, "seed": bundle.seed, "delta_t": bundle.delta_t}

    meta = _run_frames(worker, range(frames), threads)
    dataio.write_calib(out, rig, config, meta)
    print(f"simulate: wrote {frames} {preset} frame(s) to {out}")
    return 0


# --------------------------------------------------------------------------
# decode

def cmd_decode(args: argparse.Namespace) -> int:
    s = Settings(args)
    data = Path(s.get("data", _MISSING))
    out = Path(s.get("out", data / "derived"))
    threads = s.get("threads", 1, int)
    calib = dataio.read_calib(data)

    def worker(meta: dict) -> tuple[int, float]:
        i = meta["index"]
        bundle = dataio.read_frame(data, i, calib)
        dst = out / f"frame_{i:06d}"
        dst.mkdir(parents=True, exist_ok=True)
        coverage = []
        for side, tag in (("left", "l"), ("right", "r")):
            result = decode_depth(bundle.gated[side])
            dataio.save_depth_f32(dst / f"decoded_gated_{tag}.f32",
                                  result.depth)
            coverage.append(float(result.mask.mean()))
        return i, sum(coverage) / len(coverage)

    rows = _run_frames(worker, calib.frames, threads)
    for i, cov in rows:
        print(f"decode: frame {i:06d} coverage {cov:.1%}")
    return 0


# --------------------------------------------------------------------------
# estimate

def _estimate_frame(bundle, mode: str, iterations: int, levels: int,
                    radius: int):
    return estimate_disparity(bundle, mode, iterations=iterations,
                              pyramid_levels=levels, radius=radius)


def cmd_estimate(args: argparse.Namespace) -> int:
    s = Settings(args)
    data = Path(s.get("data", _MISSING))
    mode = s.get("mode", "fused")
    out = Path(s.get("out", data / "derived"))
    iterations = s.get("iterations", 4, int)
    levels = s.get("levels", 3, int)
    radius = s.get("radius", 4, int)
    threads = s.get("threads", 1, int)
    if mode not in MODES:
        raise InvalidConfig(f"mode must be one of {MODES}, got {mode!r}")
    calib = dataio.read_calib(data)

    def worker(meta: dict) -> int:
        i = meta["index"]
        bundle = dataio.read_frame(data, i, calib)
        result = _estimate_frame(bundle, mode, iterations, levels, radius)
        dst = out / f"frame_{i:06d}"
        dst.mkdir(parents=True, exist_ok=True)
        for view, tag in (("left", "l"), ("right", "r")):
            disp = result.disparity[view]
            dataio.save_depth_f32(
                dst / f"disparity_{mode}_{tag}.f32",
                DepthMap(np.where(disp.values > 0, disp.values, np.nan),
                         disp.mask & (disp.values > 0)))
            depth = disparity_to_depth(disp, result.baseline,
                                       result.camera.fx)
            dataio.save_depth_f32(dst / f"depth_{mode}_{tag}.f32", depth)
        return i

    for i in _run_frames(worker, calib.frames, threads):
        print(f"estimate[{mode}]: frame {i:06d} done")
    return 0


# --------------------------------------------------------------------------
# evaluate

def _target_view(mode: str) -> str:
    return "rccb_left" if mode == "rccb-only" else "gated_left"


def _pooled_report(pairs: list[tuple[DepthMap, DepthMap]]) -> EvalReport:
    """One report over the union of (pred, gt) pixels from many frames."""
    pred_vals = np.concatenate([p.values.ravel() for p, _ in pairs])
    pred_mask = np.concatenate([p.mask.ravel() for p, _ in pairs])
    gt_vals = np.concatenate([g.values.ravel() for _, g in pairs])
    gt_mask = np.concatenate([g.mask.ravel() for _, g in pairs])
    pred = DepthMap(np.where(pred_mask, pred_vals, np.nan)[None, :],
                    pred_mask[None, :])
    gt = DepthMap(np.where(gt_mask, gt_vals, np.nan)[None, :],
                  gt_mask[None, :])
    return bucketed_report(pred, gt)


def _load_mode_pairs(data: Path, pred_dir: Path, mode: str,
                     calib) -> list[tuple[DepthMap, DepthMap]]:
    view = _target_view(mode)
    cam = calib.rig.cameras()[view]
    shape = (cam.height, cam.width)
    pairs = []
    for meta in calib.frames:
        i = meta["index"]
        pred = dataio.load_depth_f32(
            pred_dir / f"frame_{i:06d}" / f"depth_{mode}_l.f32", shape)
        gt = dataio.load_depth_f32(
            dataio.frame_dir(data, i) / f"gt_depth_{view}.f32", shape)
        pairs.append((pred, gt))
    return pairs


def _report_rows(report: EvalReport) -> str:
    head = f"  {'bucket':>12} {'MAE':>8} {'RMSE':>8} {'ARD':>7} " \
           f"{'d1%':>6} {'d2%':>6} {'d3%':>6} {'n':>8}"
    lines = [head]
    for b in report.buckets:
        tag = f"[{b.lo:.0f},{b.hi:.0f})"
        if b.empty:
            lines.append(f"  {tag:>12}    (empty)")
            continue
        lines.append(
            f"  {tag:>12} {b.mae:8.3f} {b.rmse:8.3f} {b.ard:7.3f} "
            f"{b.delta1:6.1f} {b.delta2:6.1f} {b.delta3:6.1f} "
            f"{b.evaluated:8d}")
    return "\n".join(lines)


def cmd_evaluate(args: argparse.Namespace) -> int:
    s = Settings(args)
    data = Path(s.get("data", _MISSING))
    mode = s.get("mode", "fused")
    pred_dir = Path(s.get("pred", data / "derived"))
    if mode not in MODES:
        raise InvalidConfig(f"mode must be one of {MODES}, got {mode!r}")
    calib = dataio.read_calib(data)
    out = Path(s.get("out", pred_dir / f"eval_{mode}.json"))

    pairs = _load_mode_pairs(data, pred_dir, mode, calib)
    per_frame = [bucketed_report(p, g) for p, g in pairs]
    aggregate = _pooled_report(pairs)
    blob = {
        "mode": mode,
        "frames": [r.as_dict() for r in per_frame],
        "aggregate": aggregate.as_dict(),
    }
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(blob, indent=2, sort_keys=True) + "\n")
    print(f"evaluate[{mode}]: {len(pairs)} frame(s), aggregate:")
    print(_report_rows(aggregate))
    print(f"evaluate[{mode}]: report written to {out}")
    return 0


# --------------------------------------------------------------------------
# benchmark

def _benchmark_plots(out: Path, summary: dict) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    buckets = [f"[{lo:.0f},{hi:.0f})" for lo, hi in DEFAULT_BUCKETS]
    for preset, per_mode in summary.items():
        fig, ax = plt.subplots(figsize=(7.0, 4.0))
        width = 0.25
        xs = np.arange(len(buckets))
        for j, mode in enumerate(MODES):
            maes = [b["mae"] for b in per_mode[mode]["buckets"]]
            ax.bar(xs + (j - 1) * width, maes, width, label=mode)
        ax.set_xticks(xs, buckets)
        ax.set_ylabel("depth MAE (m)")
        ax.set_title(f"{preset} preset")
        ax.legend()
        fig.tight_layout()
        fig.savefig(out / f"benchmark_{preset}.png", dpi=120)
        plt.close(fig)


def cmd_benchmark(args: argparse.Namespace) -> int:
    s = Settings(args)
    out = Path(s.get("out", _MISSING))
    frames = s.get("frames", 10, int)
    seed = s.get("seed", 0, int)
    threads = s.get("threads", 1, int)
    iterations = s.get("iterations", 4, int)
    levels = s.get("levels", 3, int)
    radius = s.get("radius", 4, int)
    plots = s.get("plots", True, _bool)
    out.mkdir(parents=True, exist_ok=True)

    summary: dict[str, dict] = {}
    pooled_pairs: dict[str, list] = {m: [] for m in MODES}
    for preset in PRESETS:
        data = out / f"data_{preset}"
        ns = argparse.Namespace(config=None, out=str(data), frames=frames,
                                preset=preset, seed=seed, threads=threads,
                                scene=None)
        cmd_simulate(ns)
        calib = dataio.read_calib(data)

        summary[preset] = {}
        for mode in MODES:
            pred_dir = data / "derived"
            ns = argparse.Namespace(config=None, data=str(data), mode=mode,
                                    out=str(pred_dir), iterations=iterations,
                                    levels=levels, radius=radius,
                                    threads=threads)
            cmd_estimate(ns)
            pairs = _load_mode_pairs(data, pred_dir, mode, calib)
            pooled_pairs[mode].extend(pairs)
            report = _pooled_report(pairs)
            summary[preset][mode] = report.as_dict()
            print(f"benchmark[{preset}/{mode}]:")
            print(_report_rows(report))

    # fused advantage per bucket, pooled over both presets: how much the
    # fused mode beats the better single modality
    overall = {m: _pooled_report(pooled_pairs[m]).as_dict() for m in MODES}
    advantage = {}
    for j, (lo, hi) in enumerate(DEFAULT_BUCKETS):
        singles = min(overall["gated-only"]["buckets"][j]["mae"],
                      overall["rccb-only"]["buckets"][j]["mae"])
        advantage[f"[{lo:.0f},{hi:.0f})"] = \
            singles - overall["fused"]["buckets"][j]["mae"]

    blob = {
        "frames": frames,
        "seed": seed,
        "presets": summary,
        "overall": overall,
        "fused_advantage": advantage,
    }
    report_path = out / "benchmark_report.json"
    report_path.write_text(json.dumps(blob, indent=2, sort_keys=True) + "\n")

    print("benchmark: fused advantage by bucket (m of MAE):")
    for tag, adv in advantage.items():
        print(f"  {tag:>12} {adv:+.3f}")
    if plots:
        _benchmark_plots(out, summary)
    print(f"benchmark: report written to {report_path}")
    return 0


# --------------------------------------------------------------------------
# parser

def _bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xstereo",
        description="Cross-spectral gated/RCCB stereo depth toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file (flag-name keys)")
        p.add_argument("--seed", type=int, help="base RNG seed")
        p.add_argument("--threads", type=int, help="frame-parallel workers")
        p.add_argument("--out", help="output directory / report path")

    p = sub.add_parser("simulate", help="render a synthetic dataset")
    common(p)
    p.add_argument("--frames", type=int, help="number of frames")
    p.add_argument("--preset", choices=PRESETS, help="lighting regime")
    p.add_argument("--scene", help="scene JSON (default: built-in family)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("decode", help="gated ToF inversion per frame")
    common(p)
    p.add_argument("--data", help="dataset directory")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("estimate", help="stereo disparity estimation")
    common(p)
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--iterations", type=int)
    p.add_argument("--levels", type=int)
    p.add_argument("--radius", type=int)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("evaluate", help="score predictions vs ground truth")
    common(p)
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--pred", help="prediction directory")
    p.add_argument("--mode", choices=MODES)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("benchmark",
                       help="day/night x mode matrix with summary")
    common(p)
    p.add_argument("--frames", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--levels", type=int)
    p.add_argument("--radius", type=int)
    p.add_argument("--plots", type=_bool, help="write per-preset plots")
    p.set_defaults(func=cmd_benchmark)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except XStereoError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
