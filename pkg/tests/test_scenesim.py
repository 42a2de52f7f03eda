"""Scene simulator tests against analytic ray-intersection oracles."""

import numpy as np
import pytest

from xstereo.core import CameraModel, RigidTransform, compose, exp_twist
from xstereo.errors import InvalidConfig
from xstereo.gating import EXPOSURE_REF
from xstereo.geometry import build_warp, depth_to_disparity, invert, occlusion_mask, warp_image
from xstereo.scenesim import (
    FrameBundle,
    Primitive,
    RenderConfig,
    RigSpec,
    SceneSpec,
    TextureSpec,
    default_rig,
    displaced_rccb_pose,
    eval_texture,
    make_test_scene,
    raycast,
    render_bundle,
    sample_lidar,
)

IDENT = RigidTransform(np.eye(3), [0.0, 0.0, 0.0])


def wall(z, texture=None, **kw):
    return Primitive(
        kind="plane",
        point=(0.0, 0.0, z),
        normal=(0.0, 0.0, -1.0),
        texture=texture or TextureSpec(kind="constant", value=0.5),
        **kw,
    )


def small_cam(w=64, h=48, f=80.0):
    return CameraModel(fx=f, fy=f, cx=(w - 1) / 2.0, cy=(h - 1) / 2.0, width=w, height=h)


class TestPrimitives:
    def test_fronto_plane_constant_z_depth(self):
        # Plane-parallel depth: every pixel of a fronto wall reads the same
        # z, including corner rays whose euclidean length is longer.
        scene = SceneSpec(primitives=(wall(42.0),))
        cast = raycast(scene, small_cam(), IDENT)
        assert cast.depth.mask.all()
        np.testing.assert_allclose(cast.depth.values, 42.0, rtol=0, atol=1e-9)

    def test_slanted_ground_matches_closed_form(self):
        # Ground y=+2.0 seen from origin: z = 2.0 / dir_y for downward rays.
        ground = Primitive(
            kind="plane",
            point=(0.0, 2.0, 0.0),
            normal=(0.0, -1.0, 0.0),
            texture=TextureSpec(kind="constant", value=0.4),
        )
        scene = SceneSpec(primitives=(ground, wall(200.0)))
        cam = small_cam()
        cast = raycast(scene, cam, IDENT)
        v = np.arange(cam.height, dtype=np.float64)
        dir_y = (v - cam.cy) / cam.fy
        expected_ground = np.where(dir_y > 0, 2.0 / np.where(dir_y > 0, dir_y, 1.0), np.inf)
        expected = np.minimum(expected_ground, 200.0)
        np.testing.assert_allclose(cast.depth.values, expected[:, None] * np.ones(cam.width), rtol=1e-12)

    def test_sphere_center_ray_depth(self):
        cam = CameraModel(fx=100.0, fy=100.0, cx=32.0, cy=24.0, width=65, height=49)
        scene = SceneSpec(
            primitives=(
                Primitive(
                    kind="sphere",
                    center=(0.0, 0.0, 30.0),
                    radius=2.5,
                    texture=TextureSpec(kind="constant", value=0.8),
                ),
                wall(100.0),
            )
        )
        cast = raycast(scene, cam, IDENT)
        # cx, cy are integers here, so the exact axial ray exists.
        assert cast.depth.values[24, 32] == pytest.approx(30.0 - 2.5, abs=1e-9)
        assert cast.albedo[24, 32] == pytest.approx(0.8)
        # Just outside the silhouette the background takes over.
        assert cast.depth.values[24, 0] == pytest.approx(100.0, abs=1e-9)

    def test_sphere_off_axis_quadratic_oracle(self):
        rng = np.random.default_rng(7)
        center = np.array([1.0, -0.5, 20.0])
        r = 1.5
        scene = SceneSpec(
            primitives=(
                Primitive(kind="sphere", center=tuple(center), radius=r,
                          texture=TextureSpec(kind="constant", value=0.6)),
                wall(90.0),
            )
        )
        cam = small_cam()
        cast = raycast(scene, cam, IDENT)
        for _ in range(200):
            u = rng.integers(0, cam.width)
            v = rng.integers(0, cam.height)
            d = np.array([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0])
            a = d @ d
            b = -2.0 * d @ center
            c = center @ center - r * r
            disc = b * b - 4 * a * c
            if disc > 1e-9:
                t = (-b - np.sqrt(disc)) / (2 * a)
                expect = t if t > 0 else 90.0
            else:
                expect = 90.0
            assert cast.depth.values[v, u] == pytest.approx(expect, rel=1e-10)

    def test_box_front_face(self):
        cam = CameraModel(fx=100.0, fy=100.0, cx=32.0, cy=24.0, width=65, height=49)
        scene = SceneSpec(
            primitives=(
                Primitive(kind="box", center=(0.0, 0.0, 40.0), half_extents=(3.0, 2.0, 1.5),
                          texture=TextureSpec(kind="constant", value=0.7)),
                wall(120.0),
            )
        )
        cast = raycast(scene, cam, IDENT)
        assert cast.depth.values[24, 32] == pytest.approx(38.5, abs=1e-9)
        # Silhouette edge in u: |x| <= 3 at z=38.5 maps to ~7.8 px.
        assert cast.depth.values[24, 32 + 7] == pytest.approx(38.5, abs=1e-9)
        assert cast.depth.values[24, 32 + 9] == pytest.approx(120.0, abs=1e-9)

    def test_bounded_plane_extent(self):
        patch = Primitive(
            kind="plane",
            point=(0.0, 0.0, 25.0),
            normal=(0.0, 0.0, -1.0),
            extent=2.0,
            texture=TextureSpec(kind="constant", value=0.9),
        )
        scene = SceneSpec(primitives=(patch, wall(80.0)))
        cam = small_cam()
        cast = raycast(scene, cam, IDENT)
        assert cast.depth.values[24, 31] == pytest.approx(25.0, abs=1e-9)
        assert cast.depth.values[0, 0] == pytest.approx(80.0, abs=1e-9)

    def test_background_required(self):
        with pytest.raises(InvalidConfig):
            SceneSpec(
                primitives=(
                    Primitive(kind="sphere", center=(0, 0, 10), radius=1.0,
                              texture=TextureSpec()),
                )
            )
        with pytest.raises(InvalidConfig):
            SceneSpec(primitives=(wall(400.0),))  # too far to bound the scene


class TestTextures:
    def test_constant(self):
        pts = np.random.default_rng(0).normal(size=(50, 3)) * 10
        np.testing.assert_array_equal(eval_texture(TextureSpec(kind="constant", value=0.3), pts), 0.3)

    def test_checker_two_values_alternating(self):
        spec = TextureSpec(kind="checker", a=0.2, b=0.8, period=1.0)
        pts = np.stack(np.meshgrid(np.arange(8) + 0.5, np.arange(8) + 0.5, [0.5]), axis=-1).reshape(-1, 3)
        vals = eval_texture(spec, pts)
        assert set(np.unique(vals)) == {0.2, 0.8}
        grid = vals.reshape(8, 8)
        # Neighbors along one axis always differ.
        assert (grid[:, :-1] != grid[:, 1:]).all()

    def test_noise_range_and_determinism(self):
        spec = TextureSpec(kind="noise", lo=0.25, hi=0.75, scale=2.0, seed=5)
        pts = np.random.default_rng(1).uniform(-50, 50, size=(2000, 3))
        a = eval_texture(spec, pts)
        b = eval_texture(spec, pts)
        np.testing.assert_array_equal(a, b)
        assert a.min() >= 0.25 and a.max() <= 0.75
        assert a.std() > 0.02  # actually varies
        other = eval_texture(TextureSpec(kind="noise", lo=0.25, hi=0.75, scale=2.0, seed=6), pts)
        assert np.abs(a - other).max() > 0.05

    def test_noise_is_continuous(self):
        spec = TextureSpec(kind="noise", lo=0.0, hi=1.0, scale=1.0, seed=2)
        base = np.array([[3.3, -1.2, 7.9]])
        v0 = eval_texture(spec, base)
        v1 = eval_texture(spec, base + 1e-5)
        assert abs(float(v1[0] - v0[0])) < 1e-3

    def test_band_textures_differ(self):
        prim = Primitive(
            kind="plane",
            texture=TextureSpec(kind="constant", value=0.2),
            nir=TextureSpec(kind="constant", value=0.9),
            point=(0, 0, 30.0),
        )
        scene = SceneSpec(primitives=(prim,))
        vis = raycast(scene, small_cam(), IDENT, band="visible")
        nir = raycast(scene, small_cam(), IDENT, band="nir")
        np.testing.assert_allclose(vis.albedo, 0.2)
        np.testing.assert_allclose(nir.albedo, 0.9)

    def test_tint_applies_to_visible_rgb(self):
        prim = Primitive(
            kind="plane",
            texture=TextureSpec(kind="constant", value=0.5),
            tint=(1.0, 0.5, 0.25),
            point=(0, 0, 30.0),
        )
        cast = raycast(SceneSpec(primitives=(prim,)), small_cam(), IDENT)
        np.testing.assert_allclose(cast.rgb_albedo[10, 10], [0.5, 0.25, 0.125])


class TestStereoConsistency:
    def test_textbook_disparity_plane(self):
        # The classic check: 50 m wall, 0.76 m baseline, fx=1000 -> 15.2 px.
        cam = CameraModel(fx=1000.0, fy=1000.0, cx=63.5, cy=31.5, width=128, height=64)
        scene = SceneSpec(primitives=(wall(50.0),))
        left = raycast(scene, cam, IDENT)
        disp = depth_to_disparity(left.depth, 0.76, cam.fx)
        np.testing.assert_allclose(disp.values, 15.2, rtol=1e-12)

    def test_left_right_warp_photoconsistency(self):
        scene = make_test_scene(seed=3)
        rig = default_rig(gated_size=(128, 64))
        left = raycast(scene, rig.cam_gated, rig.pose_gated_left, band="nir")
        right = raycast(scene, rig.cam_gated, rig.pose_gated_right, band="nir")
        x_rl = compose(invert(rig.pose_gated_right), rig.pose_gated_left)
        warp = build_warp(left.depth, x_rl, rig.cam_gated, rig.cam_gated)
        sampled, mask = warp_image(np.asarray(right.albedo, dtype=np.float64)[..., None], warp)
        occluded = occlusion_mask(warp, left.depth, right.depth, x_rl, rig.cam_gated)
        ok = mask & ~occluded
        assert ok.mean() > 0.8
        err = np.abs(sampled[..., 0] - left.albedo)[ok]
        assert err.mean() < 0.02


@pytest.fixture(scope="module")
def bundle() -> FrameBundle:
    rig = default_rig(gated_size=(64, 32))
    cfg = RenderConfig(gated_noise=(0.002, 5000.0), rccb_noise=(0.002, 20000.0))
    return render_bundle(make_test_scene(seed=1), rig, cfg, seed=11)


class TestRenderBundle:

    def test_shapes_and_masks(self, bundle):
        assert bundle.gated["left"].slices.shape == (32, 64, 3)
        assert bundle.rccb_rgb["left"].shape == (96, 192, 3)
        assert bundle.rccb_raw["left"].shape == (96, 192)
        for view in ("gated_left", "gated_right", "rccb_left", "rccb_right"):
            assert bundle.gt_depth[view].mask.all()

    def test_rccb_pose_displaced_by_rig_motion(self, bundle):
        # Forward 1 m/s over the 20 ms true offset = 2 cm along +z.
        pose = bundle.poses["rccb_left"]
        np.testing.assert_allclose(pose.translation, [0.05, -0.06, 0.04], atol=1e-12)
        np.testing.assert_allclose(pose.rotation, np.eye(3), atol=1e-12)
        expect = compose(exp_twist(0.02 * np.array(bundle.rig.rig_velocity)),
                         bundle.rig.pose_rccb_left)
        np.testing.assert_allclose(
            displaced_rccb_pose(bundle.rig, "left").matrix, expect.matrix, atol=1e-15
        )

    def test_measured_offset_jittered_but_close(self, bundle):
        assert bundle.delta_t != bundle.rig.time_offset_truth
        assert abs(bundle.delta_t - bundle.rig.time_offset_truth) < 5e-3

    def test_deterministic_given_seed(self, bundle):
        again = render_bundle(
            make_test_scene(seed=1),
            default_rig(gated_size=(64, 32)),
            RenderConfig(gated_noise=(0.002, 5000.0), rccb_noise=(0.002, 20000.0)),
            seed=11,
        )
        np.testing.assert_array_equal(bundle.gated["left"].slices, again.gated["left"].slices)
        np.testing.assert_array_equal(bundle.rccb_raw["right"], again.rccb_raw["right"])
        assert bundle.delta_t == again.delta_t
        np.testing.assert_array_equal(bundle.lidar.values, again.lidar.values)
        different = render_bundle(
            make_test_scene(seed=1),
            default_rig(gated_size=(64, 32)),
            RenderConfig(gated_noise=(0.002, 5000.0), rccb_noise=(0.002, 20000.0)),
            seed=12,
        )
        assert np.abs(bundle.gated["left"].slices - different.gated["left"].slices).max() > 0

    def test_gated_ambient_reference(self, bundle):
        stack = bundle.gated["left"]
        albedo = bundle.gt_albedo["gated_left"]
        np.testing.assert_allclose(stack.ambient_ref, albedo * 0.15, rtol=1e-12)

    def test_noiseless_render_is_clean_model(self):
        rig = default_rig(gated_size=(64, 32))
        cfg = RenderConfig()  # no noise anywhere
        b = render_bundle(make_test_scene(seed=2), rig, cfg, seed=0)
        stack = b.gated["left"]
        # Every slice >= ambient + dark (returned energy only adds).
        floor = stack.ambient_ref[..., None] + np.asarray(cfg.dark)
        assert (stack.slices >= np.minimum(floor, 1.0) - 1e-12).all()

    def test_lidar_rows(self, bundle):
        rows_hit = np.unique(np.nonzero(bundle.lidar.mask)[0])
        assert len(rows_hit) == 16
        gt = bundle.gt_depth["gated_left"]
        err = np.abs(bundle.lidar.values[bundle.lidar.mask] - gt.values[bundle.lidar.mask])
        assert err.max() < 0.03 * 6  # ~6 sigma of range jitter

    def test_lidar_row_spacing_uniform(self):
        rig = default_rig(gated_size=(64, 32))
        b = render_bundle(make_test_scene(seed=1), rig, RenderConfig(lidar_rows=4, lidar_sigma=0.0), seed=5)
        rows = np.unique(np.nonzero(b.lidar.mask)[0])
        np.testing.assert_array_equal(rows, [0, 10, 21, 31])
        np.testing.assert_allclose(
            b.lidar.values[b.lidar.mask], b.gt_depth["gated_left"].values[b.lidar.mask], rtol=0
        )


class TestCrossSpectralWarp:
    def test_rccb_warped_into_gated_frame_matches_albedo(self):
        # Static rig (no time offset), unit ambient at reference exposure and
        # neutral tint: the demosaiced RCCB image *is* the visible albedo, so
        # warping it into the gated-left frame must reproduce the gated-left
        # visible-band raycast up to interpolation error.
        scene = make_test_scene(seed=4)
        rig = default_rig(gated_size=(128, 64), time_offset_truth=0.0)
        cfg = RenderConfig(ambient_level=1.0, exposure=EXPOSURE_REF)
        b = render_bundle(scene, rig, cfg, seed=0)

        gated_vis = raycast(scene, rig.cam_gated, rig.pose_gated_left, band="visible")
        x_cg = compose(invert(b.poses["rccb_left"]), b.poses["gated_left"])
        warp = build_warp(b.gt_depth["gated_left"], x_cg, rig.cam_gated, rig.cam_rccb)
        sampled, mask = warp_image(b.rccb_rgb["left"], warp)
        occluded = occlusion_mask(
            warp, b.gt_depth["gated_left"], b.gt_depth["rccb_left"], x_cg, rig.cam_gated
        )
        ok = mask & ~occluded
        assert ok.mean() > 0.9
        # Compare luma to sidestep per-channel demosaic residue.
        luma_warp = sampled.mean(axis=-1)
        luma_ref = gated_vis.rgb_albedo.mean(axis=-1)
        mae = np.abs(luma_warp - luma_ref)[ok].mean()
        assert mae < 0.02


class TestRigSpec:
    def test_default_rig_geometry(self):
        rig = default_rig()
        assert rig.cam_gated.width == 320 and rig.cam_gated.height == 160
        assert rig.cam_rccb.width == 960 and rig.cam_rccb.height == 480
        assert rig.cam_rccb.fx == pytest.approx(960.0)
        assert rig.cam_rccb.cx == pytest.approx(479.5)
        np.testing.assert_allclose(rig.pose_gated_right.translation, [0.76, 0, 0])

    def test_rectification_enforced(self):
        eye = np.eye(3)
        cam = small_cam()
        with pytest.raises(InvalidConfig):
            RigSpec(
                cam_gated=cam,
                cam_rccb=cam,
                pose_gated_left=RigidTransform(eye, [0, 0, 0]),
                pose_gated_right=RigidTransform(eye, [0.76, 0.01, 0]),  # y offset
                pose_rccb_left=RigidTransform(eye, [0, 0, 0]),
                pose_rccb_right=RigidTransform(eye, [0.76, 0, 0]),
            )

    def test_velocity_must_be_six_vector(self):
        with pytest.raises(InvalidConfig):
            default_rig(rig_velocity=(0.0, 0.0, 1.0))
