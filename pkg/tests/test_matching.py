"""Feature fusion, correlation volumes, and the disparity estimator."""

import math

import numpy as np
import pytest

from xstereo.core import Image, RigidTransform
from xstereo.errors import InvalidConfig, ShapeMismatch
from xstereo.geometry import disparity_to_depth
from xstereo.matching import (
    AttentionFn,
    CorrVolume,
    correlation,
    estimate_disparity,
    fuse_features,
    search_offsets,
    uniform_attention,
)
from xstereo.matching import _handoff
from xstereo.scenesim import (
    Primitive,
    RenderConfig,
    SceneSpec,
    TextureSpec,
    default_rig,
    displaced_rccb_pose,
    raycast,
    render_bundle,
)


def random_feat(rng, h=6, w=5, c=3):
    return Image(rng.normal(0.0, 1.0, (h, w, c)))


def noise_tex(scale, lo, hi, seed, octaves=1):
    return TextureSpec(kind="noise", scale=scale, lo=lo, hi=hi, seed=seed,
                       octaves=octaves)


class TestAttentionFn:
    def test_output_strictly_inside_unit_interval(self):
        rng = np.random.default_rng(0)
        for trial in range(20):
            feat = random_feat(rng)
            att = AttentionFn(
                gains=tuple(rng.normal(0.0, 5.0, 3)),
                biases=tuple(rng.normal(0.0, 50.0, 3)),
            )
            w = att(feat)
            assert w.shape == feat.data.shape
            assert np.all(w > 0.0) and np.all(w < 1.0)

    def test_saturated_bias_stays_below_one(self):
        feat = random_feat(np.random.default_rng(1))
        w = AttentionFn(gains=(0.0,) * 3, biases=(1e6,) * 3)(feat)
        assert np.all(w < 1.0)
        w = AttentionFn(gains=(0.0,) * 3, biases=(-1e6,) * 3)(feat)
        assert np.all(w > 0.0)

    def test_zero_gain_matches_plain_sigmoid(self):
        feat = random_feat(np.random.default_rng(2))
        w = AttentionFn(gains=(0.0, 0.0, 0.0), biases=(0.3, -1.1, 2.0))(feat)
        for c, b in enumerate((0.3, -1.1, 2.0)):
            assert np.allclose(w[:, :, c], 1.0 / (1.0 + math.exp(-b)), atol=1e-15)

    def test_channel_mismatch_raises(self):
        att = AttentionFn(gains=(1.0, 1.0), biases=(0.0, 0.0))
        with pytest.raises(ShapeMismatch):
            att(random_feat(np.random.default_rng(3), c=3))

    @pytest.mark.parametrize(
        "gains,biases",
        [((), ()), ((1.0,), (0.0, 0.0)), ((float("nan"),), (0.0,)),
         ((1.0,), (float("inf"),))],
    )
    def test_bad_parameters_rejected(self, gains, biases):
        with pytest.raises(InvalidConfig):
            AttentionFn(gains=gains, biases=biases)

    def test_uniform_attention_is_constant(self):
        feat = random_feat(np.random.default_rng(4))
        w = uniform_attention(0.25)(feat)
        assert np.allclose(w, 0.25, atol=1e-12)

    @pytest.mark.parametrize("weight", [0.0, 1.0, -0.1, 1.5])
    def test_uniform_attention_rejects_degenerate_weight(self, weight):
        with pytest.raises(InvalidConfig):
            uniform_attention(weight)


class TestFuseFeatures:
    """The blend must honor its algebraic degeneracies exactly."""

    def test_mix_one_returns_weighted_target(self):
        rng = np.random.default_rng(10)
        f_g, f_c = random_feat(rng), random_feat(rng)
        a_u = uniform_attention(0.7)
        fused = fuse_features(f_g, f_c, a_u, lambda feat: np.ones(feat.data.shape))
        expected = f_g.data * 0.7
        assert np.max(np.abs(fused.data - expected)) <= 1e-12

    def test_mix_zero_returns_weighted_source(self):
        rng = np.random.default_rng(11)
        f_g, f_c = random_feat(rng), random_feat(rng)
        a_u = uniform_attention(0.7)
        fused = fuse_features(f_g, f_c, a_u, lambda feat: np.zeros(feat.data.shape))
        expected = f_c.data * 0.7
        assert np.max(np.abs(fused.data - expected)) <= 1e-12

    def test_identical_inputs_collapse_for_any_mix(self):
        # With F_g = F_c = F the normalized sum is F*a_u(F) again, and the
        # mix interpolates between two equal images.
        rng = np.random.default_rng(12)
        for trial in range(30):
            f = random_feat(rng)
            a_u = AttentionFn(gains=tuple(rng.normal(0, 2, 3)),
                              biases=tuple(rng.normal(0, 2, 3)))
            a_m = AttentionFn(gains=tuple(rng.normal(0, 2, 3)),
                              biases=tuple(rng.normal(0, 2, 3)))
            fused = fuse_features(f, f, a_u, a_m)
            expected = f.data * a_u(f)
            assert np.max(np.abs(fused.data - expected)) <= 1e-12

    def test_convex_combination_bounds(self):
        # Criterion: fused output sits inside the per-pixel min/max envelope
        # of the two weighted branches, for any attention parameters.
        rng = np.random.default_rng(13)
        for trial in range(1000):
            f_g = random_feat(rng, h=4, w=3)
            f_c = random_feat(rng, h=4, w=3)
            a_u = AttentionFn(gains=tuple(rng.normal(0, 3, 3)),
                              biases=tuple(rng.normal(0, 3, 3)))
            a_m = AttentionFn(gains=tuple(rng.normal(0, 3, 3)),
                              biases=tuple(rng.normal(0, 3, 3)))
            branch_g = f_g.data * a_u(f_g)
            branch_c = f_c.data * a_u(f_c)
            fused = fuse_features(f_g, f_c, a_u, a_m).data
            lo = np.minimum(branch_g, branch_c) - 1e-12
            hi = np.maximum(branch_g, branch_c) + 1e-12
            assert np.all(fused >= lo) and np.all(fused <= hi)

    def test_shape_mismatch_raises(self):
        rng = np.random.default_rng(14)
        a = uniform_attention(0.5)
        with pytest.raises(ShapeMismatch):
            fuse_features(random_feat(rng, h=6), random_feat(rng, h=5), a, a)


def correlation_oracle(f_l, f_r, offsets):
    """Naive triple loop over pixels, offsets, and channels."""
    h, w, c = f_l.shape
    out = np.zeros((h, w, len(offsets)))
    for k, (f, g) in enumerate(offsets):
        for y in range(h):
            for x in range(w):
                xs, ys = x + f, y + g
                if 0 <= xs < w and 0 <= ys < h:
                    acc = 0.0
                    for i in range(c):
                        acc += f_l[y, x, i] * f_r[ys, xs, i]
                    out[y, x, k] = acc / c
    return out


class TestCorrelation:
    def test_matches_triple_loop_oracle(self):
        rng = np.random.default_rng(20)
        offsets = [(f, g) for g in range(-2, 3) for f in range(-2, 3)]
        for trial in range(5):
            f_l = rng.normal(0, 1, (8, 8, 3))
            f_r = rng.normal(0, 1, (8, 8, 3))
            vol = correlation(Image(f_l), Image(f_r), offsets)
            expected = correlation_oracle(f_l, f_r, offsets)
            assert np.max(np.abs(vol.values - expected)) < 1e-9

    def test_zero_offset_on_self_is_mean_square(self):
        rng = np.random.default_rng(21)
        f = rng.normal(0, 1, (6, 7, 3))
        vol = correlation(Image(f), Image(f), [(0, 0)])
        assert np.allclose(vol.values[:, :, 0], (f * f).mean(axis=2), atol=1e-12)

    def test_orthogonal_features_correlate_to_zero(self):
        f_l = np.zeros((5, 5, 2))
        f_r = np.zeros((5, 5, 2))
        f_l[:, :, 0] = 1.0
        f_r[:, :, 1] = 1.0
        vol = correlation(Image(f_l), Image(f_r), [(0, 0), (1, 0)])
        assert np.all(vol.values == 0.0)

    def test_scaling_left_input_scales_scores(self):
        rng = np.random.default_rng(22)
        f_l = rng.normal(0, 1, (6, 6, 3))
        f_r = rng.normal(0, 1, (6, 6, 3))
        offsets = [(-1, 0), (0, 0), (2, 1)]
        base = correlation(Image(f_l), Image(f_r), offsets)
        scaled = correlation(Image(2.5 * f_l), Image(f_r), offsets)
        assert np.allclose(scaled.values, 2.5 * base.values, atol=1e-12)

    def test_out_of_bounds_contributes_zero(self):
        rng = np.random.default_rng(23)
        f = rng.normal(0, 1, (4, 4, 2))
        vol = correlation(Image(f), Image(f), [(4, 0), (0, 4), (-4, 0)])
        assert np.all(vol.values == 0.0)
        # A partial shift zeroes exactly the rows/columns that fell off.
        vol = correlation(Image(f), Image(f), [(3, 0)])
        assert np.all(vol.values[:, 1:, 0] == 0.0)
        assert np.all(vol.values[:, 0, 0] != 0.0)

    def test_channel_mismatch_raises(self):
        rng = np.random.default_rng(24)
        with pytest.raises(ShapeMismatch):
            correlation(random_feat(rng, c=3), random_feat(rng, c=2), [(0, 0)])

    def test_volume_rejects_wrong_arity_and_nonfinite(self):
        with pytest.raises(ShapeMismatch):
            CorrVolume(values=np.zeros((3, 3, 2)), offsets=((0, 0),))
        with pytest.raises(InvalidConfig):
            CorrVolume(values=np.full((3, 3, 1), np.nan), offsets=((0, 0),))


class TestSearchOffsets:
    def test_odd_iteration_sweeps_epipolar_axis(self):
        offs = search_offsets(1, 4)
        assert len(offs) == 9
        assert set(offs) == {(f, 0) for f in range(-4, 5)}

    def test_even_iteration_probes_square(self):
        offs = search_offsets(2, 4)
        assert len(offs) == 25
        assert set(offs) == {(f, g) for f in range(-2, 3) for g in range(-2, 3)}

    def test_half_radius_rounds_up(self):
        offs = search_offsets(2, 5)
        assert set(offs) == {(f, g) for f in range(-3, 4) for g in range(-3, 4)}

    def test_zero_offset_always_present(self):
        for iteration in range(1, 7):
            for radius in range(1, 6):
                assert (0, 0) in search_offsets(iteration, radius)

    def test_invalid_arguments_raise(self):
        with pytest.raises(InvalidConfig):
            search_offsets(0, 4)
        with pytest.raises(InvalidConfig):
            search_offsets(1, 0)


def test_handoff_doubles_constant_disparity_exactly():
    d = np.full((12, 16), 1.75)
    up = _handoff(d, 24, 32)
    assert up.shape == (24, 32)
    assert np.all(up == 3.5)


# --- end-to-end estimator behavior on small synthetic rigs ----------------


@pytest.fixture(scope="module")
def fronto_bundle():
    scene = SceneSpec(primitives=(
        Primitive("plane", noise_tex(2.5, 0.1, 0.95, 7), point=(0.0, 0.0, 40.0),
                  normal=(0.0, 0.0, -1.0)),
    ))
    rig = default_rig(gated_size=(128, 64), rccb_scale=2)
    bundle = render_bundle(scene, rig, RenderConfig(ambient_level=0.5), seed=3)
    return rig, bundle


@pytest.fixture(scope="module")
def static_fronto_bundle():
    """Same plane, but the rig neither moves nor has a timing offset."""
    scene = SceneSpec(primitives=(
        Primitive("plane", noise_tex(2.5, 0.1, 0.95, 7), point=(0.0, 0.0, 40.0),
                  normal=(0.0, 0.0, -1.0)),
    ))
    rig = default_rig(gated_size=(128, 64), rccb_scale=2, time_offset_truth=0.0,
                      rig_velocity=(0.0,) * 6)
    bundle = render_bundle(scene, rig, RenderConfig(ambient_level=0.5), seed=3)
    return rig, bundle


class TestEstimateDisparity:
    def test_fronto_plane_recovers_analytic_disparity(self, fronto_bundle):
        rig, bundle = fronto_bundle
        res = estimate_disparity(bundle, "gated-only")
        true_d = rig.baseline_gated * rig.cam_gated.fx / 40.0
        err = np.abs(res.disparity["left"].values - true_d)
        assert err.mean() < 0.25

    def test_saturated_mix_fused_matches_gated_only(self, static_fronto_bundle):
        rig, bundle = static_fronto_bundle
        gated = estimate_disparity(bundle, "gated-only")
        near_one = AttentionFn(gains=(0.0,) * 3, biases=(36.0,) * 3)
        fused = estimate_disparity(bundle, "fused", a_m=near_one,
                                   min_source_snr=0.0)
        diff = np.abs(fused.disparity["left"].values
                      - gated.disparity["left"].values)
        assert diff.max() < 1e-6

    def test_disparity_bounded_and_intermediates_coarse_to_fine(self, fronto_bundle):
        rig, bundle = fronto_bundle
        res = estimate_disparity(bundle, "gated-only", pyramid_levels=3)
        for view in ("left", "right"):
            vals = res.disparity[view].values
            assert np.all(vals >= 0.0)
            assert np.all(vals <= rig.cam_gated.width - 1)
        assert len(res.intermediates) == 3
        shapes = [m.shape for m in res.intermediates]
        assert shapes == [(16, 32), (32, 64), (64, 128)]

    def test_rccb_mode_runs_on_rccb_grid(self, fronto_bundle):
        rig, bundle = fronto_bundle
        res = estimate_disparity(bundle, "rccb-only", iterations=2,
                                 pyramid_levels=2)
        assert res.camera == rig.cam_rccb
        assert res.baseline == rig.baseline_rccb
        assert res.disparity["left"].values.shape == (128, 256)

    def test_rerun_is_bit_identical(self, fronto_bundle):
        _, bundle = fronto_bundle
        a = estimate_disparity(bundle, "gated-only", iterations=2)
        b = estimate_disparity(bundle, "gated-only", iterations=2)
        assert np.array_equal(a.disparity["left"].values,
                              b.disparity["left"].values)
        assert np.array_equal(a.disparity["right"].values,
                              b.disparity["right"].values)

    def test_pose_correction_only_in_fused_mode(self, static_fronto_bundle):
        _, bundle = static_fronto_bundle
        plain = estimate_disparity(bundle, "gated-only", iterations=2)
        assert plain.pose_correction is None
        fused = estimate_disparity(bundle, "fused", iterations=2,
                                   min_source_snr=0.0)
        assert isinstance(fused.pose_correction, RigidTransform)

    def test_parameter_validation(self, fronto_bundle):
        _, bundle = fronto_bundle
        with pytest.raises(InvalidConfig):
            estimate_disparity(bundle, "stereo")
        with pytest.raises(InvalidConfig):
            estimate_disparity(bundle, "gated-only", iterations=0)
        with pytest.raises(InvalidConfig):
            estimate_disparity(bundle, "gated-only", radius=0)
        with pytest.raises(InvalidConfig):
            estimate_disparity(bundle, "gated-only", pyramid_levels=0)
        with pytest.raises(InvalidConfig):
            estimate_disparity(bundle, "gated-only", agg_window=4)
        with pytest.raises(InvalidConfig):
            estimate_disparity(bundle, "fused", min_source_snr=-1.0)
        with pytest.raises(InvalidConfig):
            estimate_disparity(bundle, "gated-only", views=("left", "middle"))


@pytest.fixture(scope="module")
def two_plane():
    scene = SceneSpec(primitives=(
        Primitive("plane", noise_tex(1.8, 0.15, 0.9, 21, octaves=3),
                  point=(0.0, 0.0, 30.0), normal=(0.0, 0.0, -1.0),
                  extent=8.0),
        Primitive("plane", noise_tex(4.0, 0.1, 0.85, 22, octaves=3),
                  point=(0.0, 0.0, 90.0), normal=(0.0, 0.0, -1.0)),
    ))
    rig = default_rig(gated_size=(160, 96), rccb_scale=2,
                      rig_velocity=(0.0, 0.0, 0.0, 0.0, 0.0, 1.0))
    return scene, rig


class TestModalityTrends:
    """Two-plane scene, night and day radiometry: the fused estimate must
    never lose to the modality the conditions favor."""

    def depth_mae(self, scene, rig, bundle, mode):
        res = estimate_disparity(bundle, mode)
        if mode == "rccb-only":
            cam, pose = rig.cam_rccb, displaced_rccb_pose(rig, "left")
        else:
            cam, pose = rig.cam_gated, rig.pose_gated_left
        gt = raycast(scene, cam, pose, band="visible").depth
        depth = disparity_to_depth(res.disparity["left"], res.baseline,
                                   res.camera.fx)
        ok = depth.mask & gt.mask
        return float(np.abs(depth.values[ok] - gt.values[ok]).mean())

    def test_night_fused_not_worse_than_rccb(self, two_plane):
        scene, rig = two_plane
        from xstereo.gating import EXPOSURE_REF
        night = RenderConfig(ambient_level=0.02, amplitude_scale=1.0,
                             exposure=EXPOSURE_REF * 4,
                             gated_noise=(0.003, 5000.0),
                             rccb_noise=(0.005, 1200.0))
        bundle = render_bundle(scene, rig, night, seed=11)
        fused = self.depth_mae(scene, rig, bundle, "fused")
        rccb = self.depth_mae(scene, rig, bundle, "rccb-only")
        assert fused <= rccb

    def test_day_fused_not_worse_than_gated(self, two_plane):
        scene, rig = two_plane
        from xstereo.gating import EXPOSURE_REF
        day = RenderConfig(ambient_level=1.0, amplitude_scale=0.3,
                           exposure=EXPOSURE_REF,
                           gated_noise=(0.003, 5000.0),
                           rccb_noise=(0.001, 20000.0))
        bundle = render_bundle(scene, rig, day, seed=11)
        fused = self.depth_mae(scene, rig, bundle, "fused")
        gated = self.depth_mae(scene, rig, bundle, "gated-only")
        assert fused <= gated
