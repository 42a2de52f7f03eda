import numpy as np
import pytest

from xstereo.errors import NonPositiveDepth, ShapeMismatch
from xstereo.gating import (
    C_LIGHT,
    EXPOSURE_REF,
    GatedSliceStack,
    RangeIntensityProfile,
    SensorNoise,
    default_profiles,
    form_gated_slice,
    form_passive_image,
    rccb_demosaic,
    rccb_mosaic,
    rip_eval,
)


def quadrature_rip(xi_ns, tau_g_ns, tau_p_ns, m_ns, amplitude, sigma_atm, z):
    """1 ns trapezoidal quadrature of the gate/pulse overlap integral.

    The gate and pulse are unit rectangles, right-open on integer-ns
    lattices, so the trapezoid rule is exact for lattice-aligned edges.
    """
    t = np.arange(xi_ns - 2, xi_ns + tau_g_ns + 3)
    gate = ((t >= xi_ns) & (t < xi_ns + tau_g_ns)).astype(np.float64)
    pulse = ((t >= m_ns) & (t < m_ns + tau_p_ns)).astype(np.float64)
    integral = np.trapezoid(gate * pulse, dx=1e-9)
    beta = np.exp(-2.0 * sigma_atm * z) * (10.0 / z) ** 2
    return amplitude * beta * integral


def sample_lattice_tuple(rng):
    """Random (xi, tau_g, tau_p, z) on the 1 ns lattice, avoiding exact-touch
    edges where the overlap is zero-length."""
    xi_ns = int(rng.integers(0, 1400))
    tau_g_ns = int(rng.integers(1, 600))
    tau_p_ns = int(rng.integers(1, 600))
    m_ns = int(rng.integers(30, 1450))
    while m_ns == xi_ns + tau_g_ns or m_ns + tau_p_ns == xi_ns:
        m_ns += 1
    z = m_ns * 1e-9 * C_LIGHT / 2.0
    return xi_ns, tau_g_ns, tau_p_ns, m_ns, z


class TestRipEval:
    def test_full_overlap_at_reference_range(self):
        # Gate aligned with the return at z_ref: overlap = tau, beta = 1.
        z = 10.0
        xi = 2.0 * z / C_LIGHT
        p = RangeIntensityProfile(xi=xi, tau_g=200e-9, tau_p=200e-9, amplitude=1.0)
        assert rip_eval(p, z) == pytest.approx(200e-9, rel=1e-12)

    def test_matches_quadrature_oracle(self):
        rng = np.random.default_rng(101)
        for _ in range(200):
            xi_ns, tg_ns, tp_ns, m_ns, z = sample_lattice_tuple(rng)
            amp = float(rng.uniform(0.5, 2e8))
            sig = float(rng.uniform(0.0, 0.01))
            p = RangeIntensityProfile(
                xi=xi_ns * 1e-9, tau_g=tg_ns * 1e-9, tau_p=tp_ns * 1e-9, amplitude=amp, sigma_atm=sig
            )
            expected = quadrature_rip(xi_ns, tg_ns, tp_ns, m_ns, amp, sig, z)
            got = float(rip_eval(p, z))
            assert got == pytest.approx(expected, rel=1e-9, abs=1e-30)

    def test_zero_outside_support(self):
        p = RangeIntensityProfile(xi=600e-9, tau_g=400e-9, tau_p=300e-9, amplitude=5.0)
        lo, hi = p.support()
        z = np.array([lo * 0.5, lo * 0.99, hi * 1.01, hi * 2.0])
        z = z[z > 0]
        assert np.all(rip_eval(p, z) == 0.0)
        inside = np.linspace(lo + 1.0, hi - 1.0, 7)
        assert np.all(rip_eval(p, inside) > 0.0)

    def test_gate_pulse_swap_symmetry_when_aligned(self):
        # With the gate delay matching the round-trip time, the overlap is
        # min(tau_g, tau_p), symmetric under swapping the two lengths.
        rng = np.random.default_rng(102)
        for _ in range(50):
            z = float(rng.uniform(5.0, 150.0))
            xi = 2.0 * z / C_LIGHT
            a = float(rng.uniform(50e-9, 800e-9))
            b = float(rng.uniform(50e-9, 800e-9))
            p1 = RangeIntensityProfile(xi=xi, tau_g=a, tau_p=b, amplitude=2.0)
            p2 = RangeIntensityProfile(xi=xi, tau_g=b, tau_p=a, amplitude=2.0)
            assert float(rip_eval(p1, z)) == pytest.approx(float(rip_eval(p2, z)), rel=1e-12)

    def test_rejects_nonpositive_range(self):
        p = RangeIntensityProfile(xi=100e-9, tau_g=100e-9, tau_p=100e-9, amplitude=1.0)
        with pytest.raises(NonPositiveDepth):
            rip_eval(p, 0.0)
        with pytest.raises(NonPositiveDepth):
            rip_eval(p, np.array([5.0, -1.0]))

    def test_default_profiles_coverage_and_headroom(self):
        profiles = default_profiles()
        z = np.linspace(8.0, 180.0, 2000)
        responses = np.stack([rip_eval(p, z) for p in profiles])
        # Unit albedo never clips within the working range...
        assert responses.max() <= 0.9
        # ...and every range in [10, 160] has a usable response.
        zin = (z >= 10.0) & (z <= 160.0)
        assert responses[:, zin].max(axis=0).min() > 0.05


class TestSensorNoise:
    def test_monte_carlo_mean(self):
        noise = SensorNoise(read_sigma=0.01, shot_scale=1000.0, seed=5)
        clean = np.full((40, 50), 0.3)
        noisy = noise.apply(clean)
        sigma = np.sqrt(0.3 / 1000.0 + 0.01**2)
        bound = 4.0 * sigma / np.sqrt(clean.size)
        assert abs(noisy.mean() - 0.3) < bound

    def test_poisson_branch_mean(self):
        # Low photon counts exercise the exact Poisson path.
        noise = SensorNoise(read_sigma=0.0, shot_scale=50.0, seed=6)
        clean = np.full((60, 60), 0.2)  # lam = 10 < crossover
        noisy = noise.apply(clean)
        sigma = np.sqrt(0.2 / 50.0)
        assert abs(noisy.mean() - 0.2) < 4.0 * sigma / np.sqrt(clean.size)

    def test_deterministic_given_seed_and_stream(self):
        noise = SensorNoise(read_sigma=0.02, shot_scale=500.0, seed=9)
        img = np.linspace(0.0, 1.0, 200).reshape(10, 20)
        a = noise.apply(img, stream=(3, 1))
        b = noise.apply(img, stream=(3, 1))
        assert np.array_equal(a, b)
        c = noise.apply(img, stream=(3, 2))
        assert not np.array_equal(a, c)

    def test_zero_scales_are_noiseless(self):
        noise = SensorNoise(read_sigma=0.0, shot_scale=0.0, seed=1)
        img = np.random.default_rng(0).uniform(size=(5, 5))
        assert np.array_equal(noise.apply(img), img)


class TestGatedSliceFormation:
    def test_matches_pointwise_model(self):
        p = RangeIntensityProfile(xi=300e-9, tau_g=400e-9, tau_p=200e-9, amplitude=5e6)
        depth = np.array([[20.0, 45.0], [70.0, 120.0]])
        albedo = np.array([[0.2, 0.8], [0.5, 1.0]])
        ambient = 0.03
        dark = 0.02
        img = form_gated_slice(depth, None, albedo, p, ambient, dark)
        for i in range(2):
            for j in range(2):
                expected = albedo[i, j] * float(rip_eval(p, depth[i, j])) + ambient + dark
                assert img[i, j] == pytest.approx(min(1.0, expected), abs=1e-15)

    def test_invalid_depth_gets_ambient_plus_dark(self):
        p = RangeIntensityProfile(xi=300e-9, tau_g=400e-9, tau_p=200e-9, amplitude=5e6)
        depth = np.array([[20.0, np.nan]])
        mask = np.array([[True, False]])
        img = form_gated_slice(depth, mask, np.array([[0.5, 0.5]]), p, 0.04, 0.01)
        assert img[0, 1] == pytest.approx(0.05, abs=1e-15)

    def test_clips_to_unit_range(self):
        p = RangeIntensityProfile(xi=2 * 10.0 / C_LIGHT * 1e9 * 1e-9, tau_g=500e-9, tau_p=500e-9, amplitude=1e10)
        img = form_gated_slice(np.array([[10.0]]), None, np.array([[1.0]]), p, 0.0, 0.0)
        assert img[0, 0] == 1.0

    def test_ambient_image_broadcast(self):
        p = RangeIntensityProfile(xi=300e-9, tau_g=400e-9, tau_p=200e-9, amplitude=1e6)
        ambient = np.array([[0.0, 0.1]])
        img = form_gated_slice(np.array([[500.0, 500.0]]), None, np.ones((1, 2)), p, ambient, 0.0)
        np.testing.assert_allclose(img, ambient, atol=1e-15)


class TestPassiveImage:
    def test_reference_exposure_is_identity(self):
        albedo = np.random.default_rng(7).uniform(0.0, 1.0, size=(8, 9))
        img = form_passive_image(albedo, ambient_level=1.0, exposure=EXPOSURE_REF)
        assert np.array_equal(img, albedo)

    def test_exposure_scaling_and_clip(self):
        albedo = np.array([[0.2, 0.7]])
        img = form_passive_image(albedo, ambient_level=1.0, exposure=2 * EXPOSURE_REF)
        np.testing.assert_allclose(img, [[0.4, 1.0]], atol=1e-15)

    def test_rejects_nonpositive_exposure(self):
        with pytest.raises(ValueError):
            form_passive_image(np.zeros((2, 2)), 1.0, 0.0)


class TestRccbMosaic:
    def test_pattern_on_pure_red(self):
        rgb = np.zeros((2, 2, 3))
        rgb[:, :, 0] = 1.0
        raw = rccb_mosaic(rgb)
        # (0,0)=R, (1,1)=B, off-diagonal = clear = 1.3 * (1/3).
        assert raw[0, 0] == 1.0
        assert raw[1, 1] == 0.0
        assert raw[0, 1] == pytest.approx(1.3 / 3.0, abs=1e-15)
        assert raw[1, 0] == pytest.approx(1.3 / 3.0, abs=1e-15)

    def test_constant_gray_roundtrip(self):
        g = 0.6
        rgb = np.full((12, 14, 3), g)
        out = rccb_demosaic(rccb_mosaic(rgb))
        assert np.abs(out - g).max() < 1e-6

    def test_mosaic_demosaic_mosaic_idempotent(self):
        # Smooth image: re-mosaicking the demosaiced image is a fixed point.
        h, w = 16, 20
        v, u = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        rgb = np.stack(
            [
                0.3 + 0.2 * np.sin(u / 7.0),
                0.4 + 0.1 * np.cos(v / 9.0),
                0.35 + 0.15 * np.sin((u + v) / 11.0),
            ],
            axis=-1,
        )
        raw1 = rccb_mosaic(rgb)
        raw2 = rccb_mosaic(rccb_demosaic(raw1))
        assert np.abs(raw2 - raw1).max() < 1e-6

    def test_demosaic_rejects_bad_shape(self):
        with pytest.raises(ShapeMismatch):
            rccb_demosaic(np.zeros((4, 4, 3)))
        with pytest.raises(ShapeMismatch):
            rccb_mosaic(np.zeros((4, 4)))


class TestGatedSliceStack:
    def test_validation(self):
        profiles = default_profiles()
        slices = np.zeros((4, 6, 3))
        stack = GatedSliceStack(slices, profiles, np.full(3, 0.02), 0.05)
        assert stack.num_slices == 3
        assert stack.ambient_ref.shape == (4, 6)
        with pytest.raises(ShapeMismatch):
            GatedSliceStack(slices, profiles[:2], np.full(2, 0.02), 0.05)
        with pytest.raises(ShapeMismatch):
            GatedSliceStack(slices, profiles, np.full(2, 0.02), 0.05)
