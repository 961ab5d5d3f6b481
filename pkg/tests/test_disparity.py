import numpy as np
import pytest
from scipy.ndimage import binary_dilation, binary_erosion, gaussian_filter

from lfseg.core import LightField
from lfseg.disparity import (
    DisparityEstimationError,
    DisparityParams,
    EpiSlice,
    epi_orientation,
    estimate_disparity,
)
from lfseg.synthgen import BackgroundSpec, ObjectSpec, SceneSpec, generate


def sheared_epi(d: float, views: int = 9, width: int = 96, seed: int = 0) -> EpiSlice:
    """EPI of a 1-D texture observed at disparity d; the shear is the oracle."""
    rng = np.random.default_rng(seed)
    pad = int(np.ceil(abs(d) * views)) + 2
    tex = gaussian_filter(rng.standard_normal(width + 2 * pad), 2.0)
    tex = (tex - tex.min()) / (tex.max() - tex.min())
    mid = views // 2
    rows = []
    for i in range(views):
        offset = d * (i - mid)
        rows.append(np.interp(np.arange(width) + offset + pad, np.arange(tex.size), tex))
    return EpiSlice(np.stack(rows), "horizontal")


class TestEpiOrientation:
    def test_constant_epi_has_zero_coherence(self):
        epi = EpiSlice(np.full((9, 40), 0.5), "horizontal")
        slope, coherence = epi_orientation(epi, 0.8, 1.6)
        np.testing.assert_array_equal(coherence, 0.0)

    @pytest.mark.parametrize("d,tol", [(1.0, 0.1), (-2.0, 0.15)])
    def test_sheared_texture_recovers_disparity(self, d, tol):
        epi = sheared_epi(d)
        slope, coherence = epi_orientation(epi, 0.8, 1.6)
        margin = 5  # two filter scales
        est = -slope[4, margin:-margin]
        assert np.median(np.abs(est - d)) <= tol

    def test_rejects_bad_scales(self):
        epi = EpiSlice(np.zeros((9, 9)), "vertical")
        with pytest.raises(DisparityEstimationError):
            epi_orientation(epi, 0.0, 1.0)

    def test_coherence_in_unit_interval(self):
        rng = np.random.default_rng(3)
        epi = EpiSlice(rng.random((9, 50)), "horizontal")
        _, coherence = epi_orientation(epi, 0.8, 1.6)
        assert coherence.min() >= 0.0 and coherence.max() <= 1.0

    def test_scale_invariance_of_slope(self):
        epi = sheared_epi(1.5, seed=7)
        s1, c1 = epi_orientation(epi, 0.8, 1.6)
        s2, c2 = epi_orientation(EpiSlice(epi.samples * 4.0, "horizontal"), 0.8, 1.6)
        np.testing.assert_allclose(s1, s2, atol=1e-9)
        np.testing.assert_allclose(c1, c2, atol=1e-9)


def plane_scene(d: float, seed: int = 1) -> LightField:
    spec = SceneSpec(dims=(9, 9, 128, 128), objects=(),
                     background=BackgroundSpec(disparity=d, texture_seed=seed),
                     rng_seed=seed)
    return generate(spec).lf


class TestEstimateDisparity:
    def test_constant_plane(self):
        lf = plane_scene(1.5)
        dmap = estimate_disparity(lf)
        err = np.abs(dmap.values - 1.5)
        assert (err <= 0.2).mean() >= 0.9

    def test_two_layer_scene(self):
        spec = SceneSpec(
            dims=(9, 9, 128, 128),
            objects=(ObjectSpec("rect", (50, 50, 28, 28), 2.0, 5, 6),),
            background=BackgroundSpec(disparity=0.0, texture_seed=7),
            rng_seed=2)
        scene = generate(spec)
        dmap = estimate_disparity(scene.lf)
        mid = scene.lf.middle
        gt = scene.gt.disparity[mid.s, mid.t]
        fg = scene.gt.labels[mid.s, mid.t] == 1
        band = binary_dilation(fg, iterations=3) & ~binary_erosion(fg, iterations=3)
        assert np.median(np.abs(dmap.values - gt)[~band]) <= 0.3

    def test_flat_gray_field_fills_zero(self):
        views = np.full((3, 3, 20, 20, 3), 128, dtype=np.uint8)
        dmap = estimate_disparity(LightField.from_views(views))
        np.testing.assert_array_equal(dmap.coherence, 0.0)
        np.testing.assert_array_equal(dmap.values, 0.0)

    def test_small_view_grid_rejected(self):
        views = np.zeros((2, 9, 8, 8, 3), dtype=np.uint8)
        with pytest.raises(DisparityEstimationError, match="3x3"):
            estimate_disparity(LightField.from_views(views))

    def test_output_is_finite_with_coherence_in_range(self):
        rng = np.random.default_rng(11)
        views = rng.integers(0, 256, (3, 3, 24, 24, 3), dtype=np.uint8)
        dmap = estimate_disparity(LightField.from_views(views))
        assert np.isfinite(dmap.values).all()
        assert dmap.coherence.min() >= 0.0 and dmap.coherence.max() <= 1.0

    def test_reversing_view_order_negates_disparity(self):
        lf = plane_scene(1.0, seed=9)
        fwd = estimate_disparity(lf)
        rev = estimate_disparity(LightField(lf.views[::-1, ::-1].copy(), lf.middle))
        interior = (slice(10, -10), slice(10, -10))
        med_fwd = np.median(fwd.values[interior])
        med_rev = np.median(rev.values[interior])
        assert med_fwd == pytest.approx(1.0, abs=0.1)
        assert med_rev == pytest.approx(-1.0, abs=0.1)

    def test_disparity_sign_flag_flips_estimate(self):
        lf = plane_scene(1.0, seed=4)
        pos = estimate_disparity(lf, DisparityParams())
        neg = estimate_disparity(lf, DisparityParams(disparity_sign=-1))
        np.testing.assert_allclose(pos.values, -neg.values, atol=1e-6)

    def test_brightness_scaling_invariance(self):
        lf = plane_scene(1.0, seed=5)
        even = (lf.views // 2 * 2).astype(np.uint8)
        half = (even // 2).astype(np.uint8)  # exact halving of every channel
        a = estimate_disparity(LightField(even, lf.middle))
        b = estimate_disparity(LightField(half, lf.middle))
        diff = np.abs(a.values - b.values)
        assert np.median(diff) <= 1e-9
        assert (diff > 1e-6).mean() < 0.01  # fill ties may flip at isolated pixels
