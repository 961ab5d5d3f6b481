import numpy as np
import pytest

import reference
from lfseg.backend import FeatureMap, OracleBackend, Prompt, StubBackend, TransportError
from lfseg.backend.base import BackendSession, SegmentResult, SegmenterBackend
from lfseg.core import DisparityMap, LfsegError, Stage, ViewIndex, ViewMask, mask_iou
from lfseg.pipeline import (
    PipelineConfig,
    WeightedMask,
    _occlude_sampled,
    build_prompt,
    densify_features,
    features_at,
    mask_mean_feature,
    occlude_mask,
    propagate_mask,
    refine_and_select,
    segment_lightfield,
    segment_source,
)


def dmap_const(dims, value, view=(4, 4)):
    return DisparityMap.constant(dims, value, ViewIndex(*view))


class TestPropagateMask:
    def test_zero_disparity_identity_everywhere(self):
        rng = np.random.default_rng(2)
        bits = rng.random((32, 32)) < 0.3
        out = propagate_mask(ViewMask(bits), dmap_const((32, 32), 0.0), (9, 9))
        for s in range(9):
            for t in range(9):
                np.testing.assert_array_equal(out.view(s, t), bits)
                assert out.stage_at(s, t) == Stage.COARSE

    def test_single_pixel_example(self):
        bits = np.zeros((32, 32), dtype=bool)
        bits[10, 10] = True
        out = propagate_mask(ViewMask(bits), dmap_const((32, 32), 2.0), (9, 9))
        target = out.view(2, 4)
        assert target.sum() == 1
        assert target[14, 10]

    def test_matches_brute_force_on_random_fields(self):
        rng = np.random.default_rng(7)
        for trial in range(5):
            bits = rng.random((64, 64)) < 0.25
            disp = rng.integers(-3, 4, size=(64, 64)).astype(np.float32)
            d = DisparityMap(disp, np.ones((64, 64), dtype=np.float32), ViewIndex(1, 1))
            out = propagate_mask(ViewMask(bits), d, (3, 3))
            expected = reference.brute_propagate(bits, disp, (3, 3), (1, 1))
            np.testing.assert_array_equal(out.masks, expected)

    def test_empty_source_gives_absent_views(self):
        out = propagate_mask(ViewMask.empty((8, 8)), dmap_const((8, 8), 1.0, (1, 1)), (3, 3))
        assert not out.masks.any()
        assert (out.stage == int(Stage.ABSENT)).all()


class TestDensifyFeatures:
    def test_identity_when_patch_grid_equals_image(self):
        rng = np.random.default_rng(1)
        grid = rng.random((12, 12, 5)).astype(np.float32)
        dense = densify_features(FeatureMap(grid), (12, 12))
        np.testing.assert_array_equal(dense, grid)

    def test_constant_grid_gives_constant_field(self):
        fm = FeatureMap(np.full((4, 4, 3), 2.5, dtype=np.float32))
        dense = densify_features(fm, (16, 16))
        np.testing.assert_allclose(dense, 2.5)

    def test_values_at_patch_centers_equal_grid(self):
        rng = np.random.default_rng(3)
        fm = FeatureMap(rng.random((4, 4, 8)).astype(np.float32))
        u_count = v_count = 16
        centers = [((p + 0.5) * u_count / 4 - 0.5, (q + 0.5) * v_count / 4 - 0.5)
                   for p in range(4) for q in range(4)]
        sampled = features_at(fm, np.array(centers), (u_count, v_count))
        np.testing.assert_allclose(sampled.reshape(4, 4, 8), fm.grid, atol=1e-6)

    def test_sampling_equals_dense_indexing_bitwise(self):
        rng = np.random.default_rng(4)
        fm = FeatureMap(rng.random((5, 5, 4)).astype(np.float32))
        dense = densify_features(fm, (13, 17))
        pts = np.argwhere(np.ones((13, 17), dtype=bool))
        sampled = features_at(fm, pts, (13, 17))
        np.testing.assert_array_equal(sampled, dense.reshape(-1, 4))


class TestMaskMeanFeature:
    def test_single_pixel(self):
        rng = np.random.default_rng(5)
        dense = rng.random((6, 6, 3))
        bits = np.zeros((6, 6), dtype=bool)
        bits[2, 4] = True
        mf = mask_mean_feature(ViewMask(bits), dense)
        np.testing.assert_allclose(mf.vector, dense[2, 4])
        assert mf.support == 1

    def test_uniform_field_any_mask(self):
        dense = np.full((8, 8, 4), 1.5)
        bits = np.random.default_rng(6).random((8, 8)) < 0.5
        mf = mask_mean_feature(ViewMask(bits), dense)
        np.testing.assert_allclose(mf.vector, 1.5)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(7)
        dense = rng.random((10, 10, 6))
        bits = rng.random((10, 10)) < 0.4
        mf = mask_mean_feature(ViewMask(bits), dense)
        np.testing.assert_allclose(mf.vector, reference.brute_mask_mean(bits, dense), rtol=1e-12)

    def test_empty_mask_rejected(self):
        with pytest.raises(LfsegError):
            mask_mean_feature(ViewMask.empty((4, 4)), np.zeros((4, 4, 2)))


class TestOccludeMask:
    def test_identical_vectors_keep_everything_with_weight_one(self):
        from lfseg.pipeline import MaskFeature
        dense = np.tile(np.array([1.0, 0.0, 0.0]), (8, 8, 1))
        bits = np.zeros((8, 8), dtype=bool)
        bits[2:6, 2:6] = True
        wm = occlude_mask(ViewMask(bits), dense, MaskFeature(np.array([2.0, 0.0, 0.0]), 4), 0.7)
        np.testing.assert_array_equal(wm.mask.bits, bits)
        np.testing.assert_allclose(wm.weights[bits], 1.0)

    def test_orthogonal_pixels_dropped(self):
        from lfseg.pipeline import MaskFeature
        dense = np.zeros((8, 8, 2))
        dense[:, :4] = [1.0, 0.0]
        dense[:, 4:] = [0.0, 1.0]
        bits = np.ones((8, 8), dtype=bool)
        wm = occlude_mask(ViewMask(bits), dense, MaskFeature(np.array([1.0, 0.0]), 1), 0.7)
        assert wm.mask.bits[:, :4].all()
        assert not wm.mask.bits[:, 4:].any()

    def test_zero_norm_vectors_count_as_dissimilar(self):
        from lfseg.pipeline import MaskFeature
        dense = np.zeros((4, 4, 3))
        bits = np.ones((4, 4), dtype=bool)
        wm = occlude_mask(ViewMask(bits), dense, MaskFeature(np.array([1.0, 0, 0]), 1), 0.5)
        assert wm.mask.is_empty

    def test_synthgen_occluder_pixels_removed(self, occluder_scene):
        scene = occluder_scene
        mid = scene.lf.middle
        dims = scene.lf.dims
        backend = OracleBackend.from_scene(scene)
        mid_session = backend.set_image(scene.lf.middle_image())
        source = ViewMask(scene.middle_label_mask(1))  # the far square
        from lfseg.pipeline import _mask_mean_feature_sampled
        source_feat = _mask_mean_feature_sampled(source, mid_session.features, dims[2:])
        d = DisparityMap(scene.gt.disparity[mid.s, mid.t],
                         np.ones(dims[2:], dtype=np.float32), mid)
        coarse = propagate_mask(source, d, dims[:2])
        removed_occ = kept_occ = removed_vis = kept_vis = 0
        for s in range(dims[0]):
            for t in range(dims[1]):
                if (s, t) == tuple(mid):
                    continue
                session = backend.set_image(scene.lf.views[s, t])
                wm = _occlude_sampled(ViewMask(coarse.view(s, t)), session.features,
                                      source_feat, 0.7, dims[2:])
                visible = scene.visible[0][s, t]  # far object is static (d=0)
                occluded = source.bits & ~visible
                removed = coarse.view(s, t) & ~wm.mask.bits
                removed_occ += int((removed & occluded).sum())
                kept_occ += int((wm.mask.bits & occluded).sum())
                removed_vis += int((removed & visible).sum())
                kept_vis += int((wm.mask.bits & visible).sum())
        assert removed_occ / max(removed_occ + kept_occ, 1) >= 0.99
        assert removed_vis / max(removed_vis + kept_vis, 1) <= 0.01

    def test_dense_and_sampled_paths_agree(self, small_scene):
        from lfseg.pipeline import _mask_mean_feature_sampled
        scene = small_scene
        backend = OracleBackend.from_scene(scene)
        session = backend.set_image(scene.lf.views[0, 0])
        dims = scene.lf.dims[2:]
        bits = scene.gt.labels[0, 0] > 0
        dense = densify_features(session.features, dims)
        mf_dense = mask_mean_feature(ViewMask(bits), dense)
        mf_sampled = _mask_mean_feature_sampled(ViewMask(bits), session.features, dims)
        np.testing.assert_array_equal(mf_dense.vector, mf_sampled.vector)
        # the sampled route evaluates the same cosine through dot/Gram
        # tables: masks must match, weights to float precision
        wm_dense = occlude_mask(ViewMask(bits), dense, mf_dense, 0.7)
        wm_sampled = _occlude_sampled(ViewMask(bits), session.features, mf_sampled, 0.7, dims)
        np.testing.assert_array_equal(wm_dense.mask.bits, wm_sampled.mask.bits)
        np.testing.assert_allclose(wm_dense.weights, wm_sampled.weights, atol=1e-9)


class TestBuildPrompt:
    def test_symmetric_square_uniform_weights(self):
        bits = np.zeros((8, 8), dtype=bool)
        bits[2:6, 2:6] = True
        prompt = build_prompt(WeightedMask.uniform(ViewMask(bits)))
        assert prompt.point == (3.5, 3.5)
        assert prompt.box == (2.0, 2.0, 5.0, 5.0)

    def test_weighted_centroid(self):
        from lfseg.pipeline import weighted_centroid
        bits = np.zeros((1, 5), dtype=bool)
        bits[0, 0] = bits[0, 4] = True
        weights = np.zeros((1, 5))
        weights[0, 0] = 1.0
        weights[0, 4] = 3.0
        wm = WeightedMask(ViewMask(bits), weights)
        assert weighted_centroid(wm)[1] == pytest.approx(3.0)
        # the centroid pixel (0, 3) is unset, so the prompt snaps to (0, 4)
        assert build_prompt(wm).point == (0.0, 4.0)

    def test_c_shape_snaps_to_set_pixel(self):
        bits = np.zeros((7, 7), dtype=bool)
        bits[1:6, 1] = True   # left bar
        bits[1, 1:6] = True   # top bar
        bits[5, 1:6] = True   # bottom bar
        wm = WeightedMask.uniform(ViewMask(bits))
        prompt = build_prompt(wm)
        pu, pv = int(round(prompt.point[0])), int(round(prompt.point[1]))
        assert bits[pu, pv]

    def test_empty_mask_rejected(self):
        with pytest.raises(LfsegError):
            build_prompt(WeightedMask.uniform(ViewMask.empty((4, 4))))


class _FailingBackend(SegmenterBackend):
    def set_image(self, image):
        raise NotImplementedError

    def prompt(self, session, prompt):
        raise TransportError("connection dropped")

    def auto_generate(self, session, points_per_side):
        return []

    def release(self, session):
        pass


class _CannedBackend(SegmenterBackend):
    """Returns a fixed mask for any prompt."""

    def __init__(self, bits):
        self.bits = bits

    def set_image(self, image):
        return BackendSession(None, image.shape[:2],
                             FeatureMap(np.ones((2, 2, 2), dtype=np.float32)))

    def prompt(self, session, prompt):
        return SegmentResult(ViewMask(self.bits), 0.9)

    def auto_generate(self, session, points_per_side):
        return []

    def release(self, session):
        session.released = True


class TestRefineAndSelect:
    def _wm(self):
        bits = np.zeros((8, 8), dtype=bool)
        bits[2:6, 2:6] = True
        return WeightedMask.uniform(ViewMask(bits))

    def test_identical_refinement_kept(self):
        wm = self._wm()
        backend = _CannedBackend(wm.mask.bits.copy())
        session = backend.set_image(np.zeros((8, 8, 3), dtype=np.uint8))
        bits, stage, record = refine_and_select(backend, session, wm, PipelineConfig())
        assert stage == Stage.REFINED
        assert record["iou"] == 1.0
        np.testing.assert_array_equal(bits.bits, wm.mask.bits)

    def test_disjoint_refinement_falls_back(self):
        wm = self._wm()
        other = np.zeros((8, 8), dtype=bool)
        other[0, 0] = True
        backend = _CannedBackend(other)
        session = backend.set_image(np.zeros((8, 8, 3), dtype=np.uint8))
        bits, stage, record = refine_and_select(backend, session, wm, PipelineConfig())
        assert stage == Stage.FALLBACK
        np.testing.assert_array_equal(bits.bits, wm.mask.bits)

    def test_empty_refinement_always_falls_back(self):
        wm = self._wm()
        backend = _CannedBackend(np.zeros((8, 8), dtype=bool))
        session = backend.set_image(np.zeros((8, 8, 3), dtype=np.uint8))
        # even with t_iou=0, an empty refinement must never replace the mask
        _, stage, _ = refine_and_select(backend, session, wm, PipelineConfig(t_iou=0.0))
        assert stage == Stage.FALLBACK

    def test_transport_error_degrades_to_fallback(self, caplog):
        wm = self._wm()
        backend = _FailingBackend()
        bits, stage, record = refine_and_select(backend, None, wm, PipelineConfig())
        assert stage == Stage.FALLBACK
        assert "error" in record
        np.testing.assert_array_equal(bits.bits, wm.mask.bits)

    def test_oracle_refinement_returns_gt(self, nine_scene):
        scene = nine_scene
        backend = OracleBackend.from_scene(scene)
        session = backend.set_image(scene.lf.views[0, 0])
        labels = scene.gt.labels[0, 0]
        gt_bits = labels == 1
        wm = WeightedMask.uniform(ViewMask(gt_bits))
        bits, stage, _ = refine_and_select(backend, session, wm, PipelineConfig())
        assert stage == Stage.REFINED
        np.testing.assert_array_equal(bits.bits, gt_bits)


class TestSegmentSource:
    def test_oracle_scene_gives_gt_middle_masks(self, nine_scene):
        scene = nine_scene
        backend = OracleBackend.from_scene(scene)
        sources = segment_source(backend, scene.lf, PipelineConfig())
        mid = scene.lf.middle
        labels = scene.gt.labels[mid.s, mid.t]
        present = {int(x) for x in np.unique(labels) if x > 0}
        assert len(sources) == len(present)
        areas = [m.pixel_count for _, m in sources]
        assert areas == sorted(areas, reverse=True)
        assert [sid for sid, _ in sources] == list(range(1, len(sources) + 1))
        for _, mask in sources:
            ids = np.unique(labels[mask.bits])
            assert len(ids) == 1 and ids[0] in present

    def test_stub_backend_gives_empty_list(self, nine_scene):
        assert segment_source(StubBackend(), nine_scene.lf, PipelineConfig()) == []

    def test_small_specks_dropped(self):
        class SpeckBackend(StubBackend):
            def auto_generate(self, session, pps):
                big = np.zeros((16, 16), dtype=bool)
                big[2:10, 2:10] = True
                speck = np.zeros((16, 16), dtype=bool)
                speck[14, 14] = speck[14, 15] = True
                return [SegmentResult(ViewMask(speck), 1.0), SegmentResult(ViewMask(big), 1.0)]

        from lfseg.core import LightField
        lf = LightField.from_views(np.zeros((3, 3, 16, 16, 3), dtype=np.uint8))
        sources = segment_source(SpeckBackend(), lf, PipelineConfig(min_mask_pixels=4))
        assert len(sources) == 1
        assert sources[0][1].pixel_count == 64


class TestSegmentLightfield:
    def _gt_disparity(self, scene):
        mid = scene.lf.middle
        return DisparityMap(scene.gt.disparity[mid.s, mid.t],
                            np.ones(scene.lf.dims[2:], dtype=np.float32), mid)

    def test_both_toggles_off_reproduce_propagation(self, nine_scene):
        scene = nine_scene
        backend = OracleBackend.from_scene(scene)
        cfg = PipelineConfig(enable_refinement=False, enable_occlusion=False,
                             min_mask_pixels=1)
        d = self._gt_disparity(scene)
        masks, _ = segment_lightfield(backend, scene.lf, d, cfg)
        sources = segment_source(backend, scene.lf, cfg)
        assert len(masks) == len(sources)
        for (seg_id, src), out in zip(sources, masks):
            expected = propagate_mask(src, d, scene.lf.dims[:2], segment_id=seg_id)
            np.testing.assert_array_equal(out.masks, expected.masks)
            assert all(Stage(int(x)) in (Stage.COARSE, Stage.ABSENT)
                       for x in out.stage.ravel())

    def test_zero_disparity_scene_identity_and_no_fallbacks(self, zero_disparity_scene):
        scene = zero_disparity_scene
        backend = OracleBackend.from_scene(scene)
        masks, _ = segment_lightfield(backend, scene.lf, self._gt_disparity(scene),
                                      PipelineConfig())
        assert masks
        mid = scene.lf.middle
        for m in masks:
            assert (m.stage != int(Stage.FALLBACK)).all()
            for s in range(scene.lf.dims[0]):
                for t in range(scene.lf.dims[1]):
                    np.testing.assert_array_equal(m.view(s, t), m.view(mid.s, mid.t))

    def test_middle_view_kept_bit_exact_and_occlusion_shrinks(self, occluder_scene):
        scene = occluder_scene
        backend = OracleBackend.from_scene(scene)
        cfg = PipelineConfig(enable_refinement=False)
        d = self._gt_disparity(scene)
        masks, _ = segment_lightfield(backend, scene.lf, d, cfg)
        sources = segment_source(backend, scene.lf, cfg)
        for (seg_id, src), m in zip(sources, masks):
            mid = scene.lf.middle
            np.testing.assert_array_equal(m.view(mid.s, mid.t), src.bits)
            coarse = propagate_mask(src, d, scene.lf.dims[:2])
            assert not (m.masks & ~coarse.masks).any()  # occluded subset of coarse

    def test_feature_scaling_leaves_output_unchanged(self, small_scene):
        scene = small_scene
        base = OracleBackend.from_scene(scene)
        scaled = OracleBackend(scene.lf, scene.gt.labels,
                               lambda s, t: scene.feature_image(s, t) * 7.0,
                               scene.spec.patch_grid)
        d = self._gt_disparity(scene)
        masks_a, _ = segment_lightfield(base, scene.lf, d, PipelineConfig())
        masks_b, _ = segment_lightfield(scaled, scene.lf, d, PipelineConfig())
        for a, b in zip(masks_a, masks_b):
            np.testing.assert_array_equal(a.masks, b.masks)
            np.testing.assert_array_equal(a.stage, b.stage)

    def test_worker_counts_do_not_change_output(self, nine_scene):
        scene = nine_scene
        d = self._gt_disparity(scene)
        runs = []
        for workers in (1, 4):
            backend = OracleBackend.from_scene(scene)
            masks, _ = segment_lightfield(backend, scene.lf, d, PipelineConfig(),
                                          workers=workers)
            runs.append(masks)
        for a, b in zip(*runs):
            assert a.segment_id == b.segment_id
            np.testing.assert_array_equal(a.masks, b.masks)
            np.testing.assert_array_equal(a.stage, b.stage)
            assert a.prompt_log == b.prompt_log

    def test_stub_backend_yields_no_segments(self, nine_scene):
        masks, timing = segment_lightfield(StubBackend(), nine_scene.lf,
                                           self._gt_disparity(nine_scene), PipelineConfig())
        assert masks == []
        assert timing.num_masks == 0

    def test_timing_record_fields(self, small_scene):
        scene = small_scene
        backend = OracleBackend.from_scene(scene)
        masks, timing = segment_lightfield(backend, scene.lf, self._gt_disparity(scene),
                                           PipelineConfig())
        assert timing.num_masks == len(masks)
        assert timing.num_views == scene.lf.dims[0] * scene.lf.dims[1]
        assert timing.total_ms > 0
        assert timing.per_mask_per_subview_ms == pytest.approx(
            timing.total_ms / (len(masks) * timing.num_views))


class TestPipelineConfig:
    def test_defaults(self):
        cfg = PipelineConfig()
        assert cfg.t_sim == 0.7
        assert cfg.t_iou == 0.1
        assert cfg.points_per_side == 64
        assert cfg.min_mask_pixels == 4

    @pytest.mark.parametrize("kwargs", [
        {"t_sim": 1.5}, {"t_iou": -0.1}, {"min_mask_pixels": 0},
        {"points_per_side": 0}, {"disparity_sign": 2},
    ])
    def test_validation(self, kwargs):
        with pytest.raises(LfsegError):
            PipelineConfig(**kwargs)
