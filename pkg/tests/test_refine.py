import numpy as np
import pytest

import sphcontour as sc
from sphcontour import (AngleGrid, EmptyMaskError, InvalidInputError,
                        OraclePredictor, RefineConfig, VoxelVolume,
                        binarized_attention, build_matrix, connected_components,
                        dice, fit_svd, gaussian_prompt, plan_windows,
                        records_from_volume, refine_volume, spherical_centroid)
from sphcontour.refine import InstanceRecord


@pytest.fixture(scope="module")
def spine_bundle(grid5):
    """Three-instance spine, its records, and a basis whose span includes them."""
    rng = sc.SplitMix64(2024)
    params = tuple(sc.sample_vertebra_params(rng, "round" if i % 2 else "boxy")
                   for i in range(3))
    spine, records = sc.make_spine(sc.SpineSpec(params, gap=3, seed=2024), grid5)
    corpus_masks, corpus_records = sc.make_corpus(
        sc.CorpusSpec(count=12, seed=77), grid5, verify=False,
        centroid_method="coarse")
    descs = [r.descriptor for r in corpus_records] + [r.descriptor for r in records]
    basis = fit_svd(build_matrix(descs), len(descs))
    m_bar = tuple(sc.mean_instance_size(records))
    config = RefineConfig(grid=grid5, patch_size=(44, 52, 44), m_bar_mm=m_bar)
    return spine, records, basis, config


class TestGaussianPrompt:
    def test_sigma_arithmetic_equal_sizes(self):
        prompt = gaussian_prompt((20.0, 20.0, 20.0), (40, 40, 40), (40, 40, 40),
                                 (41, 41, 41), (1, 1, 1))
        assert tuple(prompt.sigma_mm) == (10.0, 10.0, 10.0)
        assert prompt.field.data[20, 20, 20] == 1.0

    def test_sigma_arithmetic_componentwise_max(self):
        prompt = gaussian_prompt((10.0, 10.0, 10.0), (20, 60, 40), (40, 40, 40),
                                 (21, 21, 21), (1, 1, 1))
        assert tuple(prompt.sigma_mm) == (10.0, 15.0, 10.0)

    def test_one_sigma_off_peak(self):
        prompt = gaussian_prompt((15.0, 15.0, 15.0), (40, 40, 40), (40, 40, 40),
                                 (31, 31, 31), (1, 1, 1))
        got = prompt.field.data[25, 15, 15]
        assert got == pytest.approx(np.exp(-0.5), abs=1e-9)

    def test_separable_product_structure(self):
        prompt = gaussian_prompt((8.0, 9.0, 10.0), (30, 35, 25), (32, 32, 32),
                                 (20, 22, 24), (1.0, 1.2, 0.8))
        data = prompt.field.data
        axes_max = [data.max(axis=(1, 2)), data.max(axis=(0, 2)), data.max(axis=(0, 1))]
        rebuilt = (axes_max[0][:, None, None] * axes_max[1][None, :, None]
                   * axes_max[2][None, None, :]) * data.max() ** -2 * data.max() ** 0
        # direct check: field / product of per-axis profiles is constant
        prod = (axes_max[0][:, None, None] * axes_max[1][None, :, None]
                * axes_max[2][None, None, :])
        ratio = data / prod
        assert np.nanmax(np.abs(ratio - ratio.flat[0])) < 1e-9

    def test_field_peaks_at_voxel_nearest_mu(self):
        prompt = gaussian_prompt((7.6, 8.4, 9.1), (30, 30, 30), (30, 30, 30),
                                 (17, 18, 19), (1, 1, 1))
        peak = np.unravel_index(np.argmax(prompt.field.data), prompt.field.dims)
        assert peak == (8, 8, 9)

    def test_nonpositive_sizes_rejected(self):
        with pytest.raises(InvalidInputError):
            gaussian_prompt((0, 0, 0), (0, 1, 1), (1, 1, 1), (5, 5, 5), (1, 1, 1))


class TestPlanWindows:
    def _volume_with_labels(self, labels):
        data = np.zeros((12, 14, 6 * (max(labels) + 1)), dtype=np.int32)
        for lab in labels:
            data[4:9, 4:10, 6 * lab:6 * lab + 5] = lab
        return VoxelVolume(data)

    def test_five_consecutive_labels(self):
        plan = plan_windows(self._volume_with_labels([1, 2, 3, 4, 5]), window=3)
        got = {w.target: w.labels for w in plan.windows}
        assert got == {1: (1, 2), 2: (1, 2, 3), 3: (2, 3, 4), 4: (3, 4, 5), 5: (4, 5)}
        assert [w.target for w in plan.windows] == [1, 2, 3, 4, 5]

    def test_single_label(self):
        plan = plan_windows(self._volume_with_labels([2]), window=3)
        assert [(w.target, w.labels) for w in plan.windows] == [(2, (2,))]

    def test_gap_never_spanned(self):
        plan = plan_windows(self._volume_with_labels([3, 4, 7]), window=3)
        got = {w.target: w.labels for w in plan.windows}
        assert got == {3: (3, 4), 4: (3, 4), 7: (7,)}

    def test_each_label_designated_once(self):
        plan = plan_windows(self._volume_with_labels([1, 2, 3, 5, 6]), window=3)
        targets = [w.target for w in plan.windows]
        assert sorted(targets) == [1, 2, 3, 5, 6]

    def test_geometry_recorded(self):
        vol = self._volume_with_labels([1, 2])
        plan = plan_windows(vol, window=3)
        for lab in (1, 2):
            assert vol.data[plan.centers_voxel[lab]] == lab
            assert (plan.sizes_mm[lab] > 0).all()

    def test_empty_rejected(self):
        with pytest.raises(EmptyMaskError):
            plan_windows(VoxelVolume(np.zeros((4, 4, 4), dtype=np.int32)))


class TestBinarizedAttention:
    def test_zero_coarse_zeroes_output(self):
        coarse = VoxelVolume(np.zeros((4, 4, 4), dtype=np.int32))
        labeled = VoxelVolume(np.full((4, 4, 4), 3, dtype=np.int32))
        assert binarized_attention(coarse, labeled).foreground_count() == 0

    def test_full_coverage_passes_labels_through(self):
        coarse = VoxelVolume(np.ones((4, 4, 4), dtype=np.int32))
        labeled = VoxelVolume(np.arange(64, dtype=np.int32).reshape(4, 4, 4) % 5)
        out = binarized_attention(coarse, labeled)
        assert (out.data == labeled.data).all()

    def test_matches_per_voxel_oracle(self):
        rng = np.random.default_rng(9)
        coarse = VoxelVolume(rng.integers(0, 3, (6, 6, 6)).astype(np.int32))
        labeled = VoxelVolume(rng.integers(0, 4, (6, 6, 6)).astype(np.int32))
        out = binarized_attention(coarse, labeled)
        for idx in np.ndindex(6, 6, 6):
            want = labeled.data[idx] if coarse.data[idx] > 0 else 0
            assert out.data[idx] == want

    def test_idempotent_in_labeled_argument(self):
        rng = np.random.default_rng(10)
        coarse = VoxelVolume(rng.integers(0, 2, (6, 6, 6)).astype(np.int32))
        labeled = VoxelVolume(rng.integers(0, 4, (6, 6, 6)).astype(np.int32))
        once = binarized_attention(coarse, labeled)
        twice = binarized_attention(coarse, once)
        assert (once.data == twice.data).all()

    def test_dims_mismatch_rejected(self):
        with pytest.raises(InvalidInputError):
            binarized_attention(VoxelVolume(np.zeros((3, 3, 3), dtype=np.int32)),
                                VoxelVolume(np.zeros((4, 4, 4), dtype=np.int32)))


class TestOraclePredictor:
    def test_absent_label_returns_none_pair(self, spine_bundle):
        spine, records, basis, config = spine_bundle
        predictor = OraclePredictor(records)
        out = predictor.predict(None, [], [1, 9], basis)
        assert out[0][0] is not None
        assert out[1] == (None, None)

    def test_coefficients_match_projection(self, spine_bundle, grid5):
        spine, records, basis, config = spine_bundle
        predictor = OraclePredictor(records)
        (center, coeffs), = predictor.predict(None, [], [2], basis)
        assert np.allclose(center, records[1].coarse_center_mm)
        assert coeffs.shape == (basis.k,)


class TestRecordsFromVolume:
    def test_self_consistency(self, spine_bundle, grid5):
        spine, records, basis, config = spine_bundle
        rebuilt = records_from_volume(spine, grid5)
        assert [r.label for r in rebuilt] == [1, 2, 3]
        for a, b in zip(records, rebuilt):
            assert np.allclose(a.coarse_center_mm, b.coarse_center_mm)
            assert np.array_equal(a.descriptor.rho, b.descriptor.rho)


class TestRefineVolume:
    def test_closed_loop_full_rank(self, spine_bundle, grid5):
        spine, records, basis, config = spine_bundle
        refined = refine_volume(spine, OraclePredictor(records), basis, config)
        for lab in spine.labels():
            assert dice(refined.label_mask(lab), spine.label_mask(lab)) >= 0.95
        assert (refined.data[spine.data == 0] == 0).all()
        for lab in refined.labels():
            assert len(connected_components(refined.label_mask(lab), 26)) == 1

    def test_absent_instance_is_skipped_without_error(self, spine_bundle):
        spine, records, basis, config = spine_bundle
        predictor = OraclePredictor(records[:2])  # label 3 unknown
        refined = refine_volume(spine, predictor, basis, config)
        assert 3 not in refined.labels()
        assert set(refined.labels()) <= {1, 2}

    def test_window_size_violation_rejected(self, spine_bundle):
        spine, records, basis, config = spine_bundle

        class BadPredictor:
            def predict(self, patch, prompts, labels, basis):
                return []

        with pytest.raises(InvalidInputError):
            refine_volume(spine, BadPredictor(), basis, config)

    def test_mismatched_grid_rejected(self, spine_bundle):
        spine, records, basis, config = spine_bundle
        bad = RefineConfig(grid=AngleGrid(10), patch_size=config.patch_size,
                           m_bar_mm=config.m_bar_mm)
        with pytest.raises(InvalidInputError):
            refine_volume(spine, OraclePredictor(records), basis, bad)

    def test_mesh_fill_method_agrees(self, spine_bundle):
        # wiring check: the mesh route must land close to the radial route
        # even on these small instances, where ~20% of each mask sits
        # exactly on the decoded surface and inter-label reassignment
        # amplifies single-voxel fill differences
        spine, records, basis, config = spine_bundle
        radial = refine_volume(spine, OraclePredictor(records), basis, config)
        mesh_cfg = RefineConfig(grid=config.grid, patch_size=config.patch_size,
                                m_bar_mm=config.m_bar_mm, fill_method="mesh")
        meshed = refine_volume(spine, OraclePredictor(records), basis, mesh_cfg)
        for lab in spine.labels():
            assert dice(radial.label_mask(lab), meshed.label_mask(lab)) >= 0.93


class TestInstanceRecordValidation:
    def test_rejects_bad_fields(self):
        with pytest.raises(InvalidInputError):
            InstanceRecord(0, np.zeros(3), np.ones(3))
        with pytest.raises(InvalidInputError):
            InstanceRecord(1, np.zeros(3), np.zeros(3))
        with pytest.raises(InvalidInputError):
            InstanceRecord(1, np.zeros(2), np.ones(3))
