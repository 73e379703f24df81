import numpy as np
import pytest
from scipy.spatial.distance import cdist

import sphcontour as sc
from sphcontour import (EmptyMaskError, VoxelSet, VoxelVolume, boundary,
                        mask_centroid, spherical_centroid)
from sphcontour.centroid import objective, select_delta

from conftest import digital_ball


def oracle_objective(c, bnd, delta, lam, spacing):
    """Definitional double loop, independent of the library path."""
    sp = np.asarray(spacing, dtype=np.float64)
    c_mm = np.asarray(c, dtype=np.float64) * sp
    total = 0.0
    for b in bnd.coords:
        total += float(np.sqrt(((b * sp - c_mm) ** 2).sum()))
    d_mm = np.asarray(delta, dtype=np.float64) * sp
    return total / len(bnd) + lam * float(np.sqrt(((d_mm - c_mm) ** 2).sum()))


def oracle_argmin(mask, lam):
    """Exhaustive brute-force argmin of the centroid objective via cdist."""
    bnd = boundary(mask)
    delta = select_delta(bnd)
    sp = mask.spacing_array()
    fg = np.argwhere(mask.data != 0)
    fg = fg[np.lexsort((fg[:, 0], fg[:, 1], fg[:, 2]))]
    b_mm = bnd.centers_mm(sp)
    vals = cdist(fg * sp, b_mm).mean(axis=1) \
        + lam * np.linalg.norm(fg * sp - np.asarray(delta) * sp, axis=1)
    best = int(np.argmin(vals))
    return tuple(int(v) for v in fg[best]), float(vals[best])


def random_blob(seed, dims=(12, 12, 12)):
    rng = np.random.default_rng(seed)
    data = (rng.random(dims) < 0.35).astype(np.uint8)
    data[5:8, 5:8, 5:8] = 1
    return VoxelVolume(data)


class TestObjective:
    def test_second_term_vanishes_when_c_equals_delta(self):
        bnd = VoxelSet(np.array([[0, 0, 0], [4, 4, 4]]), (5, 5, 5))
        v0 = objective((4, 4, 4), bnd, (4, 4, 4), 0.0, (1, 1, 1))
        v1 = objective((4, 4, 4), bnd, (4, 4, 4), 123.0, (1, 1, 1))
        assert v0 == pytest.approx(v1)

    def test_two_equidistant_points(self):
        bnd = VoxelSet(np.array([[0, 2, 2], [4, 2, 2]]), (5, 5, 5))
        assert objective((2, 2, 2), bnd, (0, 2, 2), 0.0, (1, 1, 1)) == pytest.approx(2.0)

    def test_matches_double_loop_oracle(self):
        mask = random_blob(3)
        bnd = boundary(mask)
        delta = select_delta(bnd)
        for c in [(5, 5, 5), (2, 9, 4), (7, 1, 8)]:
            got = objective(c, bnd, delta, 0.005, (1, 1.5, 2))
            want = oracle_objective(c, bnd, delta, 0.005, (1, 1.5, 2))
            assert got == pytest.approx(want, abs=1e-9)

    def test_empty_boundary_rejected(self):
        with pytest.raises(EmptyMaskError):
            objective((0, 0, 0), VoxelSet(np.empty((0, 3)), (3, 3, 3)),
                      (0, 0, 0), 0.0, (1, 1, 1))


class TestSelectDelta:
    def test_unique_max_y(self):
        bnd = VoxelSet(np.array([[1, 5, 1], [2, 3, 9]]), (10, 10, 10))
        assert select_delta(bnd) == (1, 5, 1)

    def test_tie_breaks_on_z_then_x(self):
        bnd = VoxelSet(np.array([[4, 5, 2], [1, 5, 7]]), (10, 10, 10))
        assert select_delta(bnd) == (1, 5, 7)
        bnd = VoxelSet(np.array([[4, 5, 7], [1, 5, 7]]), (10, 10, 10))
        assert select_delta(bnd) == (4, 5, 7)

    def test_agrees_with_exhaustive_scan(self):
        rng = np.random.default_rng(5)
        coords = np.unique(rng.integers(0, 15, size=(40, 3)), axis=0)
        bnd = VoxelSet(coords, (15, 15, 15))
        got = select_delta(bnd)
        best = max(map(tuple, coords), key=lambda c: (c[1], c[2], c[0]))
        assert got == best


class TestSphericalCentroid:
    def test_ball_with_zero_lambda_finds_center(self):
        mask = digital_ball(6, center=(9, 9, 9), dims=(19, 19, 19))
        sol = spherical_centroid(mask, lam=0.0)
        assert sol.point == (9, 9, 9)

    def test_lambda_pull_never_beats_returned_point(self):
        mask = digital_ball(6, center=(9, 9, 9), dims=(19, 19, 19))
        sol = spherical_centroid(mask, lam=0.005)
        bnd = boundary(mask)
        at_center = objective((9, 9, 9), bnd, sol.delta, 0.005, mask.spacing)
        assert sol.objective <= at_center + 1e-12

    def test_objective_field_consistent(self):
        mask = random_blob(11)
        sol = spherical_centroid(mask)
        bnd = boundary(mask)
        recomputed = objective(sol.point, bnd, sol.delta, sol.lam, mask.spacing)
        assert sol.objective == pytest.approx(recomputed, abs=1e-9)
        assert mask.data[sol.point] == 1

    def test_beats_rounded_plain_centroid_on_vertebra(self):
        p = sc.VertebraParams(center_jitter_seed=77)
        mask = sc.make_vertebra(p)
        sol = spherical_centroid(mask)
        bnd = boundary(mask)
        plain = tuple(int(v) for v in np.round(mask_centroid(mask) / mask.spacing_array()))
        assert sol.objective <= objective(plain, bnd, sol.delta, sol.lam, mask.spacing) + 1e-12

    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_exhaustive_matches_bruteforce_oracle(self, seed):
        mask = random_blob(seed)
        sol = spherical_centroid(mask, method="exhaustive")
        point, value = oracle_argmin(mask, sol.lam)
        assert sol.point == point
        assert sol.objective == pytest.approx(value, abs=1e-9)

    def test_coarse_matches_exhaustive_on_assorted_masks(self):
        rng = sc.SplitMix64(404)
        shapes = [digital_ball(7), random_blob(21)]
        for i in range(4):
            p = sc.sample_vertebra_params(rng, "round" if i % 2 else "boxy",
                                          scale=0.8 + 0.3 * i)
            shapes.append(sc.make_vertebra(p))
        for mask in shapes:
            a = spherical_centroid(mask, method="coarse")
            b = spherical_centroid(mask, method="exhaustive")
            assert a.point == b.point
            assert a.objective == pytest.approx(b.objective, abs=1e-12)

    def test_anisotropic_spacing_changes_answer_in_mm(self):
        data = np.zeros((9, 9, 9), dtype=np.uint8)
        data[2:7, 2:7, 3:6] = 1
        iso = spherical_centroid(VoxelVolume(data, (1, 1, 1)))
        aniso = spherical_centroid(VoxelVolume(data, (1, 1, 3)))
        assert iso.objective != pytest.approx(aniso.objective)

    def test_empty_mask_rejected(self):
        with pytest.raises(EmptyMaskError):
            spherical_centroid(VoxelVolume(np.zeros((4, 4, 4), dtype=np.uint8)))
