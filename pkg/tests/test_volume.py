import numpy as np
import pytest

from sphcontour import (CorruptFileError, EmptyMaskError, InvalidInputError,
                        Patch, VoxelSet, VoxelVolume, boundary,
                        connected_components, crop_patch, dilate, mask_centroid,
                        paste_patch, read_volume, surface, write_volume)

from conftest import digital_ball


def random_mask(shape, density, seed):
    rng = np.random.default_rng(seed)
    return VoxelVolume((rng.random(shape) < density).astype(np.uint8))


class TestVoxelVolume:
    def test_validation(self):
        with pytest.raises(InvalidInputError):
            VoxelVolume(np.zeros((3, 3), dtype=np.uint8))
        with pytest.raises(InvalidInputError):
            VoxelVolume(np.zeros((3, 3, 3), dtype=np.uint8), spacing=(1, 0, 1))
        with pytest.raises(InvalidInputError):
            VoxelVolume(-np.ones((2, 2, 2), dtype=np.int32))

    def test_labels_and_masks(self):
        data = np.zeros((4, 4, 4), dtype=np.int32)
        data[0, 0, 0] = 2
        data[1, 1, 1] = 5
        vol = VoxelVolume(data)
        assert vol.labels() == [2, 5]
        assert vol.label_mask(2).foreground_count() == 1
        assert vol.binarized().foreground_count() == 2


class TestVoxelSet:
    def test_sorted_and_deduped(self):
        vs = VoxelSet(np.array([[2, 0, 0], [0, 0, 0], [1, 1, 1]]), (3, 3, 3))
        assert vs.coords[0].tolist() == [0, 0, 0]
        assert len(vs) == 3

    def test_rejects_out_of_bounds_and_duplicates(self):
        with pytest.raises(InvalidInputError):
            VoxelSet(np.array([[3, 0, 0]]), (3, 3, 3))
        with pytest.raises(InvalidInputError):
            VoxelSet(np.array([[1, 1, 1], [1, 1, 1]]), (3, 3, 3))


class TestDilate:
    def test_single_voxel_radius_1_gives_27_cube(self):
        data = np.zeros((11, 11, 11), dtype=np.uint8)
        data[5, 5, 5] = 1
        out = dilate(VoxelVolume(data), 1)
        assert out.foreground_count() == 27
        assert out.data[4:7, 4:7, 4:7].all()

    def test_empty_stays_empty(self):
        out = dilate(VoxelVolume(np.zeros((5, 5, 5), dtype=np.uint8)), 1)
        assert out.foreground_count() == 0

    def test_l_shape_matches_bruteforce_neighborhood_scan(self):
        data = np.zeros((9, 9, 4), dtype=np.uint8)
        data[2:7, 2:4, 1:3] = 1
        data[2:4, 2:7, 1:3] = 1
        mask = VoxelVolume(data)
        got = dilate(mask, 1).data
        expect = np.zeros_like(data)
        fg = np.argwhere(data)
        for x, y, z in np.ndindex(data.shape):
            cheb = np.max(np.abs(fg - (x, y, z)), axis=1)
            expect[x, y, z] = 1 if (cheb <= 1).any() else 0
        assert (got == expect).all()

    def test_monotone_and_extensive(self):
        small = random_mask((12, 12, 12), 0.05, seed=3)
        big_data = small.data.copy()
        big_data[6:9, 6:9, 6:9] = 1
        big = VoxelVolume(big_data)
        ds, db = dilate(small, 1).data, dilate(big, 1).data
        assert (ds <= db).all()
        assert (small.data <= ds).all()

    def test_radius_2_is_chebyshev_ball(self):
        data = np.zeros((9, 9, 9), dtype=np.uint8)
        data[4, 4, 4] = 1
        out = dilate(VoxelVolume(data), 2)
        assert out.foreground_count() == 125

    def test_rejects_nonbinary(self):
        with pytest.raises(InvalidInputError):
            dilate(VoxelVolume(2 * np.ones((3, 3, 3), dtype=np.int32)), 1)


class TestBoundary:
    def test_single_voxel_gives_26_neighbors(self):
        data = np.zeros((7, 7, 7), dtype=np.uint8)
        data[3, 3, 3] = 1
        b = boundary(VoxelVolume(data))
        assert len(b) == 26
        assert not any((c == (3, 3, 3)).all() for c in b.coords)

    def test_ball_shell_hugs_mask(self):
        mask = digital_ball(6)
        b = boundary(mask)
        fg = np.argwhere(mask.data)
        for voxel in b.coords:
            cheb = np.max(np.abs(fg - voxel), axis=1).min()
            assert cheb == 1

    def test_disjoint_from_mask(self):
        mask = random_mask((10, 10, 10), 0.2, seed=5)
        if mask.foreground_count() == 0:
            pytest.skip("empty draw")
        b = boundary(mask)
        assert not mask.data[tuple(b.coords.T)].any()

    def test_full_grid_has_empty_boundary(self):
        b = boundary(VoxelVolume(np.ones((4, 4, 4), dtype=np.uint8)))
        assert len(b) == 0

    def test_empty_mask_raises(self):
        with pytest.raises(EmptyMaskError):
            boundary(VoxelVolume(np.zeros((4, 4, 4), dtype=np.uint8)))


class TestSurface:
    def test_subset_of_mask_with_face_background(self):
        mask = digital_ball(5)
        s = surface(mask)
        assert mask.data[tuple(s.coords.T)].all()
        padded = np.pad(mask.data, 1)
        for voxel in s.coords:
            x, y, z = voxel + 1
            faces = [padded[x - 1, y, z], padded[x + 1, y, z], padded[x, y - 1, z],
                     padded[x, y + 1, z], padded[x, y, z - 1], padded[x, y, z + 1]]
            assert 0 in faces


class TestConnectedComponents:
    def test_two_separated_voxels(self):
        data = np.zeros((8, 8, 8), dtype=np.uint8)
        data[1, 1, 1] = 1
        data[6, 6, 6] = 1
        comps = connected_components(VoxelVolume(data), 26)
        assert [len(c) for c in comps] == [1, 1]

    def test_corner_touching_cubes_connectivity_semantics(self):
        data = np.zeros((8, 8, 8), dtype=np.uint8)
        data[1:3, 1:3, 1:3] = 1
        data[3:5, 3:5, 3:5] = 1
        vol = VoxelVolume(data)
        assert len(connected_components(vol, 6)) == 2
        assert len(connected_components(vol, 26)) == 1

    def test_random_noise_matches_floodfill_oracle(self):
        mask = random_mask((16, 16, 16), 0.25, seed=11)
        comps = connected_components(mask, 6)

        # flood-fill oracle
        seen = np.zeros(mask.dims, dtype=bool)
        oracle = []
        offsets = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
        for start in map(tuple, np.argwhere(mask.data)):
            if seen[start]:
                continue
            stack, comp = [start], []
            seen[start] = True
            while stack:
                v = stack.pop()
                comp.append(v)
                for o in offsets:
                    w = (v[0] + o[0], v[1] + o[1], v[2] + o[2])
                    if all(0 <= w[i] < mask.dims[i] for i in range(3)) \
                            and mask.data[w] and not seen[w]:
                        seen[w] = True
                        stack.append(w)
            oracle.append(sorted(comp))
        got = sorted(sorted(map(tuple, c.coords)) for c in comps)
        assert got == sorted(oracle)

    def test_partition_properties_and_order(self):
        mask = random_mask((12, 12, 12), 0.3, seed=7)
        comps = connected_components(mask, 26)
        sizes = [len(c) for c in comps]
        assert sizes == sorted(sizes, reverse=True)
        total = sum(sizes)
        assert total == mask.foreground_count()
        all_coords = np.concatenate([c.coords for c in comps]) if comps else np.empty((0, 3))
        assert len(np.unique(all_coords, axis=0)) == total

    def test_empty_gives_empty_list(self):
        assert connected_components(VoxelVolume(np.zeros((3, 3, 3), dtype=np.uint8))) == []


class TestMaskCentroid:
    def test_unit_voxel_with_anisotropic_spacing(self):
        data = np.zeros((5, 5, 6), dtype=np.uint8)
        data[2, 3, 4] = 1
        c = mask_centroid(VoxelVolume(data, (1, 1, 2)))
        assert np.allclose(c, (2, 3, 8))

    def test_symmetric_ball_centered(self):
        c = mask_centroid(digital_ball(6, center=(10, 10, 10), dims=(21, 21, 21)))
        assert np.allclose(c, (10, 10, 10), atol=1e-9)

    def test_random_blob_matches_sum_count_oracle(self):
        mask = random_mask((9, 9, 9), 0.4, seed=2)
        coords = np.argwhere(mask.data)
        expect = coords.sum(axis=0) / len(coords)
        assert np.allclose(mask_centroid(mask), expect, atol=1e-12)

    def test_empty_raises(self):
        with pytest.raises(EmptyMaskError):
            mask_centroid(VoxelVolume(np.zeros((3, 3, 3), dtype=np.uint8)))


class TestCropPaste:
    def test_full_crop_is_identity(self):
        vol = random_mask((8, 8, 8), 0.5, seed=9)
        patch = crop_patch(vol, (4, 4, 4), (8, 8, 8))
        assert (patch.volume.data == vol.data).all()
        assert patch.offset == (0, 0, 0)

    def test_overhang_zero_padded(self):
        vol = VoxelVolume(np.ones((6, 6, 6), dtype=np.uint8))
        patch = crop_patch(vol, (3, 3, 0), (4, 4, 6))
        assert patch.offset[2] == -3
        assert not patch.volume.data[:, :, :3].any()
        assert patch.volume.data[:, :, 3:].all()

    def test_roundtrip_on_overlap(self):
        vol = random_mask((10, 10, 10), 0.5, seed=13)
        patch = crop_patch(vol, (2, 8, 5), (6, 6, 6))
        restored = paste_patch(VoxelVolume(np.zeros(vol.dims, dtype=vol.data.dtype)), patch)
        lo = np.maximum(np.asarray(patch.offset), 0)
        hi = np.minimum(np.asarray(patch.offset) + 6, 10)
        sl = tuple(slice(a, b) for a, b in zip(lo, hi))
        assert (restored.data[sl] == vol.data[sl]).all()

    def test_center_outside_raises(self):
        vol = random_mask((5, 5, 5), 0.5, seed=1)
        with pytest.raises(InvalidInputError):
            crop_patch(vol, (5, 0, 0), (3, 3, 3))


class TestSvolFiles:
    def test_label_roundtrip_exact(self, tmp_path):
        vol = VoxelVolume(np.arange(60, dtype=np.int32).reshape(3, 4, 5) % 7,
                          (0.5, 1.0, 1.998))
        path = tmp_path / "v.svol"
        write_volume(vol, path)
        back = read_volume(path)
        assert back.dims == vol.dims
        assert back.spacing == vol.spacing
        assert (back.data == vol.data).all()

    def test_scalar_roundtrip_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        vol = VoxelVolume(rng.standard_normal((4, 3, 2)).astype(np.float32))
        path = tmp_path / "f.svol"
        write_volume(vol, path)
        back = read_volume(path)
        assert back.data.dtype == np.float32
        assert (back.data == vol.data).all()

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "v.svol"
        write_volume(VoxelVolume(np.ones((3, 3, 3), dtype=np.int32)), path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-4])
        with pytest.raises(CorruptFileError):
            read_volume(path)

    def test_dims_payload_mismatch_rejected(self, tmp_path):
        path = tmp_path / "v.svol"
        header = b'{"magic": "SVOL", "version": 1, "dims": [2, 2, 2], ' \
                 b'"spacing": [1, 1, 1], "dtype": "u16"}\n'
        path.write_bytes(header + b"\x00" * 10)
        with pytest.raises(CorruptFileError):
            read_volume(path)

    @pytest.mark.parametrize("mangle", [
        b'not json\n',
        b'{"magic": "NOPE", "version": 1}\n',
        b'{"magic": "SVOL", "version": 9, "dims": [1, 1, 1], "spacing": [1, 1, 1], "dtype": "u16"}\n',
        b'{"magic": "SVOL", "version": 1, "dims": [0, 1, 1], "spacing": [1, 1, 1], "dtype": "u16"}\n',
        b'{"magic": "SVOL", "version": 1, "dims": [1, 1, 1], "spacing": [1, -1, 1], "dtype": "u16"}\n',
        b'{"magic": "SVOL", "version": 1, "dims": [1, 1, 1], "spacing": [1, 1, 1], "dtype": "u64"}\n',
    ])
    def test_bad_headers_rejected(self, tmp_path, mangle):
        path = tmp_path / "bad.svol"
        path.write_bytes(mangle + b"\x00\x00")
        with pytest.raises(CorruptFileError):
            read_volume(path)

    def test_label_overflow_rejected(self, tmp_path):
        vol = VoxelVolume(np.full((2, 2, 2), 70000, dtype=np.int32))
        with pytest.raises(InvalidInputError):
            write_volume(vol, tmp_path / "v.svol")
