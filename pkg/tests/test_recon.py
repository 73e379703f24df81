from collections import Counter

import numpy as np
import pytest

import sphcontour as sc
from sphcontour import (ContourDescriptor, ParityError, TriangleMesh,
                        VoxelVolume, dice, marching_cubes, radial_field,
                        radial_fill, voxelize_fill, write_stl)
from sphcontour.codec import bin_directions
from sphcontour.recon import MESH_ISO_INCLUSIVE, mesh_fill

from conftest import digital_ball


@pytest.fixture(scope="module")
def vertebra_descriptor():
    mask = sc.make_vertebra(sc.VertebraParams(center_jitter_seed=3))
    sol = sc.spherical_centroid(mask, method="coarse")
    center = np.asarray(sol.point, dtype=float) * mask.spacing_array()
    desc = sc.encode(sc.surface(mask), center, sc.AngleGrid(5), mask.spacing)
    return mask, desc


def sphere_field(radius, n, spacing=(1.0, 1.0, 1.0)):
    c = np.array([(n - 1) / 2.0] * 3)
    xs = np.arange(n)[:, None, None]
    ys = np.arange(n)[None, :, None]
    zs = np.arange(n)[None, None, :]
    dist = np.sqrt((xs - c[0]) ** 2 + (ys - c[1]) ** 2 + (zs - c[2]) ** 2)
    return VoxelVolume((radius - dist).astype(np.float32), spacing), c


def edge_multiplicities(mesh):
    cnt = Counter()
    for t in mesh.triangles:
        for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            cnt[(min(a, b), max(a, b))] += 1
    return set(cnt.values())


class TestRadialField:
    def test_constant_descriptor_zero_set_is_sphere(self, grid5):
        d = ContourDescriptor(np.full(grid5.size, 8.0), grid5,
                              np.array([10.0, 10.0, 10.0]))
        field = radial_field(d, (21, 21, 21), (1, 1, 1))
        xs = np.arange(21)[:, None, None]
        ys = np.arange(21)[None, :, None]
        zs = np.arange(21)[None, None, :]
        dist = np.sqrt((xs - 10.0) ** 2 + (ys - 10.0) ** 2 + (zs - 10.0) ** 2)
        crossing = np.abs(dist - 8.0) < 0.5
        assert (np.sign(field.data[~crossing]) == np.sign(8.0 - dist[~crossing])).all()

    def test_center_voxel_positive(self, grid5):
        rho = np.random.default_rng(1).uniform(4.0, 9.0, grid5.size)
        d = ContourDescriptor(rho, grid5, np.array([8.0, 8.0, 8.0]))
        field = radial_field(d, (17, 17, 17), (1, 1, 1))
        assert field.data[8, 8, 8] > 0

    def test_sign_matches_binning_oracle_at_random_voxels(self, grid5, vertebra_descriptor):
        mask, d = vertebra_descriptor
        field = radial_field(d, mask.dims, mask.spacing)
        rng = np.random.default_rng(3)
        idx = np.column_stack([rng.integers(0, s, 1000) for s in mask.dims])
        vecs = idx * mask.spacing_array() - d.center
        bins, rho = bin_directions(vecs, grid5)
        want = d.rho[bins] - rho
        got = field.data[idx[:, 0], idx[:, 1], idx[:, 2]]
        assert np.allclose(got, want, atol=1e-5)

    def test_center_outside_grid_rejected(self, grid5):
        d = ContourDescriptor(np.full(grid5.size, 2.0), grid5,
                              np.array([50.0, 0.0, 0.0]))
        with pytest.raises(sc.InvalidInputError):
            radial_field(d, (9, 9, 9), (1, 1, 1))


class TestMarchingCubes:
    def test_sphere_mesh_vertex_distances(self):
        field, c = sphere_field(9.0, 25)
        mesh = marching_cubes(field, 0.0)
        r = np.linalg.norm(mesh.vertices - c, axis=1)
        assert r.min() >= 8.0 and r.max() <= 10.0
        assert edge_multiplicities(mesh) == {2}

    def test_constant_negative_field_empty(self):
        field = VoxelVolume(np.full((6, 6, 6), -1.0, dtype=np.float32))
        assert marching_cubes(field, 0.0).is_empty

    def test_single_positive_voxel_small_closed_mesh(self):
        data = np.full((7, 7, 7), -1.0, dtype=np.float32)
        data[3, 3, 3] = 1.0
        mesh = marching_cubes(VoxelVolume(data), 0.0)
        assert len(mesh.triangles) == 8
        assert edge_multiplicities(mesh) == {2}
        assert np.linalg.norm(mesh.vertices - 3.0, axis=1).max() < 1.0

    def test_nonfinite_field_rejected(self):
        data = np.zeros((4, 4, 4), dtype=np.float32)
        data[1, 1, 1] = np.nan
        with pytest.raises(sc.InvalidInputError):
            marching_cubes(VoxelVolume(data), 0.0)

    def test_mesh_validation(self):
        with pytest.raises(sc.InvalidInputError):
            TriangleMesh(np.zeros((3, 3)), np.array([[0, 1, 1]]))
        with pytest.raises(sc.InvalidInputError):
            TriangleMesh(np.zeros((3, 3)), np.array([[0, 1, 5]]))


class TestVoxelizeFill:
    def test_sphere_mesh_fills_digital_ball(self):
        field, c = sphere_field(10.0, 27)
        mesh = marching_cubes(field, 0.0)
        fill = voxelize_fill(mesh, (27, 27, 27), (1, 1, 1))
        ball = digital_ball(10, center=tuple(c), dims=(27, 27, 27))
        assert dice(fill, ball) >= 0.98

    def test_empty_mesh_empty_mask(self):
        mesh = TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
        fill = voxelize_fill(mesh, (5, 5, 5), (1, 1, 1))
        assert fill.foreground_count() == 0

    def test_open_mesh_raises_parity_error(self):
        field, _ = sphere_field(6.0, 17)
        mesh = marching_cubes(field, 0.0)
        holed = TriangleMesh(mesh.vertices, mesh.triangles[:-30])
        with pytest.raises(ParityError) as exc:
            voxelize_fill(holed, (17, 17, 17), (1, 1, 1))
        assert exc.value.ray_count > 0

    def test_cross_path_agreement_on_vertebra(self, vertebra_descriptor):
        mask, d = vertebra_descriptor
        fill_radial = radial_fill(d, mask.dims, mask.spacing)
        fill_mesh, mesh = mesh_fill(d, mask.dims, mask.spacing)
        assert not mesh.is_empty
        assert dice(fill_radial, fill_mesh) >= 0.95


class TestRadialFill:
    def test_constant_descriptor_gives_digital_ball(self, grid5):
        d = ContourDescriptor(np.full(grid5.size, 7.0), grid5,
                              np.array([10.0, 10.0, 10.0]))
        fill = radial_fill(d, (21, 21, 21), (1, 1, 1))
        ball = digital_ball(7, center=(10, 10, 10), dims=(21, 21, 21))
        assert (fill.data == ball.data).all()

    def test_roundtrip_dice_on_star_convex_shape(self, vertebra_descriptor):
        mask, d = vertebra_descriptor
        fill = radial_fill(d, mask.dims, mask.spacing)
        assert dice(fill, mask) >= 0.95

    def test_monotone_in_rho(self, grid5):
        rng = np.random.default_rng(5)
        rho = rng.uniform(3.0, 6.0, grid5.size)
        center = np.array([10.0, 10.0, 10.0])
        small = radial_fill(ContourDescriptor(rho, grid5, center), (21, 21, 21), (1, 1, 1))
        big = radial_fill(ContourDescriptor(rho + rng.uniform(0, 2, grid5.size),
                                            grid5, center), (21, 21, 21), (1, 1, 1))
        assert (small.data <= big.data).all()


class TestMeshIsoLevel:
    def test_inclusive_iso_recovers_on_surface_voxels(self, vertebra_descriptor):
        # at iso exactly 0 the mesh pinches through bin-defining voxels;
        # the inclusive level encloses them like radial_fill does
        mask, d = vertebra_descriptor
        field = radial_field(d, mask.dims, mask.spacing)
        zero_voxels = int((field.data == 0).sum())
        assert zero_voxels > 0
        fill_mesh, _ = mesh_fill(d, mask.dims, mask.spacing)
        on_surface = field.data == 0
        assert fill_mesh.data[on_surface].mean() > 0.6
        assert MESH_ISO_INCLUSIVE < 0


class TestStlExport:
    def test_writes_parseable_ascii(self, tmp_path):
        field, _ = sphere_field(4.0, 11)
        mesh = marching_cubes(field, 0.0)
        path = tmp_path / "m.stl"
        write_stl(mesh, path)
        text = path.read_text()
        assert text.startswith("solid")
        assert text.count("facet normal") == len(mesh.triangles)
        assert text.count("vertex") == 3 * len(mesh.triangles)
