"""Contour descriptor to filled voxel mask.

Two routes produce a mask from a descriptor:

* :func:`radial_fill` is the reference semantics: a voxel is inside iff
  its distance to the center does not exceed the descriptor radius of
  its direction bin.  It is the thresholded :func:`radial_field`.
* The mesh route runs classic marching cubes on :func:`radial_field` and
  fills the resulting triangle mesh with parity ray casting
  (:func:`voxelize_fill`).  It exists for fidelity to mesh-based
  pipelines and is cross-checked against the reference route, never
  privileged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._mc_tables import CORNER_OFFSETS, EDGE_CORNERS, EDGE_TABLE, TRI_TABLE
from .codec import ContourDescriptor, bin_directions
from .errors import InvalidInputError, ParityError
from .volume import VoxelVolume, voxel_centers_mm

# Ray origins are offset by ~1e-4 voxel so rays never pass exactly through
# mesh edges or vertices.  The two offsets differ by an irrational-ish
# ratio: descriptor fields place mesh vertices exactly on lattice points
# (each bin's max radius is attained at a voxel center), and equal y/z
# offsets would slide rays straight down the resulting 45-degree edges.
_RAY_JITTER_Y = 1.0e-4
_RAY_JITTER_Z = 2.718281828e-4
# Crossings this close behind a voxel center (fraction of a voxel) still
# count as beyond it, so surfaces that graze a center classify it inside,
# like radial_fill's inclusive "distance <= rho".
_CROSS_EPS = 1e-2

# Iso level that meshes the CLOSED region {field >= 0}.  Descriptor
# fields are exactly zero at each bin's defining surface voxel (the max
# radius is attained there), and a mesh extracted at iso 0 would pinch
# through those voxel centers, leaving them outside the parity fill.
# Extracting slightly below zero gives those contacts enough volume for
# the jittered rays to cross (the enclosure must exceed the ray offsets)
# while displacing the surface by only ~1e-3 voxel; together with
# _CROSS_EPS this keeps the mesh route's voxel classification aligned
# with radial_fill's.
MESH_ISO_INCLUSIVE = -1e-3


@dataclass(frozen=True)
class TriangleMesh:
    """Indexed triangle mesh; vertices in mm."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        tris = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if tris.size:
            if tris.min() < 0 or tris.max() >= verts.shape[0]:
                raise InvalidInputError("triangle indices out of range")
            a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
            if ((a == b) | (b == c) | (a == c)).any():
                raise InvalidInputError("degenerate triangle with repeated vertex index")
        verts.setflags(write=False)
        tris.setflags(write=False)
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "triangles", tris)

    @property
    def is_empty(self) -> bool:
        return self.triangles.shape[0] == 0


def radial_field(d: ContourDescriptor, dims, spacing) -> VoxelVolume:
    """Signed radial difference field: rho(bin of v) - |v - center|.

    Positive inside the described shape, negative outside; its zero level
    set is the decoded contour.  The voxel coinciding with the center (if
    any) takes bin 0, which is irrelevant since its distance term is 0.
    """
    dims = tuple(int(v) for v in dims)
    spacing = tuple(float(s) for s in spacing)
    center_idx = d.center / np.asarray(spacing)
    if (center_idx < 0).any() or (center_idx > np.asarray(dims) - 1).any():
        raise InvalidInputError(
            f"descriptor center {d.center.tolist()} mm is outside the target grid")
    vecs = voxel_centers_mm(dims, spacing) - d.center
    bins, rho = bin_directions(vecs, d.grid)
    field = (d.rho[bins] - rho).astype(np.float32).reshape(dims)
    return VoxelVolume(field, spacing)


def radial_fill(d: ContourDescriptor, dims, spacing) -> VoxelVolume:
    """Reference mask: voxel inside iff |v - center| <= rho(bin of v)."""
    field = radial_field(d, dims, spacing)
    return VoxelVolume((field.data >= 0.0).astype(np.uint8), field.spacing)


def mesh_fill(d: ContourDescriptor, dims, spacing) -> tuple[VoxelVolume, TriangleMesh]:
    """Mesh route for the same region radial_fill produces.

    Runs marching cubes at :data:`MESH_ISO_INCLUSIVE` so the mesh encloses
    the closed region {field >= 0}, then parity-fills it.  Returns the
    filled mask and the mesh.
    """
    field = radial_field(d, dims, spacing)
    mesh = marching_cubes(field, MESH_ISO_INCLUSIVE)
    return voxelize_fill(mesh, dims, spacing), mesh


def marching_cubes(field: VoxelVolume, iso: float = 0.0) -> TriangleMesh:
    """Classic 256-case marching cubes with linear edge interpolation.

    Corners with value < iso count as inside.  Shared cube edges reuse
    the same interpolated vertex, so the mesh is watertight whenever the
    iso level avoids grid values exactly.  Vertices are returned in mm.
    """
    data = np.asarray(field.data, dtype=np.float64)
    if not np.isfinite(data).all():
        raise InvalidInputError("marching_cubes: field contains non-finite values")
    nx, ny, nz = data.shape
    if nx < 2 or ny < 2 or nz < 2:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    inside = data < iso

    # Case index per cell, vectorized over the (nx-1, ny-1, nz-1) cell grid.
    case = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.int64)
    for bit, (ox, oy, oz) in enumerate(CORNER_OFFSETS):
        case |= inside[ox:nx - 1 + ox, oy:ny - 1 + oy, oz:nz - 1 + oz].astype(np.int64) << bit
    active = np.argwhere((case != 0) & (case != 255))
    if active.size == 0:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    spacing = np.asarray(field.spacing)
    vert_ids: dict[tuple[int, int, int, int], int] = {}
    vertices: list[np.ndarray] = []
    triangles: list[tuple[int, int, int]] = []

    # Global edge key: owning lattice point plus axis, so neighbors share
    # interpolated vertices exactly.
    def edge_vertex(cell, edge):
        ca, cb = EDGE_CORNERS[edge]
        pa = cell + CORNER_OFFSETS[ca]
        pb = cell + CORNER_OFFSETS[cb]
        lo, hi = (pa, pb) if tuple(pa) <= tuple(pb) else (pb, pa)
        axis = int(np.nonzero(hi - lo)[0][0])
        key = (int(lo[0]), int(lo[1]), int(lo[2]), axis)
        vid = vert_ids.get(key)
        if vid is None:
            va = data[tuple(pa)]
            vb = data[tuple(pb)]
            denom = vb - va
            t = 0.5 if abs(denom) < 1e-300 else (iso - va) / denom
            t = min(max(t, 0.0), 1.0)
            pos = (pa + t * (pb - pa)) * spacing
            vid = len(vertices)
            vert_ids[key] = vid
            vertices.append(pos)
        return vid

    for cell in active:
        row = TRI_TABLE[case[tuple(cell)]]
        for j in range(0, 16, 3):
            if row[j] < 0:
                break
            ids = (edge_vertex(cell, int(row[j])),
                   edge_vertex(cell, int(row[j + 1])),
                   edge_vertex(cell, int(row[j + 2])))
            if ids[0] != ids[1] and ids[1] != ids[2] and ids[0] != ids[2]:
                triangles.append(ids)

    if not triangles:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    return TriangleMesh(np.asarray(vertices), np.asarray(triangles, dtype=np.int64))


def voxelize_fill(mesh: TriangleMesh, dims, spacing) -> VoxelVolume:
    """Fill a watertight mesh by +x parity ray casting.

    One ray per (y, z) voxel row, offset by a fixed sub-voxel jitter so
    rays never hit mesh edges or vertices exactly; a voxel is inside iff
    an odd number of triangle crossings lie beyond (or within a hundredth
    of a voxel behind) its center.  Rays with an odd total crossing count
    indicate a non-watertight mesh and raise :class:`ParityError` with
    the offending ray count.
    """
    dims = tuple(int(v) for v in dims)
    spacing = tuple(float(s) for s in spacing)
    out = np.zeros(dims, dtype=np.uint8)
    if mesh.is_empty:
        return VoxelVolume(out, spacing)

    tri = mesh.vertices[mesh.triangles]  # (T, 3 verts, xyz)
    tz = tri[:, :, 2]
    z_min, z_max = tz.min(axis=1), tz.max(axis=1)

    ys = np.arange(dims[1]) * spacing[1] + _RAY_JITTER_Y * spacing[1]
    zs = np.arange(dims[2]) * spacing[2] + _RAY_JITTER_Z * spacing[2]
    x_thresholds = (np.arange(dims[0]) - _CROSS_EPS) * spacing[0]
    odd_rays = 0

    for zi, z0 in enumerate(zs):
        zsel = np.flatnonzero((z_min <= z0) & (z0 <= z_max))
        if zsel.size == 0:
            continue
        t = tri[zsel]
        # 2D barycentric test of every (y, z0) ray against every candidate
        # triangle's (y, z) projection, vectorized over the z-slab.
        ay, az = t[:, 0, 1, None], t[:, 0, 2, None]
        by, bz = t[:, 1, 1, None], t[:, 1, 2, None]
        cy, cz = t[:, 2, 1, None], t[:, 2, 2, None]
        y0 = ys[None, :]
        d1 = (by - ay) * (z0 - az) - (bz - az) * (y0 - ay)
        d2 = (cy - by) * (z0 - bz) - (cz - bz) * (y0 - by)
        d3 = (ay - cy) * (z0 - cz) - (az - cz) * (y0 - cy)
        hit = ((d1 > 0) & (d2 > 0) & (d3 > 0)) | ((d1 < 0) & (d2 < 0) & (d3 < 0))
        tri_idx, y_idx = np.nonzero(hit)
        if tri_idx.size == 0:
            continue
        area = d1[tri_idx, y_idx] + d2[tri_idx, y_idx] + d3[tri_idx, y_idx]
        th = t[tri_idx]
        x_cross = (d2[tri_idx, y_idx] * th[:, 0, 0]
                   + d3[tri_idx, y_idx] * th[:, 1, 0]
                   + d1[tri_idx, y_idx] * th[:, 2, 0]) / area
        for yi in np.unique(y_idx):
            xc = np.sort(x_cross[y_idx == yi])
            if xc.size % 2:
                odd_rays += 1
                continue
            beyond = xc.size - np.searchsorted(xc, x_thresholds, side="right")
            out[:, yi, zi] = (beyond % 2).astype(np.uint8)

    if odd_rays:
        raise ParityError(odd_rays)
    return VoxelVolume(out, spacing)


def write_stl(mesh: TriangleMesh, path) -> None:
    """Export a mesh as ASCII STL for external inspection."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("solid contour\n")
        for t in mesh.triangles:
            a, b, c = mesh.vertices[t]
            n = np.cross(b - a, c - a)
            norm = np.linalg.norm(n)
            n = n / norm if norm > 0 else np.zeros(3)
            fh.write(f"  facet normal {n[0]:.6e} {n[1]:.6e} {n[2]:.6e}\n")
            fh.write("    outer loop\n")
            for v in (a, b, c):
                fh.write(f"      vertex {v[0]:.6e} {v[1]:.6e} {v[2]:.6e}\n")
            fh.write("    endloop\n")
            fh.write("  endfacet\n")
        fh.write("endsolid contour\n")
