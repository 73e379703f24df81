"""Dense voxel volumes and binary-mask machinery.

A :class:`VoxelVolume` is a dense 3D grid of integer labels (0 is
background) or real scalars, with a physical voxel spacing in mm.  Arrays
are indexed ``data[x, y, z]``.  Physical coordinates follow the
voxel-center convention: voxel index ``(i, j, k)`` sits at
``(i*sx, j*sy, k*sz)`` mm, with the origin at index 0.

The module also provides the morphology used throughout the pipeline:
Chebyshev dilation, exterior boundary shells, interior surface extraction,
connected components, centroids, patch cropping, and SVOL container I/O.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import CorruptFileError, EmptyMaskError, InvalidInputError

_STRUCT26 = np.ones((3, 3, 3), dtype=bool)
_STRUCT6 = ndimage.generate_binary_structure(3, 1)


@dataclass(frozen=True)
class VoxelVolume:
    """Dense labeled or scalar volume with physical spacing.

    Attributes:
        data: array of shape ``dims``, indexed ``[x, y, z]``.  Integer
            dtypes hold labels (all values >= 0); float dtypes hold scalars.
        spacing: physical voxel size (sx, sy, sz) in mm/voxel, all > 0.
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.data.ndim != 3:
            raise InvalidInputError(f"volume data must be 3D, got {self.data.ndim}D")
        if any(d <= 0 for d in self.data.shape):
            raise InvalidInputError(f"volume dims must be positive, got {self.data.shape}")
        sp = tuple(float(s) for s in self.spacing)
        if len(sp) != 3 or any(s <= 0 for s in sp):
            raise InvalidInputError(f"spacing must be 3 positive reals, got {self.spacing}")
        object.__setattr__(self, "spacing", sp)
        if np.issubdtype(self.data.dtype, np.integer) and self.data.size:
            if self.data.min() < 0:
                raise InvalidInputError("label volumes must be non-negative")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def is_binary(self) -> bool:
        return bool(np.isin(self.data, (0, 1)).all())

    def spacing_array(self) -> np.ndarray:
        return np.asarray(self.spacing, dtype=np.float64)

    def foreground_count(self) -> int:
        return int(np.count_nonzero(self.data))

    def labels(self) -> list[int]:
        """Sorted nonzero label values present in the volume."""
        vals = np.unique(self.data)
        return [int(v) for v in vals if v != 0]

    def binarized(self) -> "VoxelVolume":
        """Foreground indicator of this volume (labels collapsed to 1)."""
        return VoxelVolume((self.data != 0).astype(np.uint8), self.spacing)

    def label_mask(self, label: int) -> "VoxelVolume":
        """Binary mask of one label."""
        return VoxelVolume((self.data == label).astype(np.uint8), self.spacing)


@dataclass(frozen=True)
class VoxelSet:
    """A set of voxel indices on a grid of known dims.

    Coordinates are stored as an (n, 3) integer array in lexicographic
    (x, y, z) order, which makes downstream reductions deterministic.
    """

    coords: np.ndarray
    dims: tuple[int, int, int]

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.int64)
        if coords.size == 0:
            coords = coords.reshape(0, 3)
        if coords.ndim != 2 or coords.shape[1] != 3:
            raise InvalidInputError(f"coords must be (n, 3), got {coords.shape}")
        dims = tuple(int(d) for d in self.dims)
        if coords.size:
            if coords.min() < 0 or (coords >= np.asarray(dims)).any():
                raise InvalidInputError("voxel coordinates outside grid dims")
            order = np.lexsort((coords[:, 2], coords[:, 1], coords[:, 0]))
            coords = coords[order]
            if (np.diff(coords, axis=0) == 0).all(axis=1).any():
                raise InvalidInputError("duplicate voxel coordinates")
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "dims", dims)

    def __len__(self) -> int:
        return self.coords.shape[0]

    def to_mask(self, spacing=(1.0, 1.0, 1.0)) -> VoxelVolume:
        data = np.zeros(self.dims, dtype=np.uint8)
        if len(self):
            data[tuple(self.coords.T)] = 1
        return VoxelVolume(data, spacing)

    def centers_mm(self, spacing) -> np.ndarray:
        """Physical coordinates of the voxel centers, (n, 3) float64."""
        return self.coords.astype(np.float64) * np.asarray(spacing, dtype=np.float64)

    @classmethod
    def from_mask(cls, mask_data: np.ndarray) -> "VoxelSet":
        coords = np.argwhere(mask_data != 0)
        return cls(coords, mask_data.shape)


@dataclass(frozen=True)
class Patch:
    """A cropped sub-volume plus the offset of its (0,0,0) voxel in the source."""

    volume: VoxelVolume
    offset: tuple[int, int, int] = field(default=(0, 0, 0))


def _require_binary(mask: VoxelVolume, who: str) -> np.ndarray:
    if not np.issubdtype(mask.data.dtype, np.integer) and not mask.data.dtype == bool:
        raise InvalidInputError(f"{who}: mask must be an integer binary volume")
    if not mask.is_binary:
        raise InvalidInputError(f"{who}: mask must be binary {{0,1}}")
    return mask.data != 0


def voxel_centers_mm(dims, spacing) -> np.ndarray:
    """(prod(dims), 3) array of voxel center positions in mm, index order."""
    axes = [np.arange(int(n), dtype=np.float64) * float(s) for n, s in zip(dims, spacing)]
    xx, yy, zz = np.meshgrid(*axes, indexing="ij")
    return np.stack([xx, yy, zz], axis=-1).reshape(-1, 3)


def dilate(mask: VoxelVolume, radius: int) -> VoxelVolume:
    """Morphological dilation with a Chebyshev ball of the given radius.

    A voxel is set in the output iff some input foreground voxel lies
    within Chebyshev distance ``radius`` (26-connectivity structuring
    element applied ``radius`` times).  The output is clipped at the grid.
    """
    if radius < 1:
        raise InvalidInputError(f"dilation radius must be >= 1, got {radius}")
    data = _require_binary(mask, "dilate")
    out = ndimage.binary_dilation(data, structure=_STRUCT26, iterations=radius)
    return VoxelVolume(out.astype(np.uint8), mask.spacing)


def boundary(mask: VoxelVolume) -> VoxelSet:
    """Exterior boundary shell: dilate(mask, 1) minus the mask.

    This is the boundary map used by the spherical-centroid objective and
    the contour loss.  Every returned voxel is background and 26-adjacent
    to a foreground voxel; the result is disjoint from the mask.  Note the
    shell is empty when the mask fills the entire grid.
    """
    data = _require_binary(mask, "boundary")
    if not data.any():
        raise EmptyMaskError("boundary: mask is empty")
    shell = ndimage.binary_dilation(data, structure=_STRUCT26) & ~data
    return VoxelSet(np.argwhere(shell), mask.dims)


def surface(mask: VoxelVolume) -> VoxelSet:
    """Interior surface: foreground voxels with a background face-neighbor.

    Unlike :func:`boundary`, these voxels belong to the mask, so radii
    measured to them track the mask's own surface.  Contour descriptors
    are encoded from this set; the exterior shell of :func:`boundary`
    would bias every radius outward by roughly a voxel and decoded masks
    would systematically over-fill.  Face adjacency (6-connectivity)
    keeps the surface one voxel thin.
    """
    data = _require_binary(mask, "surface")
    if not data.any():
        raise EmptyMaskError("surface: mask is empty")
    eroded = ndimage.binary_erosion(data, structure=_STRUCT6, border_value=0)
    return VoxelSet(np.argwhere(data & ~eroded), mask.dims)


def connected_components(mask: VoxelVolume, connectivity: int = 26) -> list[VoxelSet]:
    """Maximal connected foreground sets, largest first.

    Ties in size break on the lexicographically smallest member
    coordinate.  ``connectivity`` is 6 (face) or 26 (face/edge/corner).
    """
    if connectivity not in (6, 26):
        raise InvalidInputError(f"connectivity must be 6 or 26, got {connectivity}")
    data = _require_binary(mask, "connected_components")
    structure = _STRUCT6 if connectivity == 6 else _STRUCT26
    labeled, count = ndimage.label(data, structure=structure)
    comps = []
    for lab in range(1, count + 1):
        coords = np.argwhere(labeled == lab)
        comps.append(VoxelSet(coords, mask.dims))
    comps.sort(key=lambda c: (-len(c), tuple(c.coords[0])))
    return comps


def mask_centroid(mask: VoxelVolume) -> np.ndarray:
    """Arithmetic mean of foreground voxel centers, in mm."""
    data = _require_binary(mask, "mask_centroid")
    coords = np.argwhere(data)
    if coords.size == 0:
        raise EmptyMaskError("mask_centroid: mask is empty")
    return coords.mean(axis=0) * mask.spacing_array()


def crop_patch(vol: VoxelVolume, center, size) -> Patch:
    """Crop a patch of exactly ``size`` centered at voxel index ``center``.

    Regions extending past the grid are zero-padded.  The returned patch
    records the offset of its first voxel in the source grid (possibly
    negative) so it can be pasted back.
    """
    center = np.asarray(center, dtype=np.int64)
    size = np.asarray(size, dtype=np.int64)
    if center.shape != (3,) or size.shape != (3,):
        raise InvalidInputError("center and size must be 3-vectors")
    if (size <= 0).any():
        raise InvalidInputError(f"patch size must be positive, got {tuple(size)}")
    dims = np.asarray(vol.dims)
    if (center < 0).any() or (center >= dims).any():
        raise InvalidInputError(f"patch center {tuple(center)} outside volume dims {tuple(dims)}")
    start = center - size // 2
    stop = start + size
    out = np.zeros(tuple(size), dtype=vol.data.dtype)
    src_lo = np.maximum(start, 0)
    src_hi = np.minimum(stop, dims)
    dst_lo = src_lo - start
    dst_hi = dst_lo + (src_hi - src_lo)
    if (src_hi > src_lo).all():
        out[dst_lo[0]:dst_hi[0], dst_lo[1]:dst_hi[1], dst_lo[2]:dst_hi[2]] = \
            vol.data[src_lo[0]:src_hi[0], src_lo[1]:src_hi[1], src_lo[2]:src_hi[2]]
    return Patch(VoxelVolume(out, vol.spacing), tuple(int(v) for v in start))


def paste_patch(dest: VoxelVolume, patch: Patch) -> VoxelVolume:
    """Copy a patch back into a volume over the overlap region."""
    dims = np.asarray(dest.dims)
    start = np.asarray(patch.offset, dtype=np.int64)
    size = np.asarray(patch.volume.dims)
    src_lo = np.maximum(-start, 0)
    src_hi = np.minimum(dims - start, size)
    data = dest.data.copy()
    if (src_hi > src_lo).all():
        dst_lo = start + src_lo
        dst_hi = start + src_hi
        data[dst_lo[0]:dst_hi[0], dst_lo[1]:dst_hi[1], dst_lo[2]:dst_hi[2]] = \
            patch.volume.data[src_lo[0]:src_hi[0], src_lo[1]:src_hi[1], src_lo[2]:src_hi[2]]
    return VoxelVolume(data, dest.spacing)


# ---------------------------------------------------------------------------
# SVOL v1 container: one UTF-8 JSON header line, then raw little-endian
# voxel data, x-fastest.

_SVOL_DTYPES = {"u16": np.dtype("<u2"), "f32": np.dtype("<f4")}


def write_volume(vol: VoxelVolume, path) -> None:
    """Write a volume as an SVOL v1 file.

    Integer volumes are stored as u16 (values must fit), float volumes
    as f32.  Data is written x-fastest.
    """
    if np.issubdtype(vol.data.dtype, np.integer):
        if vol.data.size and int(vol.data.max()) > 0xFFFF:
            raise InvalidInputError("label values exceed u16 range")
        dtype_tag, payload = "u16", vol.data.astype("<u2")
    elif np.issubdtype(vol.data.dtype, np.floating):
        dtype_tag, payload = "f32", vol.data.astype("<f4")
    else:
        raise InvalidInputError(f"unsupported volume dtype {vol.data.dtype}")
    header = {
        "magic": "SVOL",
        "version": 1,
        "dims": list(vol.dims),
        "spacing": list(vol.spacing),
        "dtype": dtype_tag,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        fh.write(payload.tobytes(order="F"))


def read_volume(path) -> VoxelVolume:
    """Read an SVOL v1 file written by :func:`write_volume`.

    u16 payloads come back as int32 labels, f32 payloads as float32
    scalars; values round-trip exactly.
    """
    with open(path, "rb") as fh:
        line = fh.readline()
        if not line.endswith(b"\n"):
            raise CorruptFileError(f"{path}: missing header line")
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CorruptFileError(f"{path}: malformed header: {exc}") from exc
        payload = fh.read()
    if not isinstance(header, dict) or header.get("magic") != "SVOL":
        raise CorruptFileError(f"{path}: not an SVOL file")
    if header.get("version") != 1:
        raise CorruptFileError(f"{path}: unsupported SVOL version {header.get('version')!r}")
    dims = header.get("dims")
    spacing = header.get("spacing")
    dtype_tag = header.get("dtype")
    if (not isinstance(dims, list) or len(dims) != 3
            or not all(isinstance(d, int) and d > 0 for d in dims)):
        raise CorruptFileError(f"{path}: bad dims {dims!r}")
    if (not isinstance(spacing, list) or len(spacing) != 3
            or not all(isinstance(s, (int, float)) and s > 0 for s in spacing)):
        raise CorruptFileError(f"{path}: bad spacing {spacing!r}")
    if dtype_tag not in _SVOL_DTYPES:
        raise CorruptFileError(f"{path}: unsupported dtype {dtype_tag!r}")
    dtype = _SVOL_DTYPES[dtype_tag]
    expected = dims[0] * dims[1] * dims[2] * dtype.itemsize
    if len(payload) != expected:
        raise CorruptFileError(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}")
    flat = np.frombuffer(payload, dtype=dtype)
    data = flat.reshape(tuple(dims), order="F")
    if dtype_tag == "u16":
        data = data.astype(np.int32)
    else:
        data = data.astype(np.float32)
    return VoxelVolume(data, tuple(float(s) for s in spacing))
