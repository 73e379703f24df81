"""Spherical contour encoding and decoding over a fixed integer angle grid.

A shape boundary is described by radial distances rho sampled on a
regular (theta, phi) grid: theta is the angle from x+ of the radial
vector projected into the XOY plane (counter-clockwise viewed from z+,
wrapping at 360); phi is the angle from z+ (0 at the pole, 180 at the
antipole).  With a sampling interval of ``s`` degrees there are
``I = 360/s`` theta nodes and ``J = 180/s + 1`` phi nodes, and a
descriptor is the length ``N = I*J`` vector

    rho = [rho_11 .. rho_1J, rho_21 .. rho_2J, ..., rho_I1 .. rho_IJ]

i.e. theta-major, phi fastest within each theta block.  At the default
s = 5 degrees, N = 72 * 37 = 2664.

Encoding converts each boundary voxel center to spherical coordinates
about a chosen center, rounds the angles to the nearest grid node
(half-up), and keeps the maximum radius per node; shapes that are
star-convex from the center are represented exactly up to angular
rounding.  Grid nodes that receive no sample are filled from the nearest
hit node so the vector is dense for basis extraction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import CorruptFileError, DegeneratePointError, EmptyMaskError, InvalidInputError
from .volume import VoxelSet

AXIS_CONVENTIONS = ("z_up", "x_up", "y_up")

# Cyclic permutations taking world axes into the local frame whose third
# axis is the chosen "up" direction; cyclic keeps the frame right-handed.
_PERMUTATION = {"z_up": (0, 1, 2), "x_up": (1, 2, 0), "y_up": (2, 0, 1)}


@dataclass(frozen=True)
class AngleGrid:
    """Regular angular sampling grid.

    ``interval_deg`` must divide both 360 and 180 so that the theta
    circle closes and phi ends exactly at 180.
    """

    interval_deg: int = 5
    axis_convention: str = "z_up"

    def __post_init__(self):
        s = self.interval_deg
        if not isinstance(s, int) or s <= 0 or 360 % s or 180 % s:
            raise InvalidInputError(
                f"interval_deg must be a positive integer divisor of 360 and 180, got {s}")
        if self.axis_convention not in AXIS_CONVENTIONS:
            raise InvalidInputError(
                f"axis_convention must be one of {AXIS_CONVENTIONS}, got {self.axis_convention!r}")

    @property
    def theta_count(self) -> int:
        return 360 // self.interval_deg

    @property
    def phi_count(self) -> int:
        return 180 // self.interval_deg + 1

    @property
    def size(self) -> int:
        return self.theta_count * self.phi_count

    def node_angles(self) -> tuple[np.ndarray, np.ndarray]:
        """(theta_deg, phi_deg) arrays of length ``size``, theta-major."""
        s = self.interval_deg
        theta = np.repeat(np.arange(self.theta_count) * s, self.phi_count)
        phi = np.tile(np.arange(self.phi_count) * s, self.theta_count)
        return theta.astype(np.float64), phi.astype(np.float64)


@dataclass(frozen=True)
class SphericalPoint:
    """One point in spherical coordinates: radius mm, angles in degrees."""

    rho: float
    theta: float
    phi: float

    def __post_init__(self):
        if self.rho < 0:
            raise InvalidInputError(f"rho must be >= 0, got {self.rho}")
        if not 0 <= self.theta < 360:
            raise InvalidInputError(f"theta must be in [0, 360), got {self.theta}")
        if not 0 <= self.phi <= 180:
            raise InvalidInputError(f"phi must be in [0, 180], got {self.phi}")


@dataclass(frozen=True)
class ContourDescriptor:
    """Radial contour descriptor: one radius per angle-grid node.

    ``filled`` marks nodes that received no boundary sample and were
    filled by nearest-node propagation (None when unknown, e.g. for
    reconstructed descriptors).  A zero radius means "no boundary in this
    direction" and decodes to the center point.
    """

    rho: np.ndarray
    grid: AngleGrid
    center: np.ndarray
    filled: Optional[np.ndarray] = None

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=np.float64)
        if rho.shape != (self.grid.size,):
            raise InvalidInputError(
                f"descriptor length {rho.shape} does not match grid size {self.grid.size}")
        if (rho < 0).any():
            raise InvalidInputError("descriptor radii must be non-negative")
        center = np.asarray(self.center, dtype=np.float64)
        if center.shape != (3,):
            raise InvalidInputError("center must be a 3-vector (mm)")
        rho.setflags(write=False)
        center.setflags(write=False)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "center", center)
        if self.filled is not None:
            filled = np.asarray(self.filled, dtype=bool)
            if filled.shape != rho.shape:
                raise InvalidInputError("filled mask length mismatch")
            filled.setflags(write=False)
            object.__setattr__(self, "filled", filled)


def _to_local(vec: np.ndarray, convention: str) -> np.ndarray:
    perm = _PERMUTATION[convention]
    return vec[..., perm]


def _from_local(vec: np.ndarray, convention: str) -> np.ndarray:
    perm = _PERMUTATION[convention]
    out = np.empty_like(vec)
    out[..., perm[0]] = vec[..., 0]
    out[..., perm[1]] = vec[..., 1]
    out[..., perm[2]] = vec[..., 2]
    return out


def _spherical_angles(vecs: np.ndarray, convention: str):
    """(rho, theta_deg, phi_deg) for an (n, 3) array of offsets in mm."""
    local = _to_local(vecs, convention)
    rho = np.linalg.norm(local, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos_phi = np.where(rho > 0, local[..., 2] / np.where(rho > 0, rho, 1.0), 1.0)
    phi = np.degrees(np.arccos(np.clip(cos_phi, -1.0, 1.0)))
    theta = np.degrees(np.arctan2(local[..., 1], local[..., 0])) % 360.0
    return rho, theta, phi


def cart_to_sph(p, center, grid: AngleGrid) -> SphericalPoint:
    """Convert a Cartesian point (mm) to spherical coordinates about ``center``."""
    vec = np.asarray(p, dtype=np.float64) - np.asarray(center, dtype=np.float64)
    rho = float(np.linalg.norm(vec))
    if rho == 0.0:
        raise DegeneratePointError("point coincides with the spherical center")
    r, theta, phi = _spherical_angles(vec[None, :], grid.axis_convention)
    return SphericalPoint(float(r[0]), float(theta[0] % 360.0), float(phi[0]))


def sph_to_cart(sp: SphericalPoint, center, grid: AngleGrid) -> np.ndarray:
    """Inverse of :func:`cart_to_sph` up to floating-point tolerance."""
    theta = np.radians(sp.theta)
    phi = np.radians(sp.phi)
    local = sp.rho * np.array([
        np.sin(phi) * np.cos(theta),
        np.sin(phi) * np.sin(theta),
        np.cos(phi),
    ])
    return np.asarray(center, dtype=np.float64) + _from_local(local, grid.axis_convention)


def bin_of_angles(theta_deg: np.ndarray, phi_deg: np.ndarray, grid: AngleGrid) -> np.ndarray:
    """Round angles (degrees) half-up to grid nodes and return flat bin indices.

    theta wraps modulo 360; phi clamps to [0, 180] so that phi = 180 maps
    to the last node.
    """
    s = grid.interval_deg
    ti = np.floor(theta_deg / s + 0.5).astype(np.int64) % grid.theta_count
    pj = np.clip(np.floor(phi_deg / s + 0.5).astype(np.int64), 0, grid.phi_count - 1)
    return ti * grid.phi_count + pj


def bin_directions(vecs: np.ndarray, grid: AngleGrid):
    """(bin index, rho) for an (n, 3) array of mm offsets from the center.

    Zero-length offsets get bin 0; callers decide whether that is an error.
    """
    rho, theta, phi = _spherical_angles(np.asarray(vecs, dtype=np.float64),
                                        grid.axis_convention)
    bins = bin_of_angles(theta, phi, grid)
    bins = np.where(rho > 0, bins, 0)
    return bins, rho


def _node_directions(grid: AngleGrid) -> np.ndarray:
    """Unit direction vector of every grid node, theta-major, (N, 3)."""
    theta, phi = grid.node_angles()
    theta_r = np.radians(theta)
    phi_r = np.radians(phi)
    return np.stack([np.sin(phi_r) * np.cos(theta_r),
                     np.sin(phi_r) * np.sin(theta_r),
                     np.cos(phi_r)], axis=1)


def _fill_unhit(rho: np.ndarray, hit: np.ndarray, grid: AngleGrid) -> np.ndarray:
    """Assign every unhit node the radius of its nearest hit node.

    Nearest means smallest great-circle distance between node directions
    (which wraps in theta by construction); ties resolve to the lowest
    hit-node index, so the fill is deterministic.
    """
    dirs = _node_directions(grid)
    hit_idx = np.flatnonzero(hit)
    unhit_idx = np.flatnonzero(~hit)
    values = rho.copy()
    hit_dirs = dirs[hit_idx]
    for lo in range(0, unhit_idx.size, 2048):
        rows = unhit_idx[lo:lo + 2048]
        sims = dirs[rows] @ hit_dirs.T
        values[rows] = rho[hit_idx[np.argmax(sims, axis=1)]]
    return values


def encode(bnd: VoxelSet, center, grid: AngleGrid, spacing) -> ContourDescriptor:
    """Encode a boundary voxel set into a contour descriptor.

    Each boundary voxel center is converted to spherical coordinates
    about ``center`` (mm); angles round half-up to the nearest grid node
    and each node keeps the maximum radius among its samples.  Unhit
    nodes are filled from the nearest hit node and flagged in ``filled``.
    """
    if len(bnd) == 0:
        raise EmptyMaskError("encode: boundary set is empty")
    center = np.asarray(center, dtype=np.float64)
    points = bnd.centers_mm(spacing)
    lo, hi = points.min(axis=0), points.max(axis=0)
    if (center <= lo).any() or (center >= hi).any():
        raise InvalidInputError(
            f"center {center.tolist()} is not strictly inside the boundary bounding box")
    vecs = points - center
    rho_pts = np.linalg.norm(vecs, axis=1)
    if (rho_pts < 1e-12).any():
        raise DegeneratePointError("a boundary voxel coincides with the center")
    bins, rho_pts = bin_directions(vecs, grid)
    rho = np.zeros(grid.size, dtype=np.float64)
    np.maximum.at(rho, bins, rho_pts)
    hit = np.zeros(grid.size, dtype=bool)
    hit[bins] = True
    if not hit.all():
        rho = _fill_unhit(rho, hit, grid)
    return ContourDescriptor(rho, grid, center, filled=~hit)


def decode(d: ContourDescriptor) -> tuple[np.ndarray, np.ndarray]:
    """Decode a descriptor into its contour point cloud.

    Returns ``(points, degenerate)``: exactly N points in mm, theta-major
    like the descriptor, and a boolean mask marking zero-radius nodes
    whose point collapses to the center.
    """
    theta, phi = d.grid.node_angles()
    theta_r = np.radians(theta)
    phi_r = np.radians(phi)
    local = np.stack([
        d.rho * np.sin(phi_r) * np.cos(theta_r),
        d.rho * np.sin(phi_r) * np.sin(theta_r),
        d.rho * np.cos(phi_r),
    ], axis=1)
    points = d.center + _from_local(local, d.grid.axis_convention)
    degenerate = d.rho == 0.0
    points[degenerate] = d.center
    return points, degenerate


# ---------------------------------------------------------------------------
# SDESC v1 container: JSON header line, then ``count`` rows of N little-
# endian f32 radii.  Centers live in a JSON sidecar next to the file.


def _sidecar_path(path) -> str:
    return str(path) + ".centers.json"


def write_descriptors(descriptors: list[ContourDescriptor], path) -> None:
    """Write descriptors as an SDESC v1 file plus a centers sidecar."""
    if not descriptors:
        raise InvalidInputError("write_descriptors: nothing to write")
    grid = descriptors[0].grid
    if any(d.grid != grid for d in descriptors):
        raise InvalidInputError("write_descriptors: descriptors use mixed grids")
    header = {
        "magic": "SDESC",
        "version": 1,
        "s_deg": grid.interval_deg,
        "axis": grid.axis_convention,
        "count": len(descriptors),
        "N": grid.size,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        for d in descriptors:
            fh.write(d.rho.astype("<f4").tobytes())
    with open(_sidecar_path(path), "w", encoding="utf-8") as fh:
        json.dump([d.center.tolist() for d in descriptors], fh)


def read_descriptors(path) -> list[ContourDescriptor]:
    """Read an SDESC v1 file written by :func:`write_descriptors`."""
    with open(path, "rb") as fh:
        line = fh.readline()
        if not line.endswith(b"\n"):
            raise CorruptFileError(f"{path}: missing header line")
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CorruptFileError(f"{path}: malformed header: {exc}") from exc
        payload = fh.read()
    if not isinstance(header, dict) or header.get("magic") != "SDESC":
        raise CorruptFileError(f"{path}: not an SDESC file")
    if header.get("version") != 1:
        raise CorruptFileError(f"{path}: unsupported SDESC version")
    try:
        grid = AngleGrid(int(header["s_deg"]), str(header["axis"]))
        count = int(header["count"])
        n = int(header["N"])
    except (KeyError, TypeError, ValueError, InvalidInputError) as exc:
        raise CorruptFileError(f"{path}: bad header fields: {exc}") from exc
    if n != grid.size or count < 0:
        raise CorruptFileError(f"{path}: header N={n} does not match grid size {grid.size}")
    expected = count * n * 4
    if len(payload) != expected:
        raise CorruptFileError(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}")
    try:
        with open(_sidecar_path(path), "r", encoding="utf-8") as fh:
            centers = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptFileError(f"{path}: unreadable centers sidecar: {exc}") from exc
    if not isinstance(centers, list) or len(centers) != count:
        raise CorruptFileError(f"{path}: centers sidecar does not match count")
    rows = np.frombuffer(payload, dtype="<f4").reshape(count, n).astype(np.float64)
    return [ContourDescriptor(rows[i], grid, np.asarray(centers[i], dtype=np.float64))
            for i in range(count)]
