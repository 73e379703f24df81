"""Deterministic synthetic vertebra-like shapes, spines, and corruptions.

Each shape is the union of a superellipsoid body and a posterior box
process along +y, generated at the target spacing directly.  The
parameter ranges keep shapes star-convex from their spherical centroids
(checked at generation by an encode/fill round trip), so descriptor
round trips on this corpus fail only when something is actually broken.
One deliberately non-star-convex stress shape is available through
:func:`make_hook_shape` and is expected to be lossy under the max-radius
encoding.

All randomness runs off SplitMix64 seeds recorded in the specs, so
corpora regenerate bit-identically.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .centroid import DEFAULT_LAMBDA, spherical_centroid
from .codec import AngleGrid, encode
from .errors import GenerationError, InvalidInputError
from .metrics import dice
from .recon import radial_fill
from .refine import InstanceRecord
from .rng import SplitMix64
from .volume import VoxelVolume, surface

STAR_CONVEX_MIN_DICE = 0.95


@dataclass(frozen=True)
class VertebraParams:
    """Geometry of one synthetic vertebra, in voxel units.

    The body is a superellipsoid |x/a|^p + |y/b|^p + |z/c|^p <= 1 with
    semi-axes (a, b, c) and exponent p in [2, 4].  The posterior process
    is a smooth elliptic protrusion along +y: an ellipsoid with semi-axes
    (width/2, 0.3 b + length/2, height/2) whose far tip reaches
    y = b + length, rooted at 40% of the body's y semi-axis so the two
    overlap and stay connected.  A rounded process keeps the radial
    function Lipschitz, which the descriptor's empty-bin fill needs; hard
    box walls would add radial jumps that dominate fine-grid encodings.
    ``center_jitter_seed`` nudges the body center by a sub-voxel offset
    so shapes are not all grid-aligned.
    """

    body: tuple[float, float, float] = (11.0, 10.0, 9.0)
    exponent: float = 2.2
    process_length: float = 7.0
    process_width: float = 7.0
    process_height: float = 6.0
    center_jitter_seed: int = 0

    def __post_init__(self):
        if any(v <= 0 for v in self.body):
            raise InvalidInputError("body semi-axes must be positive")
        if self.exponent < 2.0:
            raise InvalidInputError(f"exponent must be >= 2, got {self.exponent}")
        if min(self.process_length, self.process_width, self.process_height) <= 0:
            raise InvalidInputError("process extents must be positive")
        if self.process_length > 2.0 * self.body[1]:
            raise InvalidInputError("process length must not exceed the body y extent")

    def extents(self) -> np.ndarray:
        """Half-extent along -axis and +axis, (3, 2), voxels from the body center."""
        a, b, c = self.body
        y_pos = b + self.process_length
        return np.array([[a, a], [b, y_pos], [c, c]])


@dataclass(frozen=True)
class SpineSpec:
    """A stack of labeled instances along +z with background gaps."""

    params: tuple[VertebraParams, ...]
    gap: int = 3
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    seed: int = 0

    def __post_init__(self):
        if not self.params:
            raise InvalidInputError("spine needs at least one instance")
        if self.gap < 1:
            raise InvalidInputError("gap must be >= 1 voxel")

    @property
    def count(self) -> int:
        return len(self.params)


@dataclass(frozen=True)
class CorpusSpec:
    """A batch of standalone vertebra masks for descriptor training.

    ``scale`` multiplies all linear extents; larger shapes sample the
    angle grid more densely, which fine sampling intervals need.
    """

    count: int
    seed: int = 0
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    family: str = "mixed"
    scale: float = 1.0

    def __post_init__(self):
        if self.count < 1:
            raise InvalidInputError("corpus count must be >= 1")
        if self.family not in ("round", "boxy", "mixed"):
            raise InvalidInputError(f"unknown family {self.family!r}")
        if self.scale <= 0:
            raise InvalidInputError("scale must be positive")


def sample_vertebra_params(rng: SplitMix64, family: str = "round",
                           scale: float = 1.0) -> VertebraParams:
    """Draw one parameter set from a shape family.

    "round" bodies are near-ellipsoidal with modest processes; "boxy"
    bodies have higher superellipsoid exponents and larger processes.
    """
    if family == "round":
        exponent = rng.uniform(2.0, 2.6)
        plen = rng.uniform(5.0, 8.0)
    elif family == "boxy":
        exponent = rng.uniform(3.0, 4.0)
        plen = rng.uniform(6.0, 10.0)
    else:
        raise InvalidInputError(f"unknown family {family!r}")
    return VertebraParams(
        body=(rng.uniform(10.0, 13.0) * scale, rng.uniform(9.0, 12.0) * scale,
              rng.uniform(8.0, 11.0) * scale),
        exponent=exponent,
        process_length=plen * scale,
        process_width=rng.uniform(6.0, 9.0) * scale,
        process_height=rng.uniform(5.0, 7.5) * scale,
        center_jitter_seed=rng.next_u64() & 0xFFFFFFFF,
    )


def _body_center(params: VertebraParams, dims) -> np.ndarray:
    """Body center in voxels: x/z centered, y leaves room for the process."""
    ext = params.extents()
    center = np.array([dims[0] / 2.0, 0.0, dims[2] / 2.0])
    center[1] = (dims[1] - 1 - ext[1, 1] + ext[1, 0]) / 2.0 + 0.0
    center[1] = max(center[1], ext[1, 0] + 2.0)
    if params.center_jitter_seed:
        jr = SplitMix64(params.center_jitter_seed)
        center += np.array([jr.uniform(-0.45, 0.45) for _ in range(3)])
    return center


def _rasterize(params: VertebraParams, dims, center: np.ndarray) -> np.ndarray:
    ext = params.extents()
    lo = center - ext[:, 0]
    hi = center + ext[:, 1]
    if (lo < 2).any() or (hi > np.asarray(dims) - 3).any():
        raise GenerationError(
            f"shape spans [{lo.round(1)}, {hi.round(1)}] voxels, needs margin 2 inside dims {tuple(dims)}")
    a, b, c = params.body
    p = params.exponent
    xs = np.arange(dims[0])[:, None, None] - center[0]
    ys = np.arange(dims[1])[None, :, None] - center[1]
    zs = np.arange(dims[2])[None, None, :] - center[2]
    body = (np.abs(xs / a) ** p + np.abs(ys / b) ** p + np.abs(zs / c) ** p) <= 1.0
    # process lobe spans y in [0.4 b, b + length] measured from the body center
    y_mid = 0.7 * b + params.process_length / 2.0
    y_semi = 0.3 * b + params.process_length / 2.0
    process = (((xs / (params.process_width / 2.0)) ** 2
                + ((ys - y_mid) / y_semi) ** 2
                + (zs / (params.process_height / 2.0)) ** 2) <= 1.0)
    return body | process


def default_dims(params_list) -> tuple[int, int, int]:
    """Smallest common grid that fits every parameter set with margin."""
    ext = np.max([p.extents() for p in params_list], axis=0)
    return (int(np.ceil(2 * ext[0, 0])) + 7,
            int(np.ceil(ext[1, 0] + ext[1, 1])) + 7,
            int(np.ceil(2 * ext[2, 0])) + 7)


def make_vertebra(params: VertebraParams, dims=None,
                  spacing=(1.0, 1.0, 1.0)) -> VoxelVolume:
    """Rasterize one vertebra-like binary mask, deterministic per params."""
    dims = tuple(int(v) for v in (dims or default_dims([params])))
    center = _body_center(params, dims)
    return VoxelVolume(_rasterize(params, dims, center).astype(np.uint8), spacing)


def star_convex_roundtrip_dice(mask: VoxelVolume, grid: AngleGrid,
                               lam: float = DEFAULT_LAMBDA,
                               descriptor=None) -> float:
    """Dice of the encode/radial-fill round trip from the spherical centroid.

    Star-convex shapes round-trip above ~0.95; sub-threshold values mean
    the shape has directions where a single max radius cannot represent
    the boundary.  Pass a precomputed ``descriptor`` to skip the centroid
    search.
    """
    if descriptor is None:
        sol = spherical_centroid(mask, lam)
        descriptor = encode(surface(mask), np.asarray(sol.point) * mask.spacing_array(),
                            grid, mask.spacing)
    fill = radial_fill(descriptor, mask.dims, mask.spacing)
    return dice(fill, mask)


def _instance_record(mask: VoxelVolume, label: int, grid: AngleGrid,
                     lam: float, centroid_method: str = "exhaustive") -> InstanceRecord:
    sol = spherical_centroid(mask, lam, method=centroid_method)
    sp = mask.spacing_array()
    center_mm = np.asarray(sol.point, dtype=np.float64) * sp
    desc = encode(surface(mask), center_mm, grid, mask.spacing)
    coords = np.argwhere(mask.data != 0)
    size_mm = (coords.max(axis=0) - coords.min(axis=0) + 1) * sp
    return InstanceRecord(label, center_mm, size_mm, refined_center_mm=center_mm,
                          descriptor=desc)


def mean_instance_size(records) -> np.ndarray:
    """Corpus mean instance size m_bar (mm per axis) for prompt widths."""
    return np.mean([r.size_mm for r in records], axis=0)


def make_corpus(spec: CorpusSpec, grid: Optional[AngleGrid] = None,
                verify: bool = True, centroid_method: str = "exhaustive"):
    """Generate standalone vertebra masks with ground-truth records.

    Returns ``(masks, records)`` with records labeled 1..count.  With
    ``verify`` the star-convexity round trip is checked per instance.
    ``centroid_method`` picks the spherical-centroid search; the coarse
    accelerator pays off on large-scale corpora.
    """
    grid = grid or AngleGrid()
    rng = SplitMix64(spec.seed)
    params = []
    for i in range(spec.count):
        family = spec.family
        if family == "mixed":
            family = "round" if i % 2 == 0 else "boxy"
        params.append(sample_vertebra_params(rng, family, spec.scale))
    dims = default_dims(params)
    masks, records = [], []
    for i, p in enumerate(params):
        mask = make_vertebra(p, dims, spec.spacing)
        record = _instance_record(mask, i + 1, grid, DEFAULT_LAMBDA, centroid_method)
        if verify:
            rt = star_convex_roundtrip_dice(mask, grid, descriptor=record.descriptor)
            if rt < STAR_CONVEX_MIN_DICE:
                raise GenerationError(
                    f"instance {i} is not star-convex enough (round-trip dice {rt:.3f})")
        masks.append(mask)
        records.append(record)
    return masks, records


def make_spine(spec: SpineSpec, grid: Optional[AngleGrid] = None,
               verify: bool = True):
    """Generate a labeled spine volume and its ground-truth records.

    Instances take labels 1..n bottom-up along +z and never overlap.
    """
    grid = grid or AngleGrid()
    dims_xy = default_dims(spec.params)
    slab_heights = [int(np.ceil(2 * p.extents()[2, 0])) + 7 for p in spec.params]
    total_z = sum(slab_heights) + spec.gap * (spec.count - 1)
    dims = (dims_xy[0], dims_xy[1], total_z)
    data = np.zeros(dims, dtype=np.int32)
    z0 = 0
    for label, (p, h) in enumerate(zip(spec.params, slab_heights), start=1):
        sub_dims = (dims[0], dims[1], h)
        center = _body_center(p, sub_dims)
        sub = _rasterize(p, sub_dims, center)
        region = data[:, :, z0:z0 + h]
        if (region[sub] != 0).any():
            raise GenerationError(f"instance {label} overlaps an earlier instance")
        region[sub] = label
        z0 += h + spec.gap
    vol = VoxelVolume(data, spec.spacing)
    records = []
    for label in range(1, spec.count + 1):
        mask = vol.label_mask(label)
        record = _instance_record(mask, label, grid, DEFAULT_LAMBDA)
        if verify:
            rt = star_convex_roundtrip_dice(mask, grid, descriptor=record.descriptor)
            if rt < STAR_CONVEX_MIN_DICE:
                raise GenerationError(
                    f"instance {label} is not star-convex enough (round-trip dice {rt:.3f})")
        records.append(record)
    return vol, records


def make_hook_shape(dims=(40, 46, 40), spacing=(1.0, 1.0, 1.0)) -> VoxelVolume:
    """Deliberately non-star-convex stress shape: a ball with an overhang.

    A plate hovers above the ball, joined only by a thin post at one
    corner.  Rays from the centroid toward the plate cross the boundary
    three times, so the max-radius encoding swallows the gap under the
    plate and the round trip is expected to be lossy (dice well below
    the star-convex threshold).
    """
    dims = tuple(int(v) for v in dims)
    xs = np.arange(dims[0])[:, None, None]
    ys = np.arange(dims[1])[None, :, None]
    zs = np.arange(dims[2])[None, None, :]
    cx, cy, cz = dims[0] / 2.0, 14.0, dims[2] / 2.0
    body = ((xs - cx) ** 2 + (ys - cy) ** 2 + (zs - cz) ** 2) <= 100.0
    post = ((np.abs(xs - cx) <= 1.5) & (ys >= cy) & (ys <= cy + 17)
            & (np.abs(zs - (cz + 8)) <= 1.5))
    plate = ((np.abs(xs - cx) <= 7) & (ys >= cy + 14) & (ys <= cy + 17)
             & (np.abs(zs - cz) <= 8))
    return VoxelVolume((body | post | plate).astype(np.uint8), spacing)


CORRUPT_MODES = ("label_bleed", "fragment", "center_shift")


def corrupt(labeled: VoxelVolume, mode: str, seed: int) -> VoxelVolume:
    """Inject an intra-instance label defect into a labeled volume.

    * ``label_bleed``: a contiguous z-cap (10-30%) of one instance is
      relabeled to a neighboring label; the foreground voxel set is
      unchanged.
    * ``fragment``: one instance is split in two along z, the far part
      taking a fresh label; foreground unchanged.
    * ``center_shift``: one instance loses its -y surface layer and
      gains a +y dilation layer, shifting its apparent centroid
      (foreground changes by construction).
    """
    if mode not in CORRUPT_MODES:
        raise InvalidInputError(f"unknown corruption mode {mode!r}")
    labels = labeled.labels()
    if not labels:
        raise InvalidInputError("corrupt: volume has no labels")
    rng = SplitMix64(seed)
    data = labeled.data.copy()
    victim = labels[rng.randint(0, len(labels) - 1)]
    coords = np.argwhere(data == victim)

    if mode in ("label_bleed", "fragment"):
        if mode == "label_bleed":
            if victim + 1 in labels:
                new_label, cap_high = victim + 1, True
            elif victim - 1 in labels:
                new_label, cap_high = victim - 1, False
            else:
                new_label, cap_high = victim + 1, True
            fraction = rng.uniform(0.10, 0.30)
        else:
            new_label, cap_high = max(labels) + 1, True
            fraction = rng.uniform(0.30, 0.50)
        zs = coords[:, 2]
        k = max(1, int(round(fraction * coords.shape[0])))
        order = np.argsort(zs, kind="stable")
        cap = order[-k:] if cap_high else order[:k]
        data[tuple(coords[cap].T)] = new_label
        return VoxelVolume(data, labeled.spacing)

    # center_shift
    from scipy import ndimage
    mask = data == victim
    surf = mask & ~ndimage.binary_erosion(mask, ndimage.generate_binary_structure(3, 1),
                                          border_value=0)
    cy = coords[:, 1].mean()
    erode_side = surf & (np.arange(data.shape[1])[None, :, None] < cy)
    grown = ndimage.binary_dilation(mask, np.ones((3, 3, 3), dtype=bool)) & (data == 0)
    grow_side = grown & (np.arange(data.shape[1])[None, :, None] > cy)
    data[erode_side] = 0
    data[grow_side] = victim
    return VoxelVolume(data, labeled.spacing)
