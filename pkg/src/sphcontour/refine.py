"""Label-consistency refinement of coarse multi-instance segmentations.

Coarse predictions of sequential instances (vertebra-like: one label per
instance, ascending along +z) often carry several labels inside one
instance.  The pipeline repairs them per sliding window of three
consecutive labels:

1. crop a patch centered on the window's middle instance,
2. build one separable Gaussian positional prompt per instance from the
   coarse center and instance size (sigma = max(m, m_bar) / 4),
3. ask a predictor for each instance's refined center and basis
   coefficients,
4. reconstruct each instance mask from its low-rank descriptor and
   resolve overlaps by the nearest refined center,
5. paste back with priority for the window's designated label,
6. mask everything by the coarse foreground (binarized attention
   S_R = 1(S_C) * S_L) and keep the largest connected component per
   label.

The predictor is an interface; :class:`OraclePredictor` answers from
ground-truth records and stands in for a trained model, which lets the
pipeline be exercised end to end.  Center jitter (the coarse-center
error model) is part of the config and perturbs the predictor's inputs,
never its outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

import numpy as np

from . import recon
from .basis import ContourBasis, project, reconstruct
from .centroid import DEFAULT_LAMBDA, spherical_centroid
from .codec import AngleGrid, ContourDescriptor
from .errors import EmptyMaskError, InvalidInputError
from .rng import SplitMix64
from .volume import (Patch, VoxelVolume, connected_components, crop_patch,
                     voxel_centers_mm)


@dataclass(frozen=True)
class InstanceRecord:
    """One instance: label, coarse center, size, and optional ground truth."""

    label: int
    coarse_center_mm: np.ndarray
    size_mm: np.ndarray
    refined_center_mm: Optional[np.ndarray] = None
    descriptor: Optional[ContourDescriptor] = None

    def __post_init__(self):
        if self.label <= 0:
            raise InvalidInputError(f"label must be positive, got {self.label}")
        center = np.asarray(self.coarse_center_mm, dtype=np.float64)
        size = np.asarray(self.size_mm, dtype=np.float64)
        if center.shape != (3,) or size.shape != (3,):
            raise InvalidInputError("center and size must be 3-vectors")
        if (size <= 0).any():
            raise InvalidInputError("instance size must be positive")
        object.__setattr__(self, "coarse_center_mm", center)
        object.__setattr__(self, "size_mm", size)


@dataclass(frozen=True)
class GaussianPrompt:
    """Separable Gaussian positional prompt on a patch grid, peak 1 at mu."""

    mu_mm: np.ndarray
    sigma_mm: np.ndarray
    field: VoxelVolume


def gaussian_prompt(mu_mm, m_mm, m_bar_mm, patch_dims, spacing) -> GaussianPrompt:
    """Positional prompt for one instance.

    ``sigma = max(m, m_bar) / 4`` per axis, so four sigmas span the
    instance (or the corpus mean size, whichever is wider).  The field is
    the product of per-axis unnormalized Gaussians evaluated at voxel
    centers of the patch grid; ``mu_mm`` is in patch-local mm.
    """
    mu = np.asarray(mu_mm, dtype=np.float64)
    m = np.asarray(m_mm, dtype=np.float64)
    m_bar = np.asarray(m_bar_mm, dtype=np.float64)
    if (m <= 0).any() or (m_bar <= 0).any():
        raise InvalidInputError("instance sizes must be positive")
    sigma = np.maximum(m, m_bar) / 4.0
    axes = []
    for n, s, mu_a, sig_a in zip(patch_dims, spacing, mu, sigma):
        x = np.arange(int(n), dtype=np.float64) * float(s)
        axes.append(np.exp(-((x - mu_a) ** 2) / (2.0 * sig_a ** 2)))
    data = (axes[0][:, None, None] * axes[1][None, :, None] * axes[2][None, None, :])
    return GaussianPrompt(mu, sigma, VoxelVolume(data.astype(np.float64), tuple(spacing)))


@dataclass(frozen=True)
class Window:
    """One refinement window: its labels and the designated (middle) label."""

    labels: tuple[int, ...]
    target: int


@dataclass
class RefinementPlan:
    """Windows in target order plus per-label coarse geometry."""

    windows: list[Window]
    centers_voxel: dict[int, tuple[int, int, int]]
    centers_mm: dict[int, np.ndarray]
    sizes_mm: dict[int, np.ndarray]


@dataclass
class RefineConfig:
    """Knobs of the refinement pipeline.

    ``m_bar_mm`` is the corpus mean instance size used by Eq.-style
    prompt widths; it normally comes from the training manifest.  Jitter
    models coarse-center localization error: each coarse center is
    displaced by a uniform integer offset in [-j, j] voxels per axis
    before prompting and patch placement.
    """

    grid: AngleGrid = field(default_factory=AngleGrid)
    patch_size: tuple[int, int, int] = (64, 64, 64)
    window: int = 3
    lam: float = DEFAULT_LAMBDA
    m_bar_mm: tuple[float, float, float] = (40.0, 40.0, 40.0)
    jitter_voxels: tuple[int, int, int] = (0, 0, 0)
    jitter_seed: int = 0
    fill_method: str = "radial"
    emit_mesh_dir: Optional[str] = None

    def __post_init__(self):
        if self.window < 1:
            raise InvalidInputError("window size must be >= 1")
        if self.fill_method not in ("radial", "mesh"):
            raise InvalidInputError(f"fill_method must be 'radial' or 'mesh', got {self.fill_method!r}")


class Predictor(Protocol):
    """Per-window instance predictor.

    Given a coarse patch, one prompt per window label, and the contour
    basis, return one ``(refined_center_mm, coefficients)`` pair per
    requested label, in order.  Centers are global mm; coefficients have
    length ``basis.k``.  Either entry may be None to mark the instance
    absent, and the returned list must match the requested window size.
    """

    def predict(self, patch: Patch, prompts: Sequence[GaussianPrompt],
                labels: Sequence[int], basis: ContourBasis
                ) -> list[tuple[Optional[np.ndarray], Optional[np.ndarray]]]:
        ...


class OraclePredictor:
    """Ground-truth predictor standing in for a trained network.

    Answers every query with the instance's true spherical centroid and
    the projection of its true descriptor onto the basis, regardless of
    how the prompts or the patch were jittered; robustness experiments
    therefore measure the pipeline, not the oracle.
    """

    def __init__(self, records: Sequence[InstanceRecord]):
        self.records = {r.label: r for r in records}

    def predict(self, patch, prompts, labels, basis):
        out = []
        for lab in labels:
            rec = self.records.get(lab)
            if rec is None or rec.descriptor is None:
                out.append((None, None))
                continue
            center = (rec.refined_center_mm if rec.refined_center_mm is not None
                      else rec.coarse_center_mm)
            out.append((center, project(basis, rec.descriptor)))
        return out


def records_from_volume(vol: VoxelVolume, grid: AngleGrid,
                        lam: float = DEFAULT_LAMBDA) -> list[InstanceRecord]:
    """Ground-truth records (centroid, size, descriptor) for every label."""
    from .codec import encode
    from .volume import surface

    records = []
    sp = vol.spacing_array()
    for lab in vol.labels():
        mask = vol.label_mask(lab)
        sol = spherical_centroid(mask, lam)
        center_mm = np.asarray(sol.point, dtype=np.float64) * sp
        desc = encode(surface(mask), center_mm, grid, vol.spacing)
        coords = np.argwhere(mask.data != 0)
        size_mm = (coords.max(axis=0) - coords.min(axis=0) + 1) * sp
        records.append(InstanceRecord(lab, center_mm, size_mm,
                                      refined_center_mm=center_mm, descriptor=desc))
    return records


def binarized_attention(coarse: VoxelVolume, labeled: VoxelVolume) -> VoxelVolume:
    """S_R = 1(S_C > 0) * S_L: keep labels only on the coarse foreground."""
    if coarse.dims != labeled.dims:
        raise InvalidInputError(f"dims mismatch: {coarse.dims} vs {labeled.dims}")
    out = np.where(coarse.data > 0, labeled.data, 0)
    return VoxelVolume(out.astype(labeled.data.dtype), labeled.spacing)


def _instance_geometry(coarse: VoxelVolume, label: int, lam: float):
    """Spherical centroid (voxel + mm) and bbox size (mm) of one instance.

    Computed on the instance's padded bounding box; the centroid is
    translation-equivariant so the crop does not change it.
    """
    coords = np.argwhere(coarse.data == label)
    if coords.size == 0:
        raise EmptyMaskError(f"label {label} has no voxels")
    lo = np.maximum(coords.min(axis=0) - 2, 0)
    hi = np.minimum(coords.max(axis=0) + 3, coarse.dims)
    sub = (coarse.data[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] == label).astype(np.uint8)
    sol = spherical_centroid(VoxelVolume(sub, coarse.spacing), lam)
    voxel = tuple(int(v) for v in (np.asarray(sol.point) + lo))
    sp = coarse.spacing_array()
    size_mm = (coords.max(axis=0) - coords.min(axis=0) + 1) * sp
    return voxel, np.asarray(voxel, dtype=np.float64) * sp, size_mm


def plan_windows(coarse: VoxelVolume, window: int = 3,
                 lam: float = DEFAULT_LAMBDA) -> RefinementPlan:
    """Enumerate refinement windows over the coarse labeling.

    Labels are processed in ascending order; windows cover runs of
    consecutive labels and never span gaps.  Inside a run of length >=
    ``window``, each interior label is the designated middle of a full
    window; run ends get truncated windows.  Every label is designated
    exactly once.
    """
    labels = coarse.labels()
    if not labels:
        raise EmptyMaskError("plan_windows: coarse volume has no labels")
    half = (window - 1) // 2
    windows = []
    for lab in labels:
        lo = lab - half
        hi = lab + (window - 1 - half)
        members = tuple(l for l in range(lo, hi + 1) if l in set(labels))
        # never span gaps: keep the consecutive run containing lab
        run = [lab]
        for l in range(lab - 1, lo - 1, -1):
            if l in members and run[0] - l == 1:
                run.insert(0, l)
        for l in range(lab + 1, hi + 1):
            if l in members and l - run[-1] == 1:
                run.append(l)
        windows.append(Window(tuple(run), lab))
    centers_voxel, centers_mm, sizes_mm = {}, {}, {}
    for lab in labels:
        voxel, mm, size = _instance_geometry(coarse, lab, lam)
        centers_voxel[lab] = voxel
        centers_mm[lab] = mm
        sizes_mm[lab] = size
    return RefinementPlan(windows, centers_voxel, centers_mm, sizes_mm)


def _fill_instance(desc: ContourDescriptor, patch_dims, spacing, config: RefineConfig,
                   tag: str) -> VoxelVolume:
    if config.fill_method == "radial":
        return recon.radial_fill(desc, patch_dims, spacing)
    filled, mesh = recon.mesh_fill(desc, patch_dims, spacing)
    if config.emit_mesh_dir is not None and not mesh.is_empty:
        recon.write_stl(mesh, f"{config.emit_mesh_dir}/{tag}.stl")
    return filled


def refine_volume(coarse: VoxelVolume, predictor: Predictor, basis: ContourBasis,
                  config: RefineConfig) -> VoxelVolume:
    """Run the full refinement pipeline over a coarse labeled volume.

    Returns a labeled volume whose foreground is a subset of the coarse
    foreground and whose labels each form a single 26-connected
    component.
    """
    if basis.grid != config.grid:
        raise InvalidInputError("basis grid does not match config grid")
    plan = plan_windows(coarse, config.window, config.lam)
    sp = coarse.spacing_array()
    dims = np.asarray(coarse.dims)
    patch_size = tuple(int(v) for v in config.patch_size)
    rng = SplitMix64(config.jitter_seed)
    jitter = np.asarray(config.jitter_voxels, dtype=np.int64)

    out = np.zeros(coarse.dims, dtype=np.int32)
    for win in plan.windows:
        jittered: dict[int, np.ndarray] = {}
        for lab in win.labels:
            offset = np.array([rng.randint(-j, j) if j else 0 for j in jitter])
            voxel = np.clip(np.asarray(plan.centers_voxel[lab]) + offset, 0, dims - 1)
            jittered[lab] = voxel
        patch = crop_patch(coarse, jittered[win.target], patch_size)
        origin_mm = np.asarray(patch.offset, dtype=np.float64) * sp

        prompts = [gaussian_prompt(jittered[lab] * sp - origin_mm,
                                   plan.sizes_mm[lab], config.m_bar_mm,
                                   patch_size, coarse.spacing)
                   for lab in win.labels]
        preds = predictor.predict(patch, prompts, win.labels, basis)
        if len(preds) != len(win.labels):
            raise InvalidInputError(
                f"predictor returned {len(preds)} instances for a "
                f"{len(win.labels)}-label window")

        fills: list[np.ndarray] = []
        fill_labels: list[int] = []
        fill_centers: list[np.ndarray] = []
        for lab, (center_mm, coeffs) in zip(win.labels, preds):
            if center_mm is None or coeffs is None:
                continue
            coeffs = np.asarray(coeffs, dtype=np.float64)
            if coeffs.shape != (basis.k,):
                raise InvalidInputError(
                    f"predictor returned {coeffs.shape} coefficients, expected ({basis.k},)")
            local_center = np.asarray(center_mm, dtype=np.float64) - origin_mm
            if (local_center < 0).any() or (local_center > (np.asarray(patch_size) - 1) * sp).any():
                continue  # instance fully outside this patch
            desc = reconstruct(basis, coeffs, local_center)
            mask = _fill_instance(desc, patch_size, coarse.spacing, config,
                                  tag=f"win{win.target}_lab{lab}")
            fills.append(mask.data != 0)
            fill_labels.append(lab)
            fill_centers.append(local_center)

        if not fills:
            continue
        # Resolve overlaps: each claimed voxel goes to the nearest refined center.
        centers_grid = voxel_centers_mm(patch_size, coarse.spacing)
        assigned = np.zeros(patch_size, dtype=np.int32)
        best = np.full(patch_size, np.inf)
        for mask_data, lab, ctr in zip(fills, fill_labels, fill_centers):
            dist = np.linalg.norm(centers_grid - ctr, axis=1).reshape(patch_size)
            take = mask_data & (dist < best)
            assigned[take] = lab
            best[take] = dist[take]

        # Paste back: the designated label always wins; neighbors only
        # fill background so they cannot undo earlier designated writes.
        lo = np.maximum(np.asarray(patch.offset), 0)
        hi = np.minimum(np.asarray(patch.offset) + patch_size, dims)
        src_lo = lo - np.asarray(patch.offset)
        src_hi = src_lo + (hi - lo)
        if (hi <= lo).any():
            continue
        dst = out[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
        src = assigned[src_lo[0]:src_hi[0], src_lo[1]:src_hi[1], src_lo[2]:src_hi[2]]
        target_take = src == win.target
        neighbor_take = (src != 0) & ~target_take & (dst == 0)
        dst[target_take] = win.target
        dst[neighbor_take] = src[neighbor_take]

    refined = binarized_attention(coarse, VoxelVolume(out, coarse.spacing))

    # Per-label connected-component cleanup: keep the largest, erase the rest.
    data = refined.data.copy()
    for lab in refined.labels():
        comps = connected_components(refined.label_mask(lab), connectivity=26)
        for extra in comps[1:]:
            data[tuple(extra.coords.T)] = 0
    return VoxelVolume(data, coarse.spacing)
