"""Distance-based spherical centroid of a binary mask.

The spherical center used for contour encoding is the foreground voxel
minimizing the mean Euclidean distance to the exterior boundary shell,
plus a small pull toward the boundary voxel with the largest y index
(delta).  The pull densifies angular sampling near the posterior process
of vertebra-like shapes, where contours are hardest to restore:

    C = argmin_{c in M}  (1/|B|) sum_{b in B} d(c, b) + lambda * d(c, delta)

with B = dilate(M, 1) \\ M and all distances in physical mm.  The
default weight lambda is 0.005.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyMaskError
from .volume import VoxelSet, VoxelVolume, boundary

DEFAULT_LAMBDA = 0.005

_CHUNK = 1024  # candidate rows per distance-matrix block


@dataclass(frozen=True)
class CentroidSolution:
    """Argmin voxel, its objective value (mm), and the anchor point delta."""

    point: tuple[int, int, int]
    objective: float
    delta: tuple[int, int, int]
    lam: float


def select_delta(bnd: VoxelSet) -> tuple[int, int, int]:
    """Boundary voxel with the largest y index; ties break on max z, then max x."""
    if len(bnd) == 0:
        raise EmptyMaskError("select_delta: boundary is empty")
    coords = bnd.coords
    order = np.lexsort((coords[:, 0], coords[:, 2], coords[:, 1]))
    return tuple(int(v) for v in coords[order[-1]])


def objective(c, bnd: VoxelSet, delta, lam: float, spacing) -> float:
    """Evaluate the centroid objective at voxel index ``c``, in mm."""
    if len(bnd) == 0:
        raise EmptyMaskError("objective: boundary is empty")
    sp = np.asarray(spacing, dtype=np.float64)
    c_mm = np.asarray(c, dtype=np.float64) * sp
    b_mm = bnd.centers_mm(sp)
    d_mm = np.asarray(delta, dtype=np.float64) * sp
    mean_dist = float(np.mean(np.linalg.norm(b_mm - c_mm, axis=1)))
    return mean_dist + lam * float(np.linalg.norm(d_mm - c_mm))


def _objective_rows(cand_mm: np.ndarray, b_mm: np.ndarray, b_sq: np.ndarray,
                    d_mm: np.ndarray, lam: float) -> np.ndarray:
    """Objective for a block of candidate positions (mm), vectorized.

    Distances come from the expansion |c-b|^2 = |c|^2 + |b|^2 - 2 c.b so
    the inner loop is a matrix product; tiny negative squares from
    cancellation are clipped before the square root.
    """
    c_sq = np.einsum("ij,ij->i", cand_mm, cand_mm)
    sq = c_sq[:, None] + b_sq[None, :] - 2.0 * (cand_mm @ b_mm.T)
    mean_dist = np.sqrt(np.maximum(sq, 0.0)).mean(axis=1)
    return mean_dist + lam * np.linalg.norm(cand_mm - d_mm, axis=1)


def spherical_centroid(mask: VoxelVolume, lam: float = DEFAULT_LAMBDA,
                       method: str = "exhaustive") -> CentroidSolution:
    """Exact argmin of the centroid objective over foreground voxels.

    ``method`` selects the search strategy:

    * ``"exhaustive"`` (default) evaluates every foreground voxel in
      float64, the reference semantics.
    * ``"coarse"`` surveys a stride-2 candidate subsample against a
      boundary subsample in float32, then re-evaluates a 7x7x7
      neighborhood of the survey winner exactly.  Much faster on large
      masks; it returns the exhaustive argmin on all tested masks, but
      that is verified by the test suite rather than guaranteed.

    Ties in the objective break on the lexicographically smallest
    (z, y, x) index.
    """
    fg = np.argwhere(mask.data != 0)
    if fg.size == 0:
        raise EmptyMaskError("spherical_centroid: mask is empty")
    bnd = boundary(mask.binarized() if not mask.is_binary else mask)
    if len(bnd) == 0:
        raise EmptyMaskError("spherical_centroid: boundary is empty (mask fills the grid)")
    delta = select_delta(bnd)
    sp = mask.spacing_array()
    b_mm = bnd.centers_mm(sp)
    d_mm = np.asarray(delta, dtype=np.float64) * sp

    # (z, y, x) ascending so the first minimum realizes the tie-break rule.
    fg = fg[np.lexsort((fg[:, 0], fg[:, 1], fg[:, 2]))]

    if method == "coarse":
        cand = fg[(fg % 2 == 0).all(axis=1)]
        if cand.size == 0:
            cand = fg
        survey, _ = _argmin_over(cand, b_mm[::4], d_mm, lam, sp, dtype=np.float32)
        near = np.abs(fg - np.asarray(survey)) <= 3
        cand = fg[near.all(axis=1)]
        point, value = _argmin_over(cand, b_mm, d_mm, lam, sp)
    elif method == "exhaustive":
        point, value = _argmin_over(fg, b_mm, d_mm, lam, sp)
    else:
        raise ValueError(f"unknown method {method!r}")
    return CentroidSolution(tuple(int(v) for v in point), float(value), delta, lam)


def _argmin_over(candidates: np.ndarray, b_mm: np.ndarray, d_mm: np.ndarray,
                 lam: float, sp: np.ndarray, dtype=np.float64):
    b_mm = b_mm.astype(dtype, copy=False)
    b_sq = np.einsum("ij,ij->i", b_mm, b_mm)
    best_val = np.inf
    best_idx = None
    for lo in range(0, candidates.shape[0], _CHUNK):
        block = candidates[lo:lo + _CHUNK]
        vals = _objective_rows((block * sp).astype(dtype), b_mm, b_sq,
                               d_mm.astype(dtype), lam)
        i = int(np.argmin(vals))
        if vals[i] < best_val:
            best_val = float(vals[i])
            best_idx = block[i]
    return best_idx, best_val
