"""Segmentation and contour quality metrics.

Distances are Euclidean in physical mm.  Nearest-neighbor reductions use
chunked brute force: set sizes in this pipeline stay in the thousands,
and brute force agrees with the defining oracle bit for bit.

The contour loss is the one-directional mean minimal distance from a
point set to boundary voxel centers.  The surface-distance numbers
reported by :func:`evaluate_labels` (the "asd" column) are the same
one-directional quantity, measured from the predicted surface to the
reference boundary, not a symmetrized variant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyMaskError, InvalidInputError
from .rng import SplitMix64
from .volume import VoxelSet, VoxelVolume, boundary, surface

_CHUNK = 512


def dice(a: VoxelVolume, b: VoxelVolume) -> float:
    """Dice overlap 2|A n B| / (|A| + |B|); two empty masks count as 1."""
    if a.dims != b.dims:
        raise InvalidInputError(f"dims mismatch: {a.dims} vs {b.dims}")
    fa = a.data != 0
    fb = b.data != 0
    denom = int(fa.sum()) + int(fb.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((fa & fb).sum()) / denom


def _min_dists_exact(points: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-point minimal distance, computed exactly as sqrt(sum of squares).

    This is the same arithmetic as the elementwise O(n^2) definition, so
    results match a brute-force oracle bit for bit.
    """
    out = np.empty(points.shape[0], dtype=np.float64)
    for lo in range(0, points.shape[0], _CHUNK):
        block = points[lo:lo + _CHUNK]
        diff = block[:, None, :] - targets[None, :, :]
        out[lo:lo + _CHUNK] = np.sqrt((diff * diff).sum(axis=2)).min(axis=1)
    return out


def _min_dists_fast(points: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-point minimal distance via the |p|^2 + |t|^2 - 2 p.t expansion.

    An order of magnitude faster than the elementwise form; accurate to
    cancellation noise (~1e-12 mm at these scales).
    """
    t_sq = np.einsum("ij,ij->i", targets, targets)
    out = np.empty(points.shape[0], dtype=np.float64)
    for lo in range(0, points.shape[0], _CHUNK):
        block = points[lo:lo + _CHUNK]
        p_sq = np.einsum("ij,ij->i", block, block)
        sq = p_sq[:, None] + t_sq[None, :] - 2.0 * (block @ targets.T)
        out[lo:lo + _CHUNK] = np.sqrt(np.maximum(sq.min(axis=1), 0.0))
    return out


def hausdorff(a: VoxelSet, b: VoxelSet, spacing) -> float:
    """Symmetric Hausdorff distance between two voxel sets, in mm."""
    if len(a) == 0 or len(b) == 0:
        raise EmptyMaskError("hausdorff: sets must be non-empty")
    pa = a.centers_mm(spacing)
    pb = b.centers_mm(spacing)
    return float(max(_min_dists_exact(pa, pb).max(), _min_dists_exact(pb, pa).max()))


def contour_loss(points: np.ndarray, bnd: VoxelSet, spacing) -> float:
    """Mean minimal distance from contour points to boundary voxel centers, mm."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if points.shape[0] == 0 or len(bnd) == 0:
        raise EmptyMaskError("contour_loss: inputs must be non-empty")
    return float(_min_dists_fast(points, bnd.centers_mm(spacing)).mean())


def center_loss(pred, gt) -> float:
    """Squared Euclidean distance between predicted and true centers, mm^2."""
    diff = np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64)
    return float(diff @ diff)


def subsample_boundary(bnd: VoxelSet, fraction: float, seed: int) -> VoxelSet:
    """Uniform without-replacement sample of ceil(fraction * |B|) voxels.

    Deterministic per seed.  Training-style contour losses can be
    computed against a 1/3 subsample with little change as long as the
    contour sits a couple of voxels off the boundary.
    """
    if not 0 < fraction <= 1:
        raise InvalidInputError(f"fraction must be in (0, 1], got {fraction}")
    if len(bnd) == 0:
        raise EmptyMaskError("subsample_boundary: boundary is empty")
    n = len(bnd)
    k = int(np.ceil(fraction * n))
    if k >= n:
        return bnd
    picked = SplitMix64(seed).choice(n, k)
    return VoxelSet(bnd.coords[picked], bnd.dims)


@dataclass
class MetricReport:
    """Per-label dice/hd/asd plus mean and median aggregates."""

    per_label: dict[int, dict[str, float | None]]
    mean: dict[str, float] = field(default_factory=dict)
    median: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "per_label": {str(k): v for k, v in self.per_label.items()},
            "mean": self.mean,
            "median": self.median,
        }

    def to_csv_rows(self) -> list[str]:
        rows = ["label,dice,hd,asd"]
        fmt = lambda v: "" if v is None else f"{v:.6f}"
        for lab in sorted(self.per_label):
            m = self.per_label[lab]
            rows.append(f"{lab},{fmt(m['dice'])},{fmt(m['hd'])},{fmt(m['asd'])}")
        return rows


def evaluate_labels(pred: VoxelVolume, truth: VoxelVolume) -> MetricReport:
    """Per-label Dice, Hausdorff, and one-directional surface distance.

    Labels present in either volume are reported.  hd and asd need both
    masks non-empty and are None otherwise; aggregates cover the labels
    where each metric is defined.
    """
    if pred.dims != truth.dims:
        raise InvalidInputError(f"dims mismatch: {pred.dims} vs {truth.dims}")
    labels = sorted(set(pred.labels()) | set(truth.labels()))
    per_label: dict[int, dict[str, float | None]] = {}
    for lab in labels:
        pm = pred.label_mask(lab)
        tm = truth.label_mask(lab)
        entry: dict[str, float | None] = {"dice": dice(pm, tm), "hd": None, "asd": None}
        if pm.foreground_count() and tm.foreground_count():
            pb = boundary(pm)
            tb = boundary(tm)
            entry["hd"] = hausdorff(pb, tb, pred.spacing)
            entry["asd"] = contour_loss(
                surface(pm).centers_mm(pred.spacing), tb, pred.spacing)
        per_label[lab] = entry
    report = MetricReport(per_label)
    for key in ("dice", "hd", "asd"):
        vals = [m[key] for m in per_label.values() if m[key] is not None]
        if vals:
            report.mean[key] = float(np.mean(vals))
            report.median[key] = float(np.median(vals))
    return report
