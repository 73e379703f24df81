"""Low-rank contour bases: SVD basis extraction, coefficients, reconstruction.

Descriptors from a training corpus form the columns of an N x L contour
matrix.  Its first k left singular vectors span a contour space in which
any similar shape is approximately a linear combination

    M = U S V^T,    M(k) = U(k) C ~= M,    C = U(k)^T M

The SVD acts on the raw (uncentered) matrix.  The PCA baseline instead
subtracts the mean shape nu first and reconstructs as ``basis @ C + nu``;
the asymmetry is deliberate and mirrors how the two models are usually
fit.  Reconstructed radii are clamped at zero since rho is a distance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .codec import AngleGrid, ContourDescriptor
from .errors import CorruptFileError, InvalidInputError, NumericalError


@dataclass(frozen=True)
class ContourMatrix:
    """N x L matrix whose columns are contour descriptors on one grid."""

    data: np.ndarray
    grid: AngleGrid

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] != self.grid.size:
            raise InvalidInputError(
                f"contour matrix must be {self.grid.size} x L, got {data.shape}")
        if (data < 0).any():
            raise InvalidInputError("contour matrix entries must be non-negative")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def count(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class ContourBasis:
    """Rank-k orthonormal contour basis with the full singular spectrum.

    ``method`` is "svd" (raw matrix) or "pca" (column-centered); PCA
    carries the mean shape in ``mean``.
    """

    U: np.ndarray
    sigma: np.ndarray
    k: int
    grid: AngleGrid
    method: str = "svd"
    mean: Optional[np.ndarray] = None

    def __post_init__(self):
        U = np.asarray(self.U, dtype=np.float64)
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if U.ndim != 2 or U.shape != (self.grid.size, self.k):
            raise InvalidInputError(
                f"basis must be {self.grid.size} x {self.k}, got {U.shape}")
        if (np.diff(sigma) > 1e-9 * max(1.0, abs(float(sigma[0])) if sigma.size else 1.0)).any():
            raise InvalidInputError("singular values must be non-increasing")
        if (sigma < 0).any():
            raise InvalidInputError("singular values must be non-negative")
        if self.method not in ("svd", "pca"):
            raise InvalidInputError(f"method must be 'svd' or 'pca', got {self.method!r}")
        if (self.mean is None) == (self.method == "pca"):
            raise InvalidInputError("mean shape is required for pca and forbidden for svd")
        U.setflags(write=False)
        sigma.setflags(write=False)
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "sigma", sigma)
        if self.mean is not None:
            mean = np.asarray(self.mean, dtype=np.float64)
            if mean.shape != (self.grid.size,):
                raise InvalidInputError("mean shape length mismatch")
            mean.setflags(write=False)
            object.__setattr__(self, "mean", mean)

    def truncated(self, k: int) -> "ContourBasis":
        """Nested sub-basis with the first k columns."""
        if not 1 <= k <= self.k:
            raise InvalidInputError(f"cannot truncate rank-{self.k} basis to k={k}")
        return ContourBasis(self.U[:, :k], self.sigma, k, self.grid, self.method, self.mean)


def build_matrix(descriptors: list[ContourDescriptor]) -> ContourMatrix:
    """Stack descriptors as columns; all must share one angle grid."""
    if not descriptors:
        raise InvalidInputError("build_matrix: no descriptors")
    grid = descriptors[0].grid
    if any(d.grid != grid for d in descriptors):
        raise InvalidInputError("build_matrix: descriptors use mixed grids")
    return ContourMatrix(np.column_stack([d.rho for d in descriptors]), grid)


def _thin_svd(data: np.ndarray):
    try:
        u, s, _ = np.linalg.svd(data, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD failed to converge: {exc}") from exc
    return u, s


def fit_svd(matrix: ContourMatrix, k: int) -> ContourBasis:
    """Rank-k basis from the raw contour matrix: first k left singular vectors."""
    r = min(matrix.data.shape)
    if not 1 <= k <= r:
        raise InvalidInputError(f"k must be in [1, {r}], got {k}")
    u, s = _thin_svd(matrix.data)
    return ContourBasis(u[:, :k], s, k, matrix.grid, "svd")


def fit_pca(matrix: ContourMatrix, k: int) -> ContourBasis:
    """PCA baseline: top-k eigenvectors of the column-centered covariance.

    Computed as the SVD of the centered matrix, which is equivalent and
    better conditioned than forming the covariance.
    """
    if matrix.count < 2:
        raise InvalidInputError("fit_pca needs at least 2 descriptors")
    r = min(matrix.data.shape)
    if not 1 <= k <= r:
        raise InvalidInputError(f"k must be in [1, {r}], got {k}")
    mean = matrix.data.mean(axis=1)
    u, s = _thin_svd(matrix.data - mean[:, None])
    return ContourBasis(u[:, :k], s, k, matrix.grid, "pca", mean)


def project(basis: ContourBasis, target: Union[ContourDescriptor, ContourMatrix, np.ndarray]) -> np.ndarray:
    """Coefficients of a descriptor (k-vector) or matrix (k x L) in the basis."""
    if isinstance(target, ContourDescriptor):
        if target.grid != basis.grid:
            raise InvalidInputError("descriptor grid does not match basis grid")
        values = target.rho
    elif isinstance(target, ContourMatrix):
        if target.grid != basis.grid:
            raise InvalidInputError("matrix grid does not match basis grid")
        values = target.data
    else:
        values = np.asarray(target, dtype=np.float64)
    if values.shape[0] != basis.grid.size:
        raise InvalidInputError(
            f"dimension {values.shape[0]} does not match grid size {basis.grid.size}")
    if basis.method == "pca":
        values = values - (basis.mean if values.ndim == 1 else basis.mean[:, None])
    return basis.U.T @ values


def reconstruct(basis: ContourBasis, coeffs: np.ndarray, center,
                grid: Optional[AngleGrid] = None) -> ContourDescriptor:
    """Descriptor from coefficients: U(k) C (svd) or basis C + mean (pca).

    Negative radii are clamped to zero.
    """
    grid = grid or basis.grid
    if grid != basis.grid:
        raise InvalidInputError("requested grid does not match basis grid")
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape != (basis.k,):
        raise InvalidInputError(f"expected {basis.k} coefficients, got {coeffs.shape}")
    rho = basis.U @ coeffs
    if basis.method == "pca":
        rho = rho + basis.mean
    return ContourDescriptor(np.maximum(rho, 0.0), grid, np.asarray(center, dtype=np.float64))


# ---------------------------------------------------------------------------
# SBASIS v1 container: JSON header line, then sigma (f64 LE), then U
# column-major f64 LE, then the mean shape for pca bases.


def write_basis(basis: ContourBasis, path) -> None:
    header = {
        "magic": "SBASIS",
        "version": 1,
        "method": basis.method,
        "N": basis.grid.size,
        "k": basis.k,
        "n_sigma": int(basis.sigma.size),
        "s_deg": basis.grid.interval_deg,
        "axis": basis.grid.axis_convention,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        fh.write(basis.sigma.astype("<f8").tobytes())
        fh.write(basis.U.astype("<f8").tobytes(order="F"))
        if basis.mean is not None:
            fh.write(basis.mean.astype("<f8").tobytes())


def read_basis(path) -> ContourBasis:
    with open(path, "rb") as fh:
        line = fh.readline()
        if not line.endswith(b"\n"):
            raise CorruptFileError(f"{path}: missing header line")
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CorruptFileError(f"{path}: malformed header: {exc}") from exc
        payload = fh.read()
    if not isinstance(header, dict) or header.get("magic") != "SBASIS":
        raise CorruptFileError(f"{path}: not an SBASIS file")
    if header.get("version") != 1:
        raise CorruptFileError(f"{path}: unsupported SBASIS version")
    try:
        method = str(header["method"])
        n = int(header["N"])
        k = int(header["k"])
        n_sigma = int(header["n_sigma"])
        grid = AngleGrid(int(header["s_deg"]), str(header["axis"]))
    except (KeyError, TypeError, ValueError, InvalidInputError) as exc:
        raise CorruptFileError(f"{path}: bad header fields: {exc}") from exc
    if n != grid.size or method not in ("svd", "pca") or k < 1 or n_sigma < k:
        raise CorruptFileError(f"{path}: inconsistent header")
    expected = 8 * (n_sigma + n * k + (n if method == "pca" else 0))
    if len(payload) != expected:
        raise CorruptFileError(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}")
    sigma = np.frombuffer(payload[:8 * n_sigma], dtype="<f8")
    u = np.frombuffer(payload[8 * n_sigma:8 * (n_sigma + n * k)],
                      dtype="<f8").reshape((n, k), order="F")
    mean = None
    if method == "pca":
        mean = np.frombuffer(payload[8 * (n_sigma + n * k):], dtype="<f8")
    return ContourBasis(u, sigma, k, grid, method, mean)
