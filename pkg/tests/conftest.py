import numpy as np
import pytest

from sphcontour import AngleGrid, VoxelVolume


def digital_ball(radius, center=None, dims=None, spacing=(1.0, 1.0, 1.0)):
    """Binary mask of voxels whose center lies within `radius` (voxel units)."""
    if dims is None:
        n = int(2 * radius) + 7
        dims = (n, n, n)
    if center is None:
        center = tuple(d // 2 for d in dims)
    xs = np.arange(dims[0])[:, None, None] - center[0]
    ys = np.arange(dims[1])[None, :, None] - center[1]
    zs = np.arange(dims[2])[None, None, :] - center[2]
    dist = np.sqrt(xs.astype(float) ** 2 + ys ** 2 + zs ** 2)
    return VoxelVolume((dist <= radius).astype(np.uint8), spacing)


@pytest.fixture(scope="session")
def grid5():
    return AngleGrid(5)


@pytest.fixture(scope="session")
def ball10():
    return digital_ball(10)
