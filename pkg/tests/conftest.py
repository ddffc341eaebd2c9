"""Shared fixtures, volume factories, and independent oracles.

Oracle functions here deliberately re-derive results from the dense source
arrays without touching page tables or atlases, so they stay independent
of the code paths they check.
"""

import numpy as np
import pytest

from svtf import DenseVolume, VoxelFormat

_ACCEPTANCE_RESULTS = []


def pytest_runtest_logreport(report):
    if "test_acceptance" in report.nodeid and report.when == "call":
        name = report.nodeid.split("::")[-1]
        _ACCEPTANCE_RESULTS.append((name, report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, outcome in sorted(_ACCEPTANCE_RESULTS):
        label = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{label}  {name}")


def make_volume(data, fmt=VoxelFormat.U8) -> DenseVolume:
    return DenseVolume.from_array(np.asarray(data), fmt)


def random_volume(rng, max_dim=64, fmt=VoxelFormat.U8, fill=0.5) -> DenseVolume:
    """Random dims (not tile-aligned on purpose) with a controllable fill rate."""
    dims = rng.integers(1, max_dim + 1, size=3)
    occupied = rng.random(size=dims[::-1]) < fill
    if fmt is VoxelFormat.U8:
        values = rng.integers(1, 256, size=dims[::-1]).astype(np.uint8)
        data = np.where(occupied, values, 0).astype(np.uint8)
    else:
        values = rng.standard_normal(size=dims[::-1]).astype(np.float32) * 10
        values[values == 0] = 1.0
        data = np.where(occupied, values, np.float32(0)).astype(np.float32)
    return make_volume(data, fmt)


def dense_trilinear_oracle(data_zyx: np.ndarray, px, py, pz) -> np.ndarray:
    """Clamped-edge trilinear interpolation straight off the dense array."""
    nz, ny, nx = data_zyx.shape
    qx = np.asarray(px, dtype=np.float64) - 0.5
    qy = np.asarray(py, dtype=np.float64) - 0.5
    qz = np.asarray(pz, dtype=np.float64) - 0.5
    bx, by, bz = np.floor(qx), np.floor(qy), np.floor(qz)
    fx, fy, fz = qx - bx, qy - by, qz - bz
    x0 = np.clip(bx.astype(np.int64), 0, nx - 1)
    y0 = np.clip(by.astype(np.int64), 0, ny - 1)
    z0 = np.clip(bz.astype(np.int64), 0, nz - 1)
    x1 = np.clip(bx.astype(np.int64) + 1, 0, nx - 1)
    y1 = np.clip(by.astype(np.int64) + 1, 0, ny - 1)
    z1 = np.clip(bz.astype(np.int64) + 1, 0, nz - 1)
    a = data_zyx.astype(np.float64)
    v00 = a[z0, y0, x0] * (1.0 - fx) + a[z0, y0, x1] * fx
    v10 = a[z0, y1, x0] * (1.0 - fx) + a[z0, y1, x1] * fx
    v01 = a[z1, y0, x0] * (1.0 - fx) + a[z1, y0, x1] * fx
    v11 = a[z1, y1, x0] * (1.0 - fx) + a[z1, y1, x1] * fx
    v0 = v00 * (1.0 - fy) + v10 * fy
    v1 = v01 * (1.0 - fy) + v11 * fy
    return v0 * (1.0 - fz) + v1 * fz


def brute_force_residency(volume: DenseVolume, tile_size: int, empty=0.0) -> np.ndarray:
    """Tile-grid boolean array: True where the tile's in-volume region has
    any value != empty."""
    d = volume.dims
    gx, gy, gz = (-(-d.x // tile_size), -(-d.y // tile_size), -(-d.z // tile_size))
    out = np.zeros((gz, gy, gx), dtype=bool)
    for tz in range(gz):
        for ty in range(gy):
            for tx in range(gx):
                region = volume.data[
                    tz * tile_size : (tz + 1) * tile_size,
                    ty * tile_size : (ty + 1) * tile_size,
                    tx * tile_size : (tx + 1) * tile_size,
                ]
                out[tz, ty, tx] = bool((region != empty).any())
    return out


def brute_force_mip(data_zyx: np.ndarray) -> np.ndarray:
    """Ceil-halved volume, each voxel the mean of its existing children."""
    nz, ny, nx = data_zyx.shape
    oz, oy, ox = -(-nz // 2), -(-ny // 2), -(-nx // 2)
    out = np.zeros((oz, oy, ox), dtype=np.float64)
    for z in range(oz):
        for y in range(oy):
            for x in range(ox):
                block = data_zyx[
                    2 * z : min(2 * z + 2, nz),
                    2 * y : min(2 * y + 2, ny),
                    2 * x : min(2 * x + 2, nx),
                ].astype(np.float64)
                out[z, y, x] = block.mean()
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)
