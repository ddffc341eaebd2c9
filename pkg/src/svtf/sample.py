"""Virtual-space scalar lookup through the page table.

Positions are continuous mip-0 voxel coordinates: voxel (i, j, k) is
centered at (i+0.5, j+0.5, k+0.5). Trilinear lookups reproduce dense
clamped-edge interpolation of the mip-level volume exactly. When the tile
under the interpolation base corner is resident, all eight corners come
from that single padded tile (the guarantee the one-voxel border exists
for); when it is empty, corners fall back to per-voxel page-table lookups
so values next to resident neighbors stay exact.
"""

from __future__ import annotations

import numpy as np

from .svt import EMPTY_ENTRY, SparseVolumeTexture, unpack_entry


def _level(svt: SparseVolumeTexture, mip: int):
    if not 0 <= mip < svt.mip_count:
        raise ValueError(f"mip {mip} out of range (have {svt.mip_count})")
    dims = svt.mip_dims(mip)
    table = svt.mips[mip]
    return dims, table.grid_dims, table.entries.ravel()


def _gather_voxels(svt, entries_flat, grid, cx, cy, cz):
    """Values of integer voxels (already clamped in-bounds) via the page table."""
    ts = svt.config.tile_size
    pad = svt.config.pad
    span = svt.config.padded_size
    tx, ty, tz = cx // ts, cy // ts, cz // ts
    packed = entries_flat[(tz * grid.y + ty) * grid.x + tx]
    resident = packed != EMPTY_ENTRY
    out = np.full(cx.shape, svt.config.empty_value, dtype=np.float64)
    if resident.any():
        ax, ay, az = unpack_entry(packed[resident])
        adata = svt.atlas.data
        vx = ax.astype(np.int64) * span + pad + (cx[resident] - tx[resident] * ts)
        vy = ay.astype(np.int64) * span + pad + (cy[resident] - ty[resident] * ts)
        vz = az.astype(np.int64) * span + pad + (cz[resident] - tz[resident] * ts)
        flat = (vz * adata.shape[1] + vy) * adata.shape[2] + vx
        out[resident] = adata.ravel()[flat].astype(np.float64)
    return out


def sample_nearest_many(svt: SparseVolumeTexture, px, py, pz, mip: int = 0) -> np.ndarray:
    """Nearest-voxel values; out of bounds and empty tiles give empty_value."""
    dims, grid, entries = _level(svt, mip)
    scale = float(1 << mip)
    vx = np.floor(np.asarray(px, dtype=np.float64) / scale).astype(np.int64)
    vy = np.floor(np.asarray(py, dtype=np.float64) / scale).astype(np.int64)
    vz = np.floor(np.asarray(pz, dtype=np.float64) / scale).astype(np.int64)
    inside = (
        (vx >= 0) & (vx < dims.x) & (vy >= 0) & (vy < dims.y) & (vz >= 0) & (vz < dims.z)
    )
    out = np.full(vx.shape, svt.config.empty_value, dtype=np.float64)
    if inside.any():
        out[inside] = _gather_voxels(
            svt, entries, grid, vx[inside], vy[inside], vz[inside]
        )
    return out


def _lerp3(c000, c100, c010, c110, c001, c101, c011, c111, fx, fy, fz):
    v00 = c000 * (1.0 - fx) + c100 * fx
    v10 = c010 * (1.0 - fx) + c110 * fx
    v01 = c001 * (1.0 - fx) + c101 * fx
    v11 = c011 * (1.0 - fx) + c111 * fx
    v0 = v00 * (1.0 - fy) + v10 * fy
    v1 = v01 * (1.0 - fy) + v11 * fy
    return v0 * (1.0 - fz) + v1 * fz


def sample_trilinear_many(svt: SparseVolumeTexture, px, py, pz, mip: int = 0) -> np.ndarray:
    dims, grid, entries = _level(svt, mip)
    ts = svt.config.tile_size
    pad = svt.config.pad
    span = svt.config.padded_size
    scale = float(1 << mip)

    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    pz = np.asarray(pz, dtype=np.float64)
    if mip:
        px, py, pz = px / scale, py / scale, pz / scale
    qx, qy, qz = px - 0.5, py - 0.5, pz - 0.5
    bx, by, bz = np.floor(qx), np.floor(qy), np.floor(qz)
    fx, fy, fz = qx - bx, qy - by, qz - bz
    bx, by, bz = bx.astype(np.int64), by.astype(np.int64), bz.astype(np.int64)

    c0x = np.clip(bx, 0, dims.x - 1)
    c0y = np.clip(by, 0, dims.y - 1)
    c0z = np.clip(bz, 0, dims.z - 1)
    sx = np.clip(bx + 1, 0, dims.x - 1) - c0x  # 0 or 1
    sy = np.clip(by + 1, 0, dims.y - 1) - c0y
    sz = np.clip(bz + 1, 0, dims.z - 1) - c0z

    tx, ty, tz = c0x // ts, c0y // ts, c0z // ts
    packed = entries[(tz * grid.y + ty) * grid.x + tx]
    resident = packed != EMPTY_ENTRY

    corners = [np.full(qx.shape, svt.config.empty_value, dtype=np.float64) for _ in range(8)]

    if resident.any():
        ax, ay, az = unpack_entry(packed[resident])
        adata = svt.atlas.data
        ox = ax.astype(np.int64) * span + pad + (c0x[resident] - tx[resident] * ts)
        oy = ay.astype(np.int64) * span + pad + (c0y[resident] - ty[resident] * ts)
        oz = az.astype(np.int64) * span + pad + (c0z[resident] - tz[resident] * ts)
        base_flat = (oz * adata.shape[1] + oy) * adata.shape[2] + ox
        dx = sx[resident]
        dy = sy[resident] * adata.shape[2]
        dz = sz[resident] * adata.shape[1] * adata.shape[2]
        flat_data = adata.ravel()
        for ez, ey, ex in np.ndindex(2, 2, 2):
            idx = base_flat + ez * dz + ey * dy + ex * dx
            corners[(ez << 2) | (ey << 1) | ex][resident] = flat_data[idx].astype(np.float64)

    # Empty base tile: if all eight corners stay inside it, they are all
    # empty_value, which the corner arrays already hold. Only positions whose
    # +1 corners spill into a neighboring tile need per-voxel lookups.
    spills = (
        ((c0x - tx * ts == ts - 1) & (sx == 1))
        | ((c0y - ty * ts == ts - 1) & (sy == 1))
        | ((c0z - tz * ts == ts - 1) & (sz == 1))
    )
    fallback = ~resident & spills
    if fallback.any():
        fx0, fy0, fz0 = c0x[fallback], c0y[fallback], c0z[fallback]
        fsx, fsy, fsz = sx[fallback], sy[fallback], sz[fallback]
        for ez, ey, ex in np.ndindex(2, 2, 2):
            corners[(ez << 2) | (ey << 1) | ex][fallback] = _gather_voxels(
                svt, entries, grid, fx0 + ex * fsx, fy0 + ey * fsy, fz0 + ez * fsz
            )

    return _lerp3(
        corners[0b000],
        corners[0b001],
        corners[0b010],
        corners[0b011],
        corners[0b100],
        corners[0b101],
        corners[0b110],
        corners[0b111],
        fx,
        fy,
        fz,
    )


def sample_nearest(svt: SparseVolumeTexture, pos, mip: int = 0) -> float:
    px, py, pz = (np.asarray([p], dtype=np.float64) for p in pos)
    return float(sample_nearest_many(svt, px, py, pz, mip)[0])


def sample_trilinear(svt: SparseVolumeTexture, pos, mip: int = 0) -> float:
    px, py, pz = (np.asarray([p], dtype=np.float64) for p in pos)
    return float(sample_trilinear_many(svt, px, py, pz, mip)[0])


def trilinear_dense(arr: np.ndarray, px, py, pz) -> np.ndarray:
    """Clamped-edge trilinear lookup in a dense [z, y, x(, c)] array.

    Uses the same arithmetic order as the sparse path; the renderer uses it
    for illumination-cache lookups.
    """
    nz, ny, nx = arr.shape[:3]
    qx = np.asarray(px, dtype=np.float64) - 0.5
    qy = np.asarray(py, dtype=np.float64) - 0.5
    qz = np.asarray(pz, dtype=np.float64) - 0.5
    bx, by, bz = np.floor(qx), np.floor(qy), np.floor(qz)
    fx, fy, fz = qx - bx, qy - by, qz - bz
    if arr.ndim > 3:
        fx, fy, fz = fx[..., None], fy[..., None], fz[..., None]
    c0x = np.clip(bx.astype(np.int64), 0, nx - 1)
    c0y = np.clip(by.astype(np.int64), 0, ny - 1)
    c0z = np.clip(bz.astype(np.int64), 0, nz - 1)
    c1x = np.clip(bx.astype(np.int64) + 1, 0, nx - 1)
    c1y = np.clip(by.astype(np.int64) + 1, 0, ny - 1)
    c1z = np.clip(bz.astype(np.int64) + 1, 0, nz - 1)
    a = arr.astype(np.float64, copy=False)
    return _lerp3(
        a[c0z, c0y, c0x],
        a[c0z, c0y, c1x],
        a[c0z, c1y, c0x],
        a[c0z, c1y, c1x],
        a[c1z, c0y, c0x],
        a[c1z, c0y, c1x],
        a[c1z, c1y, c0x],
        a[c1z, c1y, c1x],
        fx,
        fy,
        fz,
    )
