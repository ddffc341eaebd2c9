"""Sparse volume textures: padded tiles, occupancy masks, mips, page tables.

The volume is cut into tile_size^3 logical tiles, each stored with a one
voxel border (18^3 by default) so trilinear filtering never has to leave a
tile. Only tiles whose logical region holds at least one non-empty voxel
get a slot in the physical atlas; a per-mip page table maps tile coords to
slots, with 0xFFFFFFFF marking empty tiles.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import AtlasCapacityExceeded, CorruptStream, DataError, OutOfGrid
from .volume import DenseVolume, VolumeDims, VoxelFormat

EMPTY_ENTRY = np.uint32(0xFFFFFFFF)
_COORD_BITS = 10  # per-axis field in a packed page-table entry


@dataclass(frozen=True)
class SvtConfig:
    tile_size: int = 16
    pad: int = 1
    max_atlas_extent: int = 2048
    empty_value: float = 0.0
    # Emptiness for float volumes is |v - empty_value| <= threshold; 0 means
    # exact comparison (integer formats always compare exactly).
    float_empty_threshold: float = 0.0

    def __post_init__(self):
        if self.tile_size < 2:
            raise ValueError("tile_size must be >= 2")
        if self.pad < 1:
            raise ValueError("pad must be >= 1")
        if self.max_atlas_extent < self.padded_size:
            raise ValueError("max_atlas_extent smaller than one padded tile")
        if self.float_empty_threshold < 0:
            raise ValueError("float_empty_threshold must be >= 0")

    @property
    def padded_size(self) -> int:
        return self.tile_size + 2 * self.pad

    @property
    def occupancy_mask_bytes(self) -> int:
        return (self.padded_size**3 + 7) // 8

    @property
    def max_slots_per_axis(self) -> int:
        return self.max_atlas_extent // self.padded_size


@dataclass
class PaddedTile:
    tile_coord: tuple[int, int, int]
    mip_level: int
    values: np.ndarray  # (padded, padded, padded) in [z, y, x]
    occupancy: np.ndarray  # bool, same shape, set where value is non-empty

    def packed_occupancy(self) -> bytes:
        return np.packbits(self.occupancy.ravel(), bitorder="little").tobytes()

    @property
    def popcount(self) -> int:
        return int(self.occupancy.sum(dtype=np.int64))


@dataclass
class PageTable:
    grid_dims: VolumeDims
    entries: np.ndarray  # uint32, shape grid_dims.as_zyx(), EMPTY_ENTRY = empty


@dataclass
class TileAtlas:
    dims: VolumeDims | None  # None when no tile is resident
    data: np.ndarray


@dataclass
class BuildStats:
    nonempty_voxel_count: int
    nonempty_tile_count: tuple[int, ...]
    padded_nonempty_voxel_count: int
    mean_tile_occupancy: float


@dataclass
class SparseVolumeTexture:
    config: SvtConfig
    format: VoxelFormat
    virtual_dims: VolumeDims
    mips: list[PageTable]
    atlas: TileAtlas
    stats: BuildStats = field(repr=False, default=None)

    @property
    def mip_count(self) -> int:
        return len(self.mips)

    def mip_dims(self, level: int) -> VolumeDims:
        return mip_level_dims(self.virtual_dims, level)

    @property
    def slot_count(self) -> int:
        return int(sum(self.stats.nonempty_tile_count))


def pack_entry(ax: int, ay: int, az: int) -> np.uint32:
    return np.uint32(ax | (ay << _COORD_BITS) | (az << 2 * _COORD_BITS))


def unpack_entry(entry):
    mask = (1 << _COORD_BITS) - 1
    e = np.asarray(entry, dtype=np.uint64)
    return (e & mask, (e >> _COORD_BITS) & mask, (e >> 2 * _COORD_BITS) & mask)


def tile_grid_dims(dims: VolumeDims, tile_size: int) -> VolumeDims:
    if tile_size < 2:
        raise ValueError("tile_size must be >= 2")
    return VolumeDims(
        -(-dims.x // tile_size), -(-dims.y // tile_size), -(-dims.z // tile_size)
    )


def mip_level_dims(dims: VolumeDims, level: int) -> VolumeDims:
    f = 1 << level
    return VolumeDims(-(-dims.x // f), -(-dims.y // f), -(-dims.z // f))


def nonempty_mask(values: np.ndarray, config: SvtConfig) -> np.ndarray:
    """Boolean mask of voxels counted as occupied under the config."""
    if values.dtype.kind in "ui" or config.float_empty_threshold == 0:
        return values != np.asarray(config.empty_value, dtype=values.dtype)
    delta = np.abs(values.astype(np.float64) - config.empty_value)
    return delta > config.float_empty_threshold


def build_mip_level(volume: DenseVolume) -> DenseVolume:
    """Halve each axis (ceil), averaging the up-to-8 children of each voxel.

    Children falling outside the volume are excluded from the mean rather
    than padded, so border voxels average only what exists.
    """
    d = volume.data
    nz, ny, nx = d.shape
    oz, oy, ox = -(-nz // 2), -(-ny // 2), -(-nx // 2)
    sums = np.zeros((oz * 2, oy * 2, ox * 2), dtype=np.float64)
    sums[:nz, :ny, :nx] = d
    sums = sums.reshape(oz, 2, oy, 2, ox, 2).sum(axis=(1, 3, 5))
    counts = (
        np.where(np.arange(oz) * 2 + 1 < nz, 2, 1)[:, None, None]
        * np.where(np.arange(oy) * 2 + 1 < ny, 2, 1)[None, :, None]
        * np.where(np.arange(ox) * 2 + 1 < nx, 2, 1)[None, None, :]
    )
    mean = sums / counts
    if volume.format is VoxelFormat.U8:
        out = np.floor(mean + 0.5).astype(np.uint8)
    else:
        out = mean.astype(np.float32)
    return DenseVolume.from_array(out, volume.format)


def mip_chain(volume: DenseVolume, config: SvtConfig) -> list[DenseVolume]:
    """Full-resolution volume plus halved levels until one tile covers it."""
    levels = [volume]
    while max(levels[-1].dims.x, levels[-1].dims.y, levels[-1].dims.z) > config.tile_size:
        levels.append(build_mip_level(levels[-1]))
    return levels


def _tile_aligned(data: np.ndarray, grid: VolumeDims, config: SvtConfig) -> np.ndarray:
    """Edge-clamp data up to a tile-aligned shape (out-of-volume reads clamp)."""
    ts = config.tile_size
    widths = (
        (0, grid.z * ts - data.shape[0]),
        (0, grid.y * ts - data.shape[1]),
        (0, grid.x * ts - data.shape[2]),
    )
    if any(w for _, w in widths):
        return np.pad(data, widths, mode="edge")
    return data


def extract_padded_tile(
    volume: DenseVolume, tile_coord, config: SvtConfig, mip_level: int = 0
) -> PaddedTile:
    """Copy one tile plus its one-voxel border, clamping reads at the volume edge."""
    tx, ty, tz = tile_coord
    grid = tile_grid_dims(volume.dims, config.tile_size)
    if not (0 <= tx < grid.x and 0 <= ty < grid.y and 0 <= tz < grid.z):
        raise OutOfGrid(f"tile {tile_coord} outside grid {grid.x}x{grid.y}x{grid.z}")
    ts, p = config.tile_size, config.pad
    span = config.padded_size
    ix = np.clip(np.arange(tx * ts - p, tx * ts - p + span), 0, volume.dims.x - 1)
    iy = np.clip(np.arange(ty * ts - p, ty * ts - p + span), 0, volume.dims.y - 1)
    iz = np.clip(np.arange(tz * ts - p, tz * ts - p + span), 0, volume.dims.z - 1)
    values = volume.data[np.ix_(iz, iy, ix)]
    return PaddedTile(
        tile_coord=(tx, ty, tz),
        mip_level=mip_level,
        values=values,
        occupancy=nonempty_mask(values, config),
    )


def is_tile_empty(tile: PaddedTile, config: SvtConfig) -> bool:
    """A tile is empty iff its logical region is; pad content never counts."""
    p, ts = config.pad, config.tile_size
    logical = tile.values[p : p + ts, p : p + ts, p : p + ts]
    return not nonempty_mask(logical, config).any()


def _ceil_cbrt(n: int) -> int:
    if n <= 0:
        return 0
    s = max(1, round(n ** (1.0 / 3.0)))
    while s**3 < n:
        s += 1
    while s > 1 and (s - 1) ** 3 >= n:
        s -= 1
    return s


def slot_grid_for(tile_count: int, config: SvtConfig) -> tuple[int, int, int]:
    """Near-cubic slot layout: smallest slot cube side, overflowing into z.

    x and y are capped at the atlas extent first; if z would then exceed the
    cap too, the tiles simply do not fit.
    """
    if tile_count == 0:
        return (0, 0, 0)
    cap = config.max_slots_per_axis
    side = min(_ceil_cbrt(tile_count), cap)
    sz = -(-tile_count // (side * side))
    if sz > cap:
        raise AtlasCapacityExceeded(
            f"{tile_count} tiles need more than the {cap}^3 slots available "
            f"at max_atlas_extent {config.max_atlas_extent}"
        )
    return (side, side, sz)


def build_svt(volume: DenseVolume, config: SvtConfig | None = None) -> SparseVolumeTexture:
    """Build the page tables, mip chain, and packed tile atlas for a volume.

    Deterministic: tiles take atlas slots in row-major (mip, tz, ty, tx)
    order. Voxels that compare empty are stored as empty_value exactly, so
    the atlas round-trips bit-identically through the upload stream.
    """
    config = config or SvtConfig()
    ts, p = config.tile_size, config.pad
    span = config.padded_size

    levels = mip_chain(volume, config)
    per_level_tiles = []
    per_level_resident = []
    grids = []
    for level in levels:
        grid = tile_grid_dims(level.dims, ts)
        grids.append(grid)
        aligned = _tile_aligned(level.data, grid, config)
        gz, gy, gx = grid.z, grid.y, grid.x
        occupied = nonempty_mask(aligned, config)
        resident = occupied.reshape(gz, ts, gy, ts, gx, ts).any(axis=(1, 3, 5))
        per_level_resident.append(resident)
        padded = np.pad(aligned, p, mode="edge")
        windows = sliding_window_view(padded, (span, span, span))[::ts, ::ts, ::ts]
        tiles = np.ascontiguousarray(windows[resident])
        tiles[~nonempty_mask(tiles, config)] = np.asarray(
            config.empty_value, dtype=tiles.dtype
        )
        per_level_tiles.append(tiles)

    tile_counts = tuple(int(t.shape[0]) for t in per_level_tiles)
    total = sum(tile_counts)
    nonempty0 = int(nonempty_mask(volume.data, config).sum(dtype=np.int64))

    try:
        sx, sy, sz = slot_grid_for(total, config)
    except AtlasCapacityExceeded as exc:
        from . import planner

        exc.report = planner.check_overflow(
            planner.PlanInputs(
                config=config,
                nonempty_voxels=nonempty0,
                bytes_per_voxel=volume.format.bytes_per_voxel,
                nonempty_tile_counts=tile_counts,
            )
        )
        raise

    atlas_dims = VolumeDims.from_zyx((sz * span, sy * span, sx * span)) if total else None
    atlas_data = np.full(
        (sz * span, sy * span, sx * span), config.empty_value, dtype=volume.format.dtype
    )
    slot_view = atlas_data.reshape(sz, span, sy, span, sx, span).transpose(0, 2, 4, 1, 3, 5)
    atlas = TileAtlas(dims=atlas_dims, data=atlas_data)

    mips = []
    padded_nonempty = 0
    slot_base = 0
    for grid, resident, tiles in zip(grids, per_level_resident, per_level_tiles):
        n = tiles.shape[0]
        entries = np.full(grid.as_zyx(), EMPTY_ENTRY, dtype=np.uint32)
        if n:
            slots = np.arange(slot_base, slot_base + n, dtype=np.int64)
            ax = slots % sx
            ay = (slots // sx) % sy
            az = slots // (sx * sy)
            entries.ravel()[np.flatnonzero(resident.ravel())] = (
                ax | (ay << _COORD_BITS) | (az << 2 * _COORD_BITS)
            ).astype(np.uint32)
            slot_view[az, ay, ax] = tiles
            padded_nonempty += int(nonempty_mask(tiles, config).sum(dtype=np.int64))
        mips.append(PageTable(grid_dims=grid, entries=entries))
        slot_base += n

    if total and tile_counts[0]:
        occupancy = nonempty0 / (tile_counts[0] * ts**3)
    else:
        occupancy = 0.0
    stats = BuildStats(
        nonempty_voxel_count=nonempty0,
        nonempty_tile_count=tile_counts,
        padded_nonempty_voxel_count=padded_nonempty,
        mean_tile_occupancy=occupancy,
    )
    return SparseVolumeTexture(
        config=config,
        format=volume.format,
        virtual_dims=volume.dims,
        mips=mips,
        atlas=atlas,
        stats=stats,
    )


def atlas_slot_blocks(svt: SparseVolumeTexture) -> np.ndarray:
    """All resident padded tiles as one (n, span, span, span) stack in slot order."""
    span = svt.config.padded_size
    n = svt.slot_count
    if n == 0:
        return np.empty((0, span, span, span), dtype=svt.format.dtype)
    data = svt.atlas.data
    sz, sy, sx = data.shape[0] // span, data.shape[1] // span, data.shape[2] // span
    view = data.reshape(sz, span, sy, span, sx, span).transpose(0, 2, 4, 1, 3, 5)
    slots = np.arange(n, dtype=np.int64)
    return view[slots // (sx * sy), (slots // sx) % sy, slots % sx]


# --- tile records (shared by the container file and the upload stream) ---

def encode_tile_record(block: np.ndarray, config: SvtConfig) -> tuple[bytes, np.ndarray]:
    """Occupancy-compress one padded tile: (mask bytes, packed non-empty values)."""
    mask = nonempty_mask(block, config).ravel()
    packed = np.packbits(mask, bitorder="little").tobytes()
    return packed, block.ravel()[mask]


def decode_tile_record(
    mask_bytes: bytes, values: np.ndarray, config: SvtConfig, dtype
) -> np.ndarray:
    span = config.padded_size
    bits = np.unpackbits(
        np.frombuffer(mask_bytes, dtype=np.uint8), count=span**3, bitorder="little"
    ).astype(bool)
    if int(bits.sum()) != len(values):
        raise CorruptStream(
            f"tile payload has {len(values)} values but mask popcount is {int(bits.sum())}"
        )
    block = np.full(span**3, config.empty_value, dtype=dtype)
    block[bits] = values
    return block.reshape(span, span, span)


# --- container file ---

SVTF_MAGIC = b"SVTF"
SVTF_VERSION = 1
_FORMAT_CODES = {VoxelFormat.U8: 0, VoxelFormat.F32: 1}
_HEADER = struct.Struct("<4sII IIIdd QQQ I QQQ QQd")


def save_svtf(svt: SparseVolumeTexture, path) -> None:
    """Write the container: header, per-mip page tables, compressed tiles.

    All integers little-endian; page-table entries are packed uint32 atlas
    coordinates with all-ones meaning empty; tile offsets are unsigned
    64-bit, relative to the start of the record section.
    """
    cfg = svt.config
    blocks = atlas_slot_blocks(svt)
    records = []
    offsets = np.zeros(len(blocks), dtype=np.uint64)
    pos = 0
    for i, block in enumerate(blocks):
        mask, values = encode_tile_record(block, cfg)
        payload = values.astype(svt.format.dtype.newbyteorder("<")).tobytes()
        records.append(mask + payload)
        offsets[i] = pos
        pos += len(mask) + len(payload)

    adims = svt.atlas.dims
    with open(path, "wb") as fh:
        fh.write(
            _HEADER.pack(
                SVTF_MAGIC,
                SVTF_VERSION,
                _FORMAT_CODES[svt.format],
                cfg.tile_size,
                cfg.pad,
                cfg.max_atlas_extent,
                cfg.empty_value,
                cfg.float_empty_threshold,
                svt.virtual_dims.x,
                svt.virtual_dims.y,
                svt.virtual_dims.z,
                len(svt.mips),
                adims.x if adims else 0,
                adims.y if adims else 0,
                adims.z if adims else 0,
                svt.stats.nonempty_voxel_count,
                svt.stats.padded_nonempty_voxel_count,
                svt.stats.mean_tile_occupancy,
            )
        )
        for table, count in zip(svt.mips, svt.stats.nonempty_tile_count):
            g = table.grid_dims
            fh.write(struct.pack("<QQQQ", g.x, g.y, g.z, count))
            fh.write(table.entries.astype("<u4").tobytes())
        fh.write(struct.pack("<Q", len(blocks)))
        fh.write(offsets.astype("<u8").tobytes())
        for rec in records:
            fh.write(rec)


def load_svtf(path) -> SparseVolumeTexture:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size or raw[:4] != SVTF_MAGIC:
        raise DataError(f"{path}: not an SVTF container")
    (
        _,
        version,
        fmt_code,
        tile_size,
        pad,
        max_extent,
        empty_value,
        threshold,
        vx,
        vy,
        vz,
        mip_count,
        ax,
        ay,
        az,
        nonempty,
        padded_nonempty,
        occupancy,
    ) = _HEADER.unpack_from(raw, 0)
    if version != SVTF_VERSION:
        raise DataError(f"{path}: unsupported SVTF version {version}")
    try:
        fmt = {v: k for k, v in _FORMAT_CODES.items()}[fmt_code]
    except KeyError:
        raise DataError(f"{path}: unknown voxel format code {fmt_code}")
    config = SvtConfig(
        tile_size=tile_size,
        pad=pad,
        max_atlas_extent=max_extent,
        empty_value=empty_value,
        float_empty_threshold=threshold,
    )
    span = config.padded_size
    pos = _HEADER.size
    mips, tile_counts = [], []
    for _ in range(mip_count):
        gx, gy, gz, count = struct.unpack_from("<QQQQ", raw, pos)
        pos += 32
        n = gx * gy * gz
        entries = np.frombuffer(raw, dtype="<u4", count=n, offset=pos).reshape(gz, gy, gx)
        entries = entries.astype(np.uint32)
        pos += 4 * n
        mips.append(PageTable(grid_dims=VolumeDims(gx, gy, gz), entries=entries))
        tile_counts.append(int(count))

    (tile_count,) = struct.unpack_from("<Q", raw, pos)
    pos += 8
    offsets = np.frombuffer(raw, dtype="<u8", count=tile_count, offset=pos)
    pos += 8 * tile_count
    if tile_count != sum(tile_counts):
        raise CorruptStream(f"{path}: tile count disagrees with per-mip counts")

    if tile_count:
        atlas_dims = VolumeDims(ax, ay, az)
        atlas_data = np.full(atlas_dims.as_zyx(), empty_value, dtype=fmt.dtype)
        sz, sy, sx = az // span, ay // span, ax // span
        view = atlas_data.reshape(sz, span, sy, span, sx, span).transpose(0, 2, 4, 1, 3, 5)
        mask_bytes = config.occupancy_mask_bytes
        dtype_le = fmt.dtype.newbyteorder("<")
        for i in range(tile_count):
            rec_start = pos + int(offsets[i])
            mask = raw[rec_start : rec_start + mask_bytes]
            if len(mask) < mask_bytes:
                raise CorruptStream(f"{path}: tile record {i} truncated")
            bits = np.unpackbits(
                np.frombuffer(mask, dtype=np.uint8), count=span**3, bitorder="little"
            )
            n_values = int(bits.sum())
            val_start = rec_start + mask_bytes
            if val_start + n_values * fmt.bytes_per_voxel > len(raw):
                raise CorruptStream(f"{path}: tile record {i} truncated")
            values = np.frombuffer(raw, dtype=dtype_le, count=n_values, offset=val_start)
            block = decode_tile_record(mask, values.astype(fmt.dtype), config, fmt.dtype)
            view[i // (sx * sy), (i // sx) % sy, i % sx] = block
    else:
        atlas_dims = None
        atlas_data = np.full((0, 0, 0), empty_value, dtype=fmt.dtype)

    stats = BuildStats(
        nonempty_voxel_count=nonempty,
        nonempty_tile_count=tuple(tile_counts),
        padded_nonempty_voxel_count=padded_nonempty,
        mean_tile_occupancy=occupancy,
    )
    return SparseVolumeTexture(
        config=config,
        format=fmt,
        virtual_dims=VolumeDims(vx, vy, vz),
        mips=mips,
        atlas=TileAtlas(dims=atlas_dims, data=atlas_data),
        stats=stats,
    )
