"""Occupancy-compressed upload stream: the CPU analog of the GPU
upload/decompress pass.

Each resident tile becomes one record: its occupancy bitmask followed by
the non-empty values in padded raster order. The value stream is cut into
windows of at most 2^27 elements (the per-dispatch upload limit); tiles may
span a window boundary, the apply pass carries the partial tile over. All
offsets are unsigned 64-bit; a flag records streams whose byte size would
overflow a uint32, which is the hard failure the stock engine guards with.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CorruptStream, DataError
from .svt import (
    EMPTY_ENTRY,
    SparseVolumeTexture,
    SvtConfig,
    TileAtlas,
    atlas_slot_blocks,
    decode_tile_record,
    encode_tile_record,
    slot_grid_for,
)
from .volume import VolumeDims, VoxelFormat

log = logging.getLogger(__name__)

WINDOW_ELEMENTS = 2**27
UINT32_LIMIT = 2**32


@dataclass
class UploadBuffer:
    """Serialized tile records plus the window table used to stream them."""

    config: SvtConfig
    format: VoxelFormat
    tiles: list[tuple[bytes, np.ndarray]]  # (occupancy mask, packed values)
    tile_data_offsets: np.ndarray  # uint64 start offset of each record
    windows: list[tuple[int, int]]  # (start_element, element_count)
    total_bytes: int
    exceeds_uint32: bool

    @property
    def total_elements(self) -> int:
        return int(sum(len(v) for _, v in self.tiles))


def window_table(total_elements: int, window_elements: int = WINDOW_ELEMENTS):
    """Greedy partition of the element stream into windows of bounded size."""
    if not 1 <= window_elements <= WINDOW_ELEMENTS:
        raise ValueError(f"window size must be in [1, 2^27], got {window_elements}")
    windows = []
    start = 0
    while start < total_elements:
        count = min(window_elements, total_elements - start)
        windows.append((start, count))
        start += count
    return windows


def serialize_upload(
    svt: SparseVolumeTexture, window_elements: int = WINDOW_ELEMENTS
) -> UploadBuffer:
    """Emit tiles in atlas-slot order as occupancy-compressed records."""
    cfg = svt.config
    bpv = svt.format.bytes_per_voxel
    mask_bytes = cfg.occupancy_mask_bytes
    tiles = []
    offsets = np.zeros(svt.slot_count, dtype=np.uint64)
    pos = 0
    total_elements = 0
    for i, block in enumerate(atlas_slot_blocks(svt)):
        mask, values = encode_tile_record(block, cfg)
        tiles.append((mask, values))
        offsets[i] = pos
        pos += mask_bytes + len(values) * bpv
        total_elements += len(values)

    exceeds = pos >= UINT32_LIMIT
    if exceeds:
        log.warning("upload stream is %d bytes, beyond the uint32 offset range", pos)
    return UploadBuffer(
        config=cfg,
        format=svt.format,
        tiles=tiles,
        tile_data_offsets=offsets,
        windows=window_table(total_elements, window_elements),
        total_bytes=pos,
        exceeds_uint32=exceeds,
    )


def _expected_tile_count(page_tables) -> int:
    return int(sum(int((t.entries != EMPTY_ENTRY).sum()) for t in page_tables))


def apply_upload(buffer: UploadBuffer, config: SvtConfig, page_tables) -> TileAtlas:
    """Expand an upload stream back into a dense tile atlas.

    Values arrive strictly window by window; a tile whose payload straddles
    a window boundary is completed when the next window is processed.
    Offset, popcount, and window-table inconsistencies raise CorruptStream.
    """
    span = config.padded_size
    mask_bytes = config.occupancy_mask_bytes
    bpv = buffer.format.bytes_per_voxel
    n_tiles = len(buffer.tiles)
    if n_tiles != _expected_tile_count(page_tables):
        raise CorruptStream(
            f"stream has {n_tiles} tiles, page tables reference "
            f"{_expected_tile_count(page_tables)}"
        )

    total_elements = buffer.total_elements
    covered = 0
    for start, count in buffer.windows:
        if start != covered or count < 1 or count > WINDOW_ELEMENTS:
            raise CorruptStream("window table does not partition the element stream")
        covered += count
    if covered != total_elements:
        raise CorruptStream(
            f"windows cover {covered} elements, stream has {total_elements}"
        )

    pos = 0
    for i, (mask, values) in enumerate(buffer.tiles):
        if len(mask) != mask_bytes:
            raise CorruptStream(f"tile {i}: mask is {len(mask)} bytes, need {mask_bytes}")
        if int(buffer.tile_data_offsets[i]) != pos:
            raise CorruptStream(
                f"tile {i}: offset {int(buffer.tile_data_offsets[i])} != expected {pos}"
            )
        pos += mask_bytes + len(values) * bpv
    if pos != buffer.total_bytes:
        raise CorruptStream(f"total_bytes {buffer.total_bytes} != record sum {pos}")

    sx, sy, sz = slot_grid_for(n_tiles, config)
    if n_tiles == 0:
        return TileAtlas(
            dims=None, data=np.full((0, 0, 0), config.empty_value, dtype=buffer.format.dtype)
        )
    atlas_data = np.full(
        (sz * span, sy * span, sx * span), config.empty_value, dtype=buffer.format.dtype
    )
    view = atlas_data.reshape(sz, span, sy, span, sx, span).transpose(0, 2, 4, 1, 3, 5)

    # Window-by-window element cursor; tiles complete as their last element
    # arrives, possibly one window later than they started.
    tile_starts = np.cumsum([0] + [len(v) for _, v in buffer.tiles])
    window_ends = [start + count for start, count in buffer.windows]
    done_elements = 0
    tile_idx = 0
    for end in window_ends:
        done_elements = end
        while tile_idx < n_tiles and tile_starts[tile_idx + 1] <= done_elements:
            mask, values = buffer.tiles[tile_idx]
            block = decode_tile_record(mask, values, config, buffer.format.dtype)
            view[
                tile_idx // (sx * sy), (tile_idx // sx) % sy, tile_idx % sx
            ] = block
            tile_idx += 1
    if tile_idx != n_tiles:
        raise CorruptStream(f"stream ended with {n_tiles - tile_idx} tiles incomplete")

    return TileAtlas(
        dims=VolumeDims.from_zyx(atlas_data.shape), data=atlas_data
    )


# --- stream dump file ---

SVTU_MAGIC = b"SVTU"
SVTU_VERSION = 1
_FORMAT_CODES = {VoxelFormat.U8: 0, VoxelFormat.F32: 1}
_HEADER = struct.Struct("<4sII IIdd QQI Q")


def save_upload(buffer: UploadBuffer, path) -> None:
    cfg = buffer.config
    with open(path, "wb") as fh:
        fh.write(
            _HEADER.pack(
                SVTU_MAGIC,
                SVTU_VERSION,
                _FORMAT_CODES[buffer.format],
                cfg.tile_size,
                cfg.pad,
                cfg.empty_value,
                cfg.float_empty_threshold,
                len(buffer.tiles),
                buffer.total_bytes,
                1 if buffer.exceeds_uint32 else 0,
                len(buffer.windows),
            )
        )
        for start, count in buffer.windows:
            fh.write(struct.pack("<QQ", start, count))
        fh.write(buffer.tile_data_offsets.astype("<u8").tobytes())
        dtype_le = buffer.format.dtype.newbyteorder("<")
        for mask, values in buffer.tiles:
            fh.write(mask)
            fh.write(values.astype(dtype_le).tobytes())


def load_upload(path, max_atlas_extent: int = 2048) -> UploadBuffer:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size or raw[:4] != SVTU_MAGIC:
        raise DataError(f"{path}: not an SVTU upload stream")
    (
        _,
        version,
        fmt_code,
        tile_size,
        pad,
        empty_value,
        threshold,
        tile_count,
        total_bytes,
        overflow,
        window_count,
    ) = _HEADER.unpack_from(raw, 0)
    if version != SVTU_VERSION:
        raise DataError(f"{path}: unsupported SVTU version {version}")
    try:
        fmt = {v: k for k, v in _FORMAT_CODES.items()}[fmt_code]
    except KeyError:
        raise DataError(f"{path}: unknown voxel format code {fmt_code}")
    config = SvtConfig(
        tile_size=tile_size,
        pad=pad,
        max_atlas_extent=max_atlas_extent,
        empty_value=empty_value,
        float_empty_threshold=threshold,
    )
    pos = _HEADER.size
    windows = []
    for _ in range(window_count):
        start, count = struct.unpack_from("<QQ", raw, pos)
        windows.append((start, count))
        pos += 16
    offsets = np.frombuffer(raw, dtype="<u8", count=tile_count, offset=pos).astype(np.uint64)
    pos += 8 * tile_count

    mask_bytes = config.occupancy_mask_bytes
    span3 = config.padded_size**3
    dtype_le = fmt.dtype.newbyteorder("<")
    tiles = []
    for i in range(tile_count):
        rec = pos + int(offsets[i])
        mask = raw[rec : rec + mask_bytes]
        if len(mask) < mask_bytes:
            raise CorruptStream(f"{path}: tile {i} mask truncated")
        bits = np.unpackbits(
            np.frombuffer(mask, dtype=np.uint8), count=span3, bitorder="little"
        )
        n_values = int(bits.sum())
        end = rec + mask_bytes + n_values * fmt.bytes_per_voxel
        if end > len(raw):
            raise CorruptStream(f"{path}: tile {i} payload truncated")
        values = np.frombuffer(raw, dtype=dtype_le, count=n_values, offset=rec + mask_bytes)
        tiles.append((mask, values.astype(fmt.dtype)))

    return UploadBuffer(
        config=config,
        format=fmt,
        tiles=tiles,
        tile_data_offsets=offsets,
        windows=windows,
        total_bytes=total_bytes,
        exceeds_uint32=bool(overflow),
    )
