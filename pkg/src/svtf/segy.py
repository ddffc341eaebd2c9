"""Minimal SEG-Y rev-1 reader/writer: fixed-length traces, IBM or IEEE floats.

Only the subset needed to ingest full 3D cubes is supported: the 3200-byte
textual header is skipped as opaque bytes, all multi-byte fields are
big-endian, trace grid position comes from the standard inline/crossline
trace-header words. Anything else is rejected loudly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DataError,
    InconsistentTraceLength,
    TruncatedTrace,
    UnsupportedFormatCode,
)
from .volume import DenseVolume, VolumeDims, VoxelFormat

TEXTUAL_HEADER_BYTES = 3200
BINARY_HEADER_BYTES = 400
TRACE_HEADER_BYTES = 240

# Zero-based byte offsets of the fields we use (SEG-Y rev 1 standard).
OFF_SAMPLE_INTERVAL = 3216
OFF_SAMPLES_PER_TRACE = 3220
OFF_FORMAT_CODE = 3224
OFF_TRACE_SAMPLES = 114
OFF_INLINE = 188
OFF_CROSSLINE = 192

FORMAT_IBM_FLOAT = 1
FORMAT_IEEE_FLOAT = 5

DEFAULT_AXIS_MAP = ("crossline", "inline", "sample")


@dataclass
class SegYHeaderInfo:
    samples_per_trace: int
    sample_interval_us: int
    format_code: int
    trace_count: int
    inline_range: tuple[int, int]
    crossline_range: tuple[int, int]
    missing_cells: int = 0


def ibm_to_ieee(words) -> np.ndarray | float:
    """Decode IBM System/360 base-16 floats: (-1)^s * 16^(e-64) * frac/2^24.

    Every 32-bit pattern decodes; results are exact in double precision.
    """
    arr = np.asarray(words, dtype=np.uint32)
    sign = np.where(arr >> np.uint32(31) != 0, -1.0, 1.0)
    exponent = ((arr >> np.uint32(24)) & np.uint32(0x7F)).astype(np.int64)
    fraction = (arr & np.uint32(0xFFFFFF)).astype(np.float64)
    value = sign * np.ldexp(fraction, 4 * (exponent - 64) - 24)
    return value if value.ndim else float(value)


def ieee_to_ibm(values) -> np.ndarray:
    """Encode doubles as normalized IBM floats (canonical form, zero -> 0)."""
    v = np.asarray(values, dtype=np.float64)
    sign = np.where(np.signbit(v), np.uint32(1 << 31), np.uint32(0))
    mag = np.abs(v)
    f2, e2 = np.frexp(mag)
    k = -(-e2 // 4)  # ceil(e2/4), so frac = mag/16^k lands in [1/16, 1)
    frac_bits = np.rint(np.ldexp(f2, e2 - 4 * k + 24)).astype(np.int64)
    carry = frac_bits >= 1 << 24
    k = k + carry
    frac_bits = np.where(carry, np.int64(1 << 20), frac_bits)
    exponent = k + 64
    if np.any((exponent > 127) & (mag != 0)):
        raise DataError("value magnitude exceeds the IBM float exponent range")
    underflow = (exponent < 0) | (mag == 0) | ~np.isfinite(mag)
    word = sign | (exponent.astype(np.uint32) << np.uint32(24)) | frac_bits.astype(np.uint32)
    return np.where(underflow, np.uint32(0), word).astype(np.uint32)


def _u16(buf: bytes, off: int) -> int:
    return struct.unpack_from(">H", buf, off)[0]


def _i32(buf: bytes, off: int) -> int:
    return struct.unpack_from(">i", buf, off)[0]


def _axis_transpose(axis_map) -> tuple[int, int, int]:
    if sorted(axis_map) != sorted(DEFAULT_AXIS_MAP):
        raise DataError(
            f"axis map must be a permutation of {DEFAULT_AXIS_MAP}, got {axis_map}"
        )
    # Canonical assembled cube is indexed [inline, crossline, sample];
    # produce the permutation giving [z, y, x] for the requested mapping.
    canonical = {"inline": 0, "crossline": 1, "sample": 2}
    x_src, y_src, z_src = axis_map
    return (canonical[z_src], canonical[y_src], canonical[x_src])


def parse_segy(path, axis_map=DEFAULT_AXIS_MAP) -> tuple[SegYHeaderInfo, DenseVolume]:
    """Parse a SEG-Y file into a dense cube on the inline/crossline grid.

    Grid cells with no trace are filled with 0 and counted in
    missing_cells. Duplicate grid positions are rejected.
    """
    raw = Path(path).read_bytes()
    if len(raw) < TEXTUAL_HEADER_BYTES + BINARY_HEADER_BYTES:
        raise DataError(f"{path}: shorter than the 3600-byte SEG-Y header block")

    samples = _u16(raw, OFF_SAMPLES_PER_TRACE)
    interval = _u16(raw, OFF_SAMPLE_INTERVAL)
    format_code = _u16(raw, OFF_FORMAT_CODE)
    if format_code not in (FORMAT_IBM_FLOAT, FORMAT_IEEE_FLOAT):
        raise UnsupportedFormatCode(
            f"{path}: format code {format_code} not supported (only 1 and 5)"
        )
    if samples == 0:
        raise DataError(f"{path}: binary header reports 0 samples per trace")

    trace_bytes = samples * 4
    pos = TEXTUAL_HEADER_BYTES + BINARY_HEADER_BYTES
    inlines, crosslines, payloads = [], [], []
    while pos < len(raw):
        header = raw[pos : pos + TRACE_HEADER_BYTES]
        if len(header) < TRACE_HEADER_BYTES:
            raise TruncatedTrace(f"{path}: trace header truncated at byte {pos}")
        ns_this = _u16(header, OFF_TRACE_SAMPLES)
        if ns_this not in (0, samples):
            raise InconsistentTraceLength(
                f"{path}: trace at byte {pos} has {ns_this} samples, expected {samples}"
            )
        data = raw[pos + TRACE_HEADER_BYTES : pos + TRACE_HEADER_BYTES + trace_bytes]
        if len(data) < trace_bytes:
            raise TruncatedTrace(f"{path}: trace data truncated at byte {pos}")
        inlines.append(_i32(header, OFF_INLINE))
        crosslines.append(_i32(header, OFF_CROSSLINE))
        payloads.append(data)
        pos += TRACE_HEADER_BYTES + trace_bytes

    if not payloads:
        raise DataError(f"{path}: no traces found")

    il = np.asarray(inlines)
    xl = np.asarray(crosslines)
    il_range = (int(il.min()), int(il.max()))
    xl_range = (int(xl.min()), int(xl.max()))
    n_il = il_range[1] - il_range[0] + 1
    n_xl = xl_range[1] - xl_range[0] + 1

    words = np.frombuffer(b"".join(payloads), dtype=">u4").reshape(len(payloads), samples)
    if format_code == FORMAT_IEEE_FLOAT:
        values = words.view(">f4").astype(np.float32)
    else:
        values = ibm_to_ieee(words).astype(np.float32)

    cube = np.zeros((n_il, n_xl, samples), dtype=np.float32)
    filled = np.zeros((n_il, n_xl), dtype=bool)
    ii = il - il_range[0]
    xi = xl - xl_range[0]
    if len(np.unique(ii * n_xl + xi)) != len(payloads):
        raise DataError(f"{path}: duplicate (inline, crossline) trace positions")
    cube[ii, xi] = values
    filled[ii, xi] = True

    info = SegYHeaderInfo(
        samples_per_trace=samples,
        sample_interval_us=interval,
        format_code=format_code,
        trace_count=len(payloads),
        inline_range=il_range,
        crossline_range=xl_range,
        missing_cells=int((~filled).sum()),
    )
    data_zyx = np.ascontiguousarray(cube.transpose(_axis_transpose(axis_map)))
    return info, DenseVolume.from_array(data_zyx, VoxelFormat.F32)


def write_segy(
    path,
    volume: DenseVolume,
    format_code: int = FORMAT_IEEE_FLOAT,
    sample_interval_us: int = 4000,
    axis_map=DEFAULT_AXIS_MAP,
) -> None:
    """Write a volume as a synthetic rev-1 SEG-Y cube (one trace per cell)."""
    if format_code not in (FORMAT_IBM_FLOAT, FORMAT_IEEE_FLOAT):
        raise UnsupportedFormatCode(f"cannot write format code {format_code}")
    perm = _axis_transpose(axis_map)
    inverse = tuple(perm.index(i) for i in range(3))
    cube = volume.data.astype(np.float32).transpose(inverse)  # [inline, crossline, sample]
    n_il, n_xl, samples = cube.shape
    if samples > 0xFFFF:
        raise DataError(f"{samples} samples per trace exceeds the 16-bit header field")

    binary = bytearray(BINARY_HEADER_BYTES)
    struct.pack_into(">H", binary, OFF_SAMPLE_INTERVAL - TEXTUAL_HEADER_BYTES, sample_interval_us)
    struct.pack_into(">H", binary, OFF_SAMPLES_PER_TRACE - TEXTUAL_HEADER_BYTES, samples)
    struct.pack_into(">H", binary, OFF_FORMAT_CODE - TEXTUAL_HEADER_BYTES, format_code)
    struct.pack_into(">H", binary, 3500 - TEXTUAL_HEADER_BYTES, 0x0100)  # rev 1
    struct.pack_into(">H", binary, 3502 - TEXTUAL_HEADER_BYTES, 1)  # fixed-length traces

    with open(path, "wb") as fh:
        fh.write(b"\x00" * TEXTUAL_HEADER_BYTES)
        fh.write(binary)
        for i in range(n_il):
            for j in range(n_xl):
                header = bytearray(TRACE_HEADER_BYTES)
                struct.pack_into(">H", header, OFF_TRACE_SAMPLES, samples)
                struct.pack_into(">i", header, OFF_INLINE, i + 1)
                struct.pack_into(">i", header, OFF_CROSSLINE, j + 1)
                fh.write(header)
                if format_code == FORMAT_IEEE_FLOAT:
                    fh.write(cube[i, j].astype(">f4").tobytes())
                else:
                    fh.write(ieee_to_ibm(cube[i, j]).astype(">u4").tobytes())
