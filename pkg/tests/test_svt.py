import numpy as np
import pytest
from conftest import (
    brute_force_mip,
    brute_force_residency,
    make_volume,
    random_volume,
)

from svtf import (
    AtlasCapacityExceeded,
    OutOfGrid,
    SvtConfig,
    VolumeDims,
    VoxelFormat,
    build_mip_level,
    build_svt,
    extract_padded_tile,
    is_tile_empty,
    load_svtf,
    save_svtf,
    tile_grid_dims,
)
from svtf.svt import EMPTY_ENTRY, mip_chain, pack_entry, unpack_entry


@pytest.mark.parametrize(
    "dims,expected",
    [
        ((16, 16, 16), (1, 1, 1)),
        ((17, 16, 1), (2, 1, 1)),
        ((4211, 935, 1501), (264, 59, 94)),  # survey-scale dims
    ],
)
def test_tile_grid_dims(dims, expected):
    assert tile_grid_dims(VolumeDims(*dims), 16) == VolumeDims(*expected)


def test_extract_constant_volume():
    vol = make_volume(np.full((20, 20, 20), 7, np.uint8))
    tile = extract_padded_tile(vol, (0, 0, 0), SvtConfig())
    assert tile.values.shape == (18, 18, 18)
    assert (tile.values == 7).all()
    assert tile.occupancy.all()
    assert tile.popcount == 18**3


def test_extract_all_zero():
    vol = make_volume(np.zeros((16, 16, 16), np.uint8))
    tile = extract_padded_tile(vol, (0, 0, 0), SvtConfig())
    assert not tile.occupancy.any()


def test_extract_pad_sees_neighbor():
    data = np.zeros((32, 32, 32), np.uint8)
    data[8, 8, 16] = 9  # +x neighbor tile, away from the volume border
    vol = make_volume(data)
    tile = extract_padded_tile(vol, (0, 0, 0), SvtConfig())
    # Pad layer x=17 (local) mirrors source x=16; exactly one pad bit set.
    assert tile.values[9, 9, 17] == 9
    assert tile.popcount == 1
    assert is_tile_empty(tile, SvtConfig())  # pad never creates residency


def test_extract_pad_clamp_duplicates_at_corner():
    # A non-empty voxel on the volume's corner edge is mirrored into every
    # out-of-volume pad position that clamps onto it (y=-1 and z=-1 here).
    data = np.zeros((32, 32, 32), np.uint8)
    data[0, 0, 16] = 9
    tile = extract_padded_tile(make_volume(data), (0, 0, 0), SvtConfig())
    assert tile.values[1, 1, 17] == 9
    assert tile.popcount == 4
    assert is_tile_empty(tile, SvtConfig())


def test_extract_clamps_at_volume_border():
    data = np.arange(8, dtype=np.uint8).reshape(2, 2, 2)
    vol = make_volume(data)
    cfg = SvtConfig(tile_size=2, pad=1, max_atlas_extent=64)
    tile = extract_padded_tile(vol, (0, 0, 0), cfg)
    assert tile.values.shape == (4, 4, 4)
    assert tile.values[0, 0, 0] == data[0, 0, 0]  # clamped corner
    assert tile.values[3, 3, 3] == data[1, 1, 1]
    np.testing.assert_array_equal(tile.values[1:3, 1:3, 1:3], data)


def test_extract_out_of_grid():
    vol = make_volume(np.zeros((16, 16, 16), np.uint8))
    with pytest.raises(OutOfGrid):
        extract_padded_tile(vol, (1, 0, 0), SvtConfig())


def test_is_tile_empty_cases():
    cfg = SvtConfig()
    vol = make_volume(np.zeros((16, 16, 16), np.uint8))
    assert is_tile_empty(extract_padded_tile(vol, (0, 0, 0), cfg), cfg)
    data = np.zeros((16, 16, 16), np.uint8)
    data[3, 4, 5] = 1
    assert not is_tile_empty(extract_padded_tile(make_volume(data), (0, 0, 0), cfg), cfg)


@pytest.mark.parametrize(
    "shape,values,expected",
    [
        ((2, 2, 2), [3] * 8, [[[3]]]),
        ((2, 2, 2), [0, 0, 0, 0, 0, 0, 0, 8], [[[1]]]),
        ((1, 1, 3), [2, 4, 6], [[[3, 6]]]),  # pairs (2,4) and lone (6)
    ],
)
def test_build_mip_level_examples(shape, values, expected):
    vol = make_volume(np.asarray(values, np.uint8).reshape(shape))
    out = build_mip_level(vol)
    np.testing.assert_array_equal(out.data, np.asarray(expected, np.uint8))


def test_build_mip_level_against_brute_force(rng):
    for _ in range(10):
        vol = random_volume(rng, max_dim=9, fmt=VoxelFormat.F32, fill=0.8)
        got = build_mip_level(vol)
        want = brute_force_mip(vol.data).astype(np.float32)
        np.testing.assert_array_equal(got.data, want)


def test_mip_mean_preserved_exactly():
    # Power-of-two cube of integer-valued float32: every level's mean is an
    # exact dyadic rational, so extended-precision means must match exactly.
    rng = np.random.default_rng(7)
    data = rng.integers(0, 256, size=(64, 64, 64)).astype(np.float32)
    vol = make_volume(data, VoxelFormat.F32)
    levels = mip_chain(vol, SvtConfig())
    base = levels[0].data.astype(np.float64).mean()
    for level in levels[1:]:
        assert level.data.astype(np.float64).mean() == base


def test_mip_chain_stops_at_tile_size():
    vol = make_volume(np.ones((32, 32, 32), np.uint8))
    levels = mip_chain(vol, SvtConfig())
    assert [lv.dims.x for lv in levels] == [32, 16]
    vol16 = make_volume(np.ones((16, 16, 16), np.uint8))
    assert len(mip_chain(vol16, SvtConfig())) == 1


def test_build_all_zero():
    svt = build_svt(make_volume(np.zeros((16, 16, 16), np.uint8)))
    assert svt.stats.nonempty_tile_count == (0,)
    assert (svt.mips[0].entries == EMPTY_ENTRY).all()
    assert svt.atlas.dims is None
    assert svt.atlas.data.size == 0


def test_build_single_voxel_32():
    data = np.zeros((32, 32, 32), np.uint8)
    data[0, 0, 0] = 8
    svt = build_svt(make_volume(data))
    assert svt.mip_count == 2
    assert svt.stats.nonempty_tile_count == (1, 1)
    assert svt.stats.nonempty_voxel_count == 1
    # Mip 1 voxel (0,0,0) holds mean 8/8 = 1.
    entry = svt.mips[1].entries[0, 0, 0]
    assert entry != EMPTY_ENTRY


def test_build_capacity_exceeded():
    # 3 tiles along x but room for only a 2^3 slot cube: extent 8, tiles 2^3
    # padded to 4^3 -> cap 2 slots per axis.
    cfg = SvtConfig(tile_size=2, pad=1, max_atlas_extent=8)
    data = np.ones((2, 2, 18), np.uint8)  # 9 tiles > 8 slots
    with pytest.raises(AtlasCapacityExceeded) as err:
        build_svt(make_volume(data), cfg)
    assert err.value.report is not None
    assert err.value.report.atlas_extent_estimate > cfg.max_atlas_extent


def test_residency_matches_brute_force(rng):
    for _ in range(20):
        vol = random_volume(rng, max_dim=48, fill=rng.uniform(0.001, 0.2))
        svt = build_svt(vol)
        want = brute_force_residency(vol, 16)
        got = svt.mips[0].entries != EMPTY_ENTRY
        np.testing.assert_array_equal(got, want)


def test_slots_distinct_across_mips(rng):
    vol = random_volume(rng, max_dim=64, fill=0.05)
    svt = build_svt(vol)
    seen = set()
    for table in svt.mips:
        packed = table.entries[table.entries != EMPTY_ENTRY]
        for e in packed:
            assert int(e) not in seen
            seen.add(int(e))
    assert len(seen) == svt.slot_count


def test_occupancy_accounting(rng):
    vol = random_volume(rng, max_dim=40, fill=0.3)
    cfg = SvtConfig()
    svt = build_svt(vol, cfg)
    assert svt.stats.nonempty_voxel_count == int((vol.data != 0).sum())
    # Independent popcount: every resident tile of every mip level,
    # extracted straight from the mip volumes.
    total = 0
    for level, volume_level in zip(svt.mips, mip_chain(vol, cfg)):
        resident = np.argwhere(level.entries != EMPTY_ENTRY)
        for tz, ty, tx in resident:
            tile = extract_padded_tile(volume_level, (tx, ty, tz), cfg)
            total += tile.popcount
    assert svt.stats.padded_nonempty_voxel_count == total


def test_mean_tile_occupancy_definition():
    data = np.zeros((16, 16, 16), np.uint8)
    data[:8] = 5  # half the only tile
    svt = build_svt(make_volume(data))
    assert svt.stats.mean_tile_occupancy == pytest.approx(0.5)


def test_build_deterministic(rng):
    vol = random_volume(rng, max_dim=32, fill=0.1)
    a = build_svt(vol)
    b = build_svt(vol)
    np.testing.assert_array_equal(a.atlas.data, b.atlas.data)
    for ta, tb in zip(a.mips, b.mips):
        np.testing.assert_array_equal(ta.entries, tb.entries)


def test_atlas_stores_source_values():
    data = np.zeros((20, 20, 20), np.uint8)
    data[2, 3, 4] = 77
    svt = build_svt(make_volume(data))
    entry = svt.mips[0].entries[0, 0, 0]
    ax, ay, az = (int(v) for v in unpack_entry(entry))
    span, pad = 18, 1
    assert svt.atlas.data[az * span + pad + 2, ay * span + pad + 3, ax * span + pad + 4] == 77


def test_container_roundtrip(tmp_path, rng):
    for fmt in (VoxelFormat.U8, VoxelFormat.F32):
        vol = random_volume(rng, max_dim=40, fmt=fmt, fill=0.15)
        svt = build_svt(vol)
        path = tmp_path / f"vol_{fmt.value}.svtf"
        save_svtf(svt, path)
        loaded = load_svtf(path)
        assert loaded.format is fmt
        assert loaded.virtual_dims == svt.virtual_dims
        assert loaded.mip_count == svt.mip_count
        assert loaded.stats.nonempty_voxel_count == svt.stats.nonempty_voxel_count
        np.testing.assert_array_equal(loaded.atlas.data, svt.atlas.data)
        for ta, tb in zip(loaded.mips, svt.mips):
            np.testing.assert_array_equal(ta.entries, tb.entries)


def test_entry_packing_roundtrip():
    for coords in ((0, 0, 0), (113, 112, 7), (1023, 1023, 1023)):
        got = tuple(int(v) for v in unpack_entry(pack_entry(*coords)))
        assert got == coords
    # Valid coordinates never set bits 30-31, so no entry collides with
    # the all-ones empty marker.
    assert int(pack_entry(1023, 1023, 1023)) < int(EMPTY_ENTRY)
    assert int(EMPTY_ENTRY) == 0xFFFFFFFF


def test_container_roundtrip_empty_svt(tmp_path):
    svt = build_svt(make_volume(np.zeros((16, 16, 16), np.uint8)))
    path = tmp_path / "empty.svtf"
    save_svtf(svt, path)
    loaded = load_svtf(path)
    assert loaded.atlas.dims is None
    assert loaded.atlas.data.size == 0
    assert loaded.stats.nonempty_tile_count == (0,)
    assert (loaded.mips[0].entries == EMPTY_ENTRY).all()


def test_float_threshold_drops_tiles():
    data = np.full((16, 16, 16), 1e-6, np.float32)
    cfg = SvtConfig(float_empty_threshold=1e-3)
    svt = build_svt(make_volume(data, VoxelFormat.F32), cfg)
    assert svt.stats.nonempty_tile_count == (0,)
