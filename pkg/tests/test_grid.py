import numpy as np
import pytest

from telempose.grid import (
    DATA,
    GUARD,
    PILOT,
    FramingError,
    GridConfig,
    build_mask,
    dump_grid,
    grid_capacity_bits,
    load_grid,
    pack_bits,
    pilot_sequence,
    pilot_value_grid,
    unpack_llrs,
)


def test_mask_counts_2p(cfg_2p):
    mask = build_mask(cfg_2p)
    assert np.count_nonzero(mask == PILOT) == 2 * 117
    assert np.count_nonzero(mask == DATA) == 12 * 117
    assert np.count_nonzero(mask == GUARD) == 14 * 11


def test_mask_counts_1p(cfg_1p):
    mask = build_mask(cfg_1p)
    assert np.count_nonzero(mask == PILOT) == 117
    assert np.count_nonzero(mask == DATA) == 13 * 117


def test_mask_partition_covers_grid(cfg_2p):
    mask = build_mask(cfg_2p)
    assert mask.shape == (14, 128)
    assert np.all(np.isin(mask, [DATA, PILOT, GUARD]))


def test_guard_columns_are_guard_everywhere(cfg_2p):
    mask = build_mask(cfg_2p)
    assert np.all(mask[:, :5] == GUARD)
    assert np.all(mask[:, -6:] == GUARD)


def test_pilot_columns_are_full_columns(cfg_2p):
    mask = build_mask(cfg_2p)
    for i in (2, 12):
        assert np.all(mask[i, 5:-6] == PILOT)


def test_config_validation():
    with pytest.raises(ValueError):
        GridConfig(guard_left=64, guard_right=64)
    with pytest.raises(ValueError):
        GridConfig(pilot_symbol_indices=(14,))


def test_pilot_sequence_deterministic(cfg_2p):
    a = pilot_sequence(cfg_2p, seed=9)
    b = pilot_sequence(cfg_2p, seed=9)
    assert np.array_equal(a, b)
    assert a.shape == (234,)


def test_pilot_sequence_unit_modulus(cfg_2p):
    assert np.allclose(np.abs(pilot_sequence(cfg_2p, seed=3)), 1.0)


def test_pilot_sequence_seed_sensitivity(cfg_2p):
    a = pilot_sequence(cfg_2p, seed=1)
    b = pilot_sequence(cfg_2p, seed=2)
    assert np.any(a != b)


def test_capacity_arithmetic(cfg_2p, cfg_1p, qpsk):
    assert grid_capacity_bits(cfg_2p, qpsk) == 1404 * 2
    assert grid_capacity_bits(cfg_1p, qpsk) == 1521 * 2


def test_pack_exactly_one_grid(cfg_2p, qpsk, rng):
    bits = rng.integers(0, 2, size=2808)
    grids, record = pack_bits(bits, cfg_2p, qpsk)
    assert len(grids) == 1
    assert record.payload_bits == 2808
    assert record.n_grids == 1
    assert record.bits_per_grid == 2808


def test_pack_overflow_spills_to_second_grid(cfg_2p, qpsk, rng):
    bits = rng.integers(0, 2, size=2809)
    grids, record = pack_bits(bits, cfg_2p, qpsk)
    assert len(grids) == 2
    assert record.payload_bits == 2809
    # 2 * 2808 - 2809 = 2807 zero padding bits live in grid 2
    assert record.n_grids * record.bits_per_grid - record.payload_bits == 2807


def test_pack_empty_stream(cfg_2p, qpsk):
    grids, record = pack_bits(np.empty(0, dtype=np.uint8), cfg_2p, qpsk)
    assert grids == []
    assert record.n_grids == 0
    assert unpack_llrs([], record, cfg_2p).size == 0


def test_grid_contents(cfg_2p, qpsk, rng):
    bits = rng.integers(0, 2, size=100)
    grids, _ = pack_bits(bits, cfg_2p, qpsk)
    g = grids[0]
    assert np.all(g.symbols[g.mask == GUARD] == 0)
    assert np.allclose(np.abs(g.symbols[g.mask == PILOT]), 1.0)
    assert np.array_equal(
        g.symbols[g.mask == PILOT], pilot_sequence(cfg_2p, cfg_2p.pilot_seed)
    )


def test_grids_are_immutable(cfg_2p, qpsk):
    grids, _ = pack_bits(np.zeros(10, dtype=np.uint8), cfg_2p, qpsk)
    with pytest.raises(ValueError):
        grids[0].symbols[0, 0] = 1.0


def _identity_llrs(grids, qpsk):
    """Noiseless loopback: +inf-like LLR magnitude straight from the symbols."""
    out = []
    for g in grids:
        d2 = np.abs(g.symbols[..., None] - qpsk.points) ** 2
        llr = np.empty(g.symbols.shape + (2,))
        for l, mask0 in enumerate(qpsk._bit0_masks):
            llr[..., l] = d2[..., ~mask0].min(-1) - d2[..., mask0].min(-1)
        out.append(llr)
    return out


def test_pack_unpack_loopback(cfg_2p, qpsk, rng):
    for n in (1, 2807, 2808, 2809, 10_000):
        bits = rng.integers(0, 2, size=n)
        grids, record = pack_bits(bits, cfg_2p, qpsk)
        llrs = unpack_llrs(_identity_llrs(grids, qpsk), record, cfg_2p)
        assert llrs.shape == (n,)
        assert np.array_equal((llrs < 0).astype(np.uint8), bits)


def test_pack_unpack_loopback_random_lengths(cfg_1p, qpsk, rng):
    # dense sweep of payload lengths around the grid boundary plus random ones
    capacity = grid_capacity_bits(cfg_1p, qpsk)
    lengths = list(range(capacity - 3, capacity + 4)) + list(
        rng.integers(1, 4 * capacity, size=50)
    )
    for n in lengths:
        bits = rng.integers(0, 2, size=int(n))
        grids, record = pack_bits(bits, cfg_1p, qpsk)
        llrs = unpack_llrs(_identity_llrs(grids, qpsk), record, cfg_1p)
        assert np.array_equal((llrs < 0).astype(np.uint8), bits)


def test_unpack_grid_count_mismatch(cfg_2p, qpsk, rng):
    bits = rng.integers(0, 2, size=2808)
    grids, record = pack_bits(bits, cfg_2p, qpsk)
    with pytest.raises(FramingError):
        unpack_llrs([], record, cfg_2p)


def test_grid_dump_round_trip(tmp_path, cfg_2p, qpsk, rng):
    bits = rng.integers(0, 2, size=500)
    grids, _ = pack_bits(bits, cfg_2p, qpsk)
    path = tmp_path / "grid.bin"
    dump_grid(grids[0], path)
    back = load_grid(path, cfg_2p)
    assert np.array_equal(back.mask, grids[0].mask)
    assert np.allclose(back.symbols, grids[0].symbols, atol=1e-6)


def test_grid_dump_truncation_detected(tmp_path, cfg_2p, qpsk):
    grids, _ = pack_bits(np.zeros(10, dtype=np.uint8), cfg_2p, qpsk)
    path = tmp_path / "grid.bin"
    dump_grid(grids[0], path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-7])
    with pytest.raises(FramingError, match="truncated"):
        load_grid(path, cfg_2p)
