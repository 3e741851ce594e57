import numpy as np
import pytest

from telempose.channel import (
    ChannelFileError,
    ChannelRealization,
    NoiseSpec,
    Path,
    SynthParams,
    apply,
    export_cirs,
    flat_unit_channel,
    freq_response,
    freq_response_grid,
    import_cirs,
    synth_channel,
)
from telempose.grid import GridConfig, pack_bits


def _grid_with(symbols, cfg, qpsk):
    grids, _ = pack_bits(np.zeros(10, dtype=np.uint8), cfg, qpsk)
    base = grids[0]
    from telempose.grid import ResourceGrid

    return ResourceGrid(symbols=np.array(symbols, complex), mask=base.mask.copy(), cfg=cfg)


def test_flat_unit_channel_response(cfg_2p):
    ch = flat_unit_channel(n_rx=1)
    for i in (0, 7, 13):
        h = freq_response(ch, cfg_2p, i)
        assert h.shape == (1, 128)
        assert np.allclose(h, 1.0)


def test_single_path_delay_phase_ramp(cfg_2p):
    # delay of one sample period gives exp(-2j pi n / N) across subcarriers
    N = cfg_2p.n_subcarriers
    tau = 1.0 / (N * cfg_2p.subcarrier_spacing_hz)
    ch = ChannelRealization(
        paths=(Path(gain=[1.0 + 0j], delay_s=tau, doppler_hz=0.0),), n_rx=1
    )
    h = freq_response(ch, cfg_2p, 0)[0]
    assert np.allclose(np.abs(h), 1.0)
    centered = np.arange(N) - N // 2
    # spot values at n=0 and n=N/4
    assert h[N // 2] == pytest.approx(1.0 + 0j)
    assert h[N // 2 + N // 4] == pytest.approx(np.exp(-2j * np.pi * (N // 4) / N))
    assert np.allclose(h, np.exp(-2j * np.pi * centered / N))


def test_two_path_comb_nulls(cfg_2p):
    # equal paths spaced 1/(4 df) apart null every fourth subcarrier
    df = cfg_2p.subcarrier_spacing_hz
    ch = ChannelRealization(
        paths=(
            Path(gain=[1.0 + 0j], delay_s=0.0, doppler_hz=0.0),
            Path(gain=[1.0 + 0j], delay_s=1.0 / (4 * df), doppler_hz=0.0),
        ),
        n_rx=1,
    )
    h = freq_response(ch, cfg_2p, 0)[0]
    centered = np.arange(128) - 64
    nulls = (centered % 4 == 2) | (centered % 4 == -2)
    assert np.allclose(np.abs(h[nulls]), 0.0, atol=1e-12)
    assert np.allclose(np.abs(h[centered % 4 == 0]), 2.0, atol=1e-12)


def test_freq_response_matches_dft_oracle():
    # taps on the sample grid of an 8-subcarrier system vs. a direct DFT
    cfg8 = GridConfig(
        n_subcarriers=8, n_symbols=2, guard_left=0, guard_right=0,
        pilot_symbol_indices=(0,),
    )
    N, df = 8, cfg8.subcarrier_spacing_hz
    rng = np.random.default_rng(5)
    tap_positions = [0, 2, 5]
    tap_gains = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    ch = ChannelRealization(
        paths=tuple(
            Path(gain=[g], delay_s=m / (N * df), doppler_hz=0.0)
            for g, m in zip(tap_gains, tap_positions)
        ),
        n_rx=1,
    )
    h = freq_response(ch, cfg8, 0)[0]
    centered = np.arange(N) - N // 2
    dft = np.zeros(N, complex)
    for g, m in zip(tap_gains, tap_positions):
        dft += g * np.exp(-2j * np.pi * centered * m / N)
    assert np.max(np.abs(h - dft)) < 1e-10


def test_synth_determinism():
    params = SynthParams()
    a = synth_channel(np.random.default_rng(77), params)
    b = synth_channel(np.random.default_rng(77), params)
    assert len(a.paths) == len(b.paths)
    assert np.array_equal(a.gains, b.gains)
    assert np.array_equal(a.delays, b.delays)
    assert np.array_equal(a.dopplers, b.dopplers)


def test_synth_shapes_and_limits(rng):
    params = SynthParams(l_max=8, n_rx=4)
    for _ in range(50):
        ch = synth_channel(rng, params)
        assert 1 <= len(ch.paths) <= 8
        assert ch.gains.shape == (len(ch.paths), 4)
        assert np.all(ch.delays >= 0) and np.all(ch.delays <= params.delay_spread_s)


def test_synth_power_normalization(rng):
    # Monte-Carlo: mean total path power per antenna is one
    params = SynthParams(n_rx=2)
    totals = np.empty(10_000)
    for i in range(totals.size):
        ch = synth_channel(rng, params)
        totals[i] = np.mean(np.sum(np.abs(ch.gains) ** 2, axis=0))
    assert 0.95 <= totals.mean() <= 1.05


def test_noise_spec_variance():
    assert NoiseSpec(0.0, 2).noise_variance == pytest.approx(0.5)
    assert NoiseSpec(10.0, 2).noise_variance == pytest.approx(0.05)


def test_apply_noiseless_flat_is_identity(cfg_2p, qpsk, rng):
    bits = rng.integers(0, 2, size=2808)
    grids, _ = pack_bits(bits, cfg_2p, qpsk)
    y = apply(flat_unit_channel(1), grids[0], noise=None, rng=rng)
    assert np.array_equal(y[0], grids[0].symbols)


def test_apply_noise_variance(cfg_2p, qpsk, rng):
    zero = _grid_with(np.zeros((14, 128)), cfg_2p, qpsk)
    spec = NoiseSpec(ebn0_db=0.0, bits_per_symbol=2)  # variance 0.5
    draws = []
    for _ in range(60):  # 60 * 14 * 128 > 1e5 complex draws per antenna
        y = apply(flat_unit_channel(2), zero, spec, rng)
        draws.append(y)
    var = np.mean(np.abs(np.concatenate(draws)) ** 2)
    assert var == pytest.approx(0.5, rel=0.02)


def test_apply_linearity(cfg_2p, qpsk, rng):
    params = SynthParams()
    ch = synth_channel(rng, params)
    a = rng.standard_normal((14, 128)) + 1j * rng.standard_normal((14, 128))
    b = rng.standard_normal((14, 128)) + 1j * rng.standard_normal((14, 128))
    ga, gb = _grid_with(a, cfg_2p, qpsk), _grid_with(b, cfg_2p, qpsk)
    combo = _grid_with(2.0 * a - 0.5j * b, cfg_2p, qpsk)
    ya = apply(ch, ga, None, rng)
    yb = apply(ch, gb, None, rng)
    yc = apply(ch, combo, None, rng)
    assert np.allclose(yc, 2.0 * ya - 0.5j * yb, atol=1e-12)


def test_received_energy_tracks_noise(cfg_2p, qpsk, rng):
    # E|y|^2 on data elements = signal power (1) + noise variance
    spec = NoiseSpec(ebn0_db=3.0, bits_per_symbol=2)
    params = SynthParams(n_rx=2)
    bits = rng.integers(0, 2, size=2808)
    grids, _ = pack_bits(bits, cfg_2p, qpsk)
    data = grids[0].mask == 0
    acc, n = 0.0, 0
    for _ in range(2000):
        ch = synth_channel(rng, params)
        y = apply(ch, grids[0], spec, rng)
        vals = y[:, data]
        acc += np.sum(np.abs(vals) ** 2)
        n += vals.size
    assert n >= 1e5
    assert acc / n == pytest.approx(1.0 + spec.noise_variance, rel=0.03)


def test_time_invariance_iff_zero_doppler(cfg_2p, rng):
    params = SynthParams()
    ch = synth_channel(rng, params)
    static = ChannelRealization(
        paths=tuple(
            Path(gain=p.gain, delay_s=p.delay_s, doppler_hz=0.0) for p in ch.paths
        ),
        n_rx=ch.n_rx,
    )
    h_static = freq_response_grid(static, cfg_2p)
    assert np.max(np.abs(h_static - h_static[:, :1, :])) == 0.0
    h_moving = freq_response_grid(ch, cfg_2p)
    assert np.max(np.abs(h_moving - h_moving[:, :1, :])) > 0.0


def test_doppler_free_pilot_columns_match_data_columns(cfg_2p, rng):
    params = SynthParams(speed_range_mps=(0.0, 0.0))
    ch = synth_channel(rng, params)
    h = freq_response_grid(ch, cfg_2p)
    assert np.allclose(h[:, 2, :], h[:, 7, :])
    assert np.allclose(h[:, 12, :], h[:, 0, :])


def test_cir_round_trip(tmp_path, rng):
    params = SynthParams(n_rx=3)
    chans = [synth_channel(rng, params) for _ in range(7)]
    path = tmp_path / "set.cir"
    export_cirs(chans, path)
    back = import_cirs(path)
    assert len(back) == 7
    for a, b in zip(chans, back):
        assert b.meta == "imported"
        assert np.array_equal(a.gains, b.gains)
        assert np.array_equal(a.delays, b.delays)
        assert np.array_equal(a.dopplers, b.dopplers)


def test_cir_empty_file(tmp_path):
    path = tmp_path / "empty.cir"
    export_cirs([], path)
    assert import_cirs(path) == []


def test_cir_truncation_names_offset(tmp_path, rng):
    chans = [synth_channel(rng, SynthParams(n_rx=2)) for _ in range(3)]
    path = tmp_path / "set.cir"
    export_cirs(chans, path)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) - 11])
    with pytest.raises(ChannelFileError, match=rf"byte {len(blob) - 11}"):
        import_cirs(path)


def test_cir_bad_magic(tmp_path):
    path = tmp_path / "junk.cir"
    path.write_bytes(b"NOPE" + b"\x00" * 20)
    with pytest.raises(ChannelFileError, match="magic"):
        import_cirs(path)


def test_realization_validation():
    with pytest.raises(ValueError):
        ChannelRealization(paths=(), n_rx=1)
    with pytest.raises(ValueError):
        ChannelRealization(
            paths=(Path(gain=[1.0, 1.0], delay_s=0.0, doppler_hz=0.0),), n_rx=1
        )
    with pytest.raises(ValueError):
        Path(gain=[np.inf], delay_s=0.0, doppler_hz=0.0)
    with pytest.raises(ValueError):
        Path(gain=[1.0], delay_s=-1e-9, doppler_hz=0.0)
