"""Multipath MIMO channel synthesis and application.

A channel realization is a set of propagation paths, each carrying a
per-antenna complex gain, a delay, and a Doppler shift. The grid-facing
operations evaluate the frequency response per OFDM symbol (block fading
within a symbol, Doppler advancing phase between symbols) and add
circular complex Gaussian noise at a configured Eb/N0.

Carrier-phase terms are folded into the stored gains at synthesis or
import time, so the per-path gain is the only spatial/attenuation state.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .grid import GridConfig, ResourceGrid

SPEED_OF_LIGHT = 299_792_458.0
MAX_PATHS = 75

_CIR_MAGIC = b"TPCR"
_CIR_VERSION = 1


class ChannelFileError(ValueError):
    """Malformed channel-realization file."""


@dataclass(frozen=True)
class Path:
    gain: np.ndarray  # complex, one entry per RX antenna
    delay_s: float
    doppler_hz: float

    def __post_init__(self):
        object.__setattr__(self, "gain", np.atleast_1d(np.asarray(self.gain, complex)))
        if not np.all(np.isfinite(self.gain)):
            raise ValueError("path gain must be finite")
        if self.delay_s < 0:
            raise ValueError("path delay must be non-negative")


@dataclass(frozen=True)
class ChannelRealization:
    paths: tuple
    n_rx: int
    meta: str = "synthetic"

    def __post_init__(self):
        object.__setattr__(self, "paths", tuple(self.paths))
        if not self.paths:
            raise ValueError("a channel realization needs at least one path")
        if len(self.paths) > MAX_PATHS:
            raise ValueError(f"path count {len(self.paths)} exceeds {MAX_PATHS}")
        for p in self.paths:
            if p.gain.shape != (self.n_rx,):
                raise ValueError(
                    f"path gain has {p.gain.shape[0]} antennas, expected {self.n_rx}"
                )

    @property
    def gains(self) -> np.ndarray:
        """Stacked per-path gains, shape [L, n_rx]."""
        return np.stack([p.gain for p in self.paths])

    @property
    def delays(self) -> np.ndarray:
        return np.array([p.delay_s for p in self.paths])

    @property
    def dopplers(self) -> np.ndarray:
        return np.array([p.doppler_hz for p in self.paths])


@dataclass(frozen=True)
class NoiseSpec:
    """Noise level derived from Eb/N0 for unit-energy symbols, uncoded."""

    ebn0_db: float
    bits_per_symbol: int = 2

    @property
    def noise_variance(self) -> float:
        return 1.0 / (self.bits_per_symbol * 10 ** (self.ebn0_db / 10))


@dataclass(frozen=True)
class SynthParams:
    """Knobs for the synthetic tapped-delay-line generator."""

    l_max: int = 8
    delay_spread_s: float = 1e-6
    speed_range_mps: tuple = (13.6, 18.8)
    n_rx: int = 2
    carrier_hz: float = 3.5e9

    def __post_init__(self):
        if not 1 <= self.l_max <= MAX_PATHS:
            raise ValueError(f"l_max must be in 1..{MAX_PATHS}")
        if self.delay_spread_s <= 0:
            raise ValueError("delay spread must be positive")
        lo, hi = self.speed_range_mps
        if lo < 0 or hi < lo:
            raise ValueError("invalid speed range")
        if self.n_rx < 1:
            raise ValueError("need at least one RX antenna")


def flat_unit_channel(n_rx: int = 1) -> ChannelRealization:
    """Single path, zero delay, zero Doppler, unit gain on every antenna."""
    return ChannelRealization(
        paths=(Path(gain=np.ones(n_rx, complex), delay_s=0.0, doppler_hz=0.0),),
        n_rx=n_rx,
        meta="synthetic",
    )


def synth_channel(rng: np.random.Generator, params: SynthParams) -> ChannelRealization:
    """Draw one random multipath realization.

    Path count is uniform on 1..l_max; delays follow an exponential
    profile truncated to the delay spread; per-path Rayleigh gains decay
    exponentially in delay and are normalized so the expected total power
    per antenna is one. Antenna phases come from a half-wavelength
    uniform-linear-array response at a random angle of arrival.
    """
    L = int(rng.integers(1, params.l_max + 1))
    scale = params.delay_spread_s / 3.0
    delays = np.minimum(rng.exponential(scale=scale, size=L), params.delay_spread_s)
    delays.sort()
    weights = np.exp(-delays / scale)
    power = weights / weights.sum()
    fading = (rng.standard_normal(L) + 1j * rng.standard_normal(L)) / np.sqrt(2)
    aoa = rng.uniform(0, 2 * np.pi, size=L)
    steering = np.exp(
        1j * np.pi * np.outer(np.sin(aoa), np.arange(params.n_rx))
    )  # [L, n_rx]
    gains = np.sqrt(power)[:, None] * fading[:, None] * steering
    speed = rng.uniform(*params.speed_range_mps)
    wavelength = SPEED_OF_LIGHT / params.carrier_hz
    dopplers = (speed / wavelength) * np.cos(rng.uniform(0, 2 * np.pi, size=L))
    paths = tuple(
        Path(gain=gains[p], delay_s=float(delays[p]), doppler_hz=float(dopplers[p]))
        for p in range(L)
    )
    return ChannelRealization(paths=paths, n_rx=params.n_rx, meta="synthetic")


def _centered_freq_offsets(cfg: GridConfig) -> np.ndarray:
    n = np.arange(cfg.n_subcarriers) - cfg.n_subcarriers // 2
    return n * cfg.subcarrier_spacing_hz


def freq_response(
    ch: ChannelRealization, cfg: GridConfig, symbol_index: int
) -> np.ndarray:
    """Frequency response at one OFDM symbol, shape [n_rx, n_subcarriers].

    Subcarrier n runs over centered indices -N/2 .. N/2-1; symbol time is
    symbol_index / subcarrier_spacing (no cyclic prefix is modelled).
    """
    if not 0 <= symbol_index < cfg.n_symbols:
        raise ValueError(f"symbol index {symbol_index} out of range")
    return freq_response_grid(ch, cfg, symbols=(symbol_index,))[:, 0, :]


def freq_response_grid(ch, cfg: GridConfig, symbols=None) -> np.ndarray:
    """Frequency response over symbol times, shape [n_rx, n_symbols, n_sc]."""
    idx = np.arange(cfg.n_symbols) if symbols is None else np.asarray(symbols)
    t = idx * cfg.symbol_duration_s
    rotation = np.exp(2j * np.pi * np.outer(ch.dopplers, t))  # [L, n_sym]
    delay_ramp = np.exp(
        -2j * np.pi * np.outer(ch.delays, _centered_freq_offsets(cfg))
    )  # [L, n_sc]
    return np.einsum("lk,li,ln->kin", ch.gains, rotation, delay_ramp)


def apply(
    ch: ChannelRealization,
    grid: ResourceGrid,
    noise: NoiseSpec | None,
    rng: np.random.Generator,
) -> np.ndarray:
    """Pass a grid through the channel, adding complex AWGN.

    Returns the received array [n_rx, n_symbols, n_subcarriers]. The total
    complex noise variance per element is ``noise.noise_variance``; guard
    elements come out as noise only. ``noise=None`` means noiseless.
    """
    h = freq_response_grid(ch, grid.cfg)
    y = h * grid.symbols[None, :, :]
    if noise is not None:
        sigma = np.sqrt(noise.noise_variance / 2.0)
        y = y + sigma * (
            rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape)
        )
    return y


# ---------------------------------------------------------------------------
# channel-realization files
#
# Little-endian layout: magic "TPCR", u32 version, u32 realization count,
# u32 n_rx; then per realization a u32 path count followed by per-path
# f64 delay, f64 doppler and n_rx (re, im) f64 pairs.
# ---------------------------------------------------------------------------


def export_cirs(realizations, path):
    realizations = list(realizations)
    n_rx = realizations[0].n_rx if realizations else 0
    with open(path, "wb") as f:
        f.write(_CIR_MAGIC)
        f.write(struct.pack("<III", _CIR_VERSION, len(realizations), n_rx))
        for r, ch in enumerate(realizations):
            if ch.n_rx != n_rx:
                raise ChannelFileError(
                    f"realization {r} has n_rx={ch.n_rx}, file uses {n_rx}"
                )
            f.write(struct.pack("<I", len(ch.paths)))
            for p in ch.paths:
                f.write(struct.pack("<dd", p.delay_s, p.doppler_hz))
                inter = np.empty(2 * ch.n_rx)
                inter[0::2] = p.gain.real
                inter[1::2] = p.gain.imag
                f.write(inter.astype("<f8").tobytes())


def import_cirs(path):
    """Read realizations written by :func:`export_cirs`."""
    with open(path, "rb") as f:
        blob = f.read()

    def need(n_bytes, offset, what):
        if offset + n_bytes > len(blob):
            raise ChannelFileError(
                f"channel file truncated at byte {len(blob)} while reading "
                f"{what} (needed {offset + n_bytes} bytes)"
            )

    if blob[:4] != _CIR_MAGIC:
        raise ChannelFileError(f"not a channel file: bad magic {blob[:4]!r}")
    need(12, 4, "header")
    version, count, n_rx = struct.unpack_from("<III", blob, 4)
    if version != _CIR_VERSION:
        raise ChannelFileError(f"unsupported channel file version {version}")
    off = 16
    out = []
    for r in range(count):
        need(4, off, f"path count of realization {r}")
        (n_paths,) = struct.unpack_from("<I", blob, off)
        off += 4
        paths = []
        rec_bytes = 16 + 16 * n_rx
        for p in range(n_paths):
            need(rec_bytes, off, f"path {p} of realization {r}")
            delay, doppler = struct.unpack_from("<dd", blob, off)
            off += 16
            inter = np.frombuffer(blob, dtype="<f8", count=2 * n_rx, offset=off)
            off += 16 * n_rx
            paths.append(
                Path(gain=inter[0::2] + 1j * inter[1::2], delay_s=delay,
                     doppler_hz=doppler)
            )
        out.append(ChannelRealization(paths=tuple(paths), n_rx=n_rx, meta="imported"))
    return out
