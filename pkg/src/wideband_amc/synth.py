"""Multi-signal wideband capture generator.

Each entry is built by recursively carving non-overlapping signals out of
the monitored band ``[band_low, band_high]``: a bandwidth is drawn, a
center frequency is placed uniformly where the signal still fits, and the
free intervals on either side are filled the same way.
"""

from __future__ import annotations

import dataclasses
import functools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy import signal as sps_signal

from . import channel as ch
from .modem import ModulationScheme, PulseShape, SCHEMES, random_symbols, rrc_taps


# Context kept around the capture for the channel interpolators.
_CHANNEL_PAD = 2 * ch.RESAMPLE_HALF_WIDTH


class ConfigError(ValueError):
    pass


class OverlapError(ValueError):
    """Two ground-truth signals share spectrum."""


@dataclass
class GenConfig:
    fs: float = 150e3
    entry_len: int = 1200
    band_low: float = -40e3
    band_high: float = 40e3
    sps_classes: tuple[int, ...] = (16, 14, 12)
    rolloff: float = 0.35
    span_symbols: int = 12
    p_stop: float = 0.15
    # Pick the bandwidth among classes that fit the free interval; a branch
    # ends only when none fits. False reproduces draw-then-exit.
    redraw_bandwidth: bool = True
    guard_hz: float = 0.0
    snr_grid: tuple[float, ...] = tuple(float(s) for s in range(12, 31, 2))
    snr_per_entry: bool = False
    kfactor_grid: tuple[float, ...] = tuple(float(k) for k in range(1, 11))
    max_doppler: float = 4.0
    max_clock_ppm: float = 5.0
    channel_kinds: tuple[str, ...] = ("RAYLEIGH", "RICIAN")
    path_delays: tuple[float, ...] = ch.TABLE_PATH_DELAYS
    path_gains: tuple[float, ...] = ch.TABLE_PATH_GAINS_DB
    modulations: tuple[str, ...] = tuple(s.value for s in SCHEMES)
    noise_power: float = 1.0
    master_seed: int = 0
    entry_count: int = 1000

    def __post_init__(self):
        for name in ("sps_classes", "snr_grid", "kfactor_grid", "channel_kinds",
                     "path_delays", "path_gains", "modulations"):
            setattr(self, name, tuple(getattr(self, name)))
        self.sps_classes = tuple(int(s) for s in self.sps_classes)
        self.channel_kinds = tuple(ch.ChannelKind(k).value for k in self.channel_kinds)
        self.modulations = tuple(ModulationScheme.parse(m).value for m in self.modulations)
        self.validate()

    def validate(self) -> None:
        if not self.band_low < self.band_high:
            raise ConfigError("band_low must be below band_high")
        if self.band_low < -self.fs / 2 or self.band_high > self.fs / 2:
            raise ConfigError("monitored band must lie within [-fs/2, fs/2]")
        if not self.sps_classes or min(self.sps_classes) < 2:
            raise ConfigError("sps_classes must be non-empty integers >= 2")
        if any(self.span_symbols * s % 2 for s in self.sps_classes):
            raise ConfigError("span_symbols * sps must be even for every class")
        if max(self.class_bandwidths) > self.band_high - self.band_low:
            raise ConfigError("a bandwidth class is wider than the monitored band")
        if not 0 <= self.p_stop < 1:
            raise ConfigError("p_stop must lie in [0, 1)")
        if self.entry_len < 1 or self.entry_count < 0:
            raise ConfigError("entry_len must be positive and entry_count non-negative")
        if not self.snr_grid or not self.channel_kinds or not self.modulations:
            raise ConfigError("snr_grid, channel_kinds and modulations must be non-empty")
        if "RICIAN" in self.channel_kinds and not self.kfactor_grid:
            raise ConfigError("kfactor_grid required for RICIAN channels")
        if self.noise_power < 0 or self.guard_hz < 0:
            raise ConfigError("noise_power and guard_hz must be >= 0")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed must be a 64-bit unsigned integer")

    @property
    def class_bandwidths(self) -> tuple[float, ...]:
        return tuple(self.fs / s * (1 + self.rolloff) for s in self.sps_classes)

    @property
    def noise(self) -> ch.NoiseSpec:
        return ch.NoiseSpec(self.noise_power)

    def replace(self, **changes) -> "GenConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v)
                for f in dataclasses.fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "GenConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "GenConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def awgn(cls, snr_db: float, **changes) -> "GenConfig":
        """Static AWGN-only preset at a single SNR (no fading, Doppler or clock error)."""
        base = dict(snr_grid=(snr_db,), channel_kinds=("AWGN_ONLY",),
                    max_doppler=0.0, max_clock_ppm=0.0)
        base.update(changes)
        return cls(**base)


@dataclass
class SignalSpec:
    modulation: ModulationScheme
    symbol_rate: float
    center_freq: float
    bandwidth: float
    snr: float
    channel: ch.ChannelSpec = field(default_factory=ch.ChannelSpec)

    def __post_init__(self):
        self.modulation = ModulationScheme.parse(self.modulation)

    @property
    def low(self) -> float:
        return self.center_freq - self.bandwidth / 2

    @property
    def high(self) -> float:
        return self.center_freq + self.bandwidth / 2


@dataclass
class Entry:
    iq: np.ndarray
    fs: float
    truths: list[SignalSpec]
    entry_id: int = 0
    seed: int = 0

    @property
    def iq_matrix(self) -> np.ndarray:
        """The ``2 x L`` real view: row 0 in-phase, row 1 quadrature."""
        return np.vstack([self.iq.real, self.iq.imag])


def entry_seed(master_seed: int, index: int) -> int:
    """64-bit seed for entry ``index``, independent of every other entry."""
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(index,))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def entry_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def _draw_channel(cfg: GenConfig, rng: np.random.Generator) -> ch.ChannelSpec:
    kind = ch.ChannelKind(cfg.channel_kinds[rng.integers(len(cfg.channel_kinds))])
    clock = float(rng.uniform(0, cfg.max_clock_ppm)) if cfg.max_clock_ppm > 0 else 0.0
    if kind is ch.ChannelKind.AWGN_ONLY:
        return ch.ChannelSpec(kind=kind, clock_offset_ppm=clock)
    k = float(cfg.kfactor_grid[rng.integers(len(cfg.kfactor_grid))]) if kind is ch.ChannelKind.RICIAN else 0.0
    return ch.ChannelSpec(
        kind=kind,
        path_delays=cfg.path_delays,
        path_gains=cfg.path_gains,
        k_factor=k,
        max_doppler=cfg.max_doppler,
        clock_offset_ppm=clock,
    )


def plan_band(
    f_low: float,
    f_high: float,
    cfg: GenConfig,
    rng: np.random.Generator,
    *,
    entry_snr: float | None = None,
    _root: bool = True,
) -> list[SignalSpec]:
    """Recursively fill ``[f_low, f_high]`` with non-overlapping signal specs.

    Returned specs are sorted by center frequency.
    """
    if f_low > f_high:
        return []
    if _root and rng.random() < cfg.p_stop:
        return []
    widths = np.asarray(cfg.class_bandwidths)
    if cfg.redraw_bandwidth:
        fits = np.flatnonzero(widths <= f_high - f_low)
        if fits.size == 0:
            return []
        cls = int(fits[rng.integers(fits.size)])
    else:
        cls = int(rng.integers(widths.size))
        if widths[cls] > f_high - f_low:
            return []
    width = float(widths[cls])
    center = float(rng.uniform(f_low + width / 2, f_high - width / 2))
    snr = entry_snr if entry_snr is not None else float(cfg.snr_grid[rng.integers(len(cfg.snr_grid))])
    spec = SignalSpec(
        modulation=cfg.modulations[rng.integers(len(cfg.modulations))],
        symbol_rate=cfg.fs / cfg.sps_classes[cls],
        center_freq=center,
        bandwidth=width,
        snr=snr,
        channel=_draw_channel(cfg, rng),
    )
    kw = dict(entry_snr=entry_snr, _root=False)
    left = plan_band(f_low, center - width / 2 - cfg.guard_hz, cfg, rng, **kw)
    right = plan_band(center + width / 2 + cfg.guard_hz, f_high, cfg, rng, **kw)
    return left + [spec] + right


@functools.lru_cache(maxsize=64)
def anti_leak_taps(bandwidth: float, fs: float, numtaps: int = 128) -> np.ndarray:
    """Hamming windowed-sinc low-pass (order 127) with cutoff 1.05 x half the bandwidth."""
    taps = sps_signal.firwin(numtaps, min(bandwidth / 2 * 1.05, 0.499 * fs), fs=fs)
    taps.setflags(write=False)
    return taps


@functools.lru_cache(maxsize=64)
def _shaping_taps(shape: PulseShape, bandwidth: float, fs: float) -> tuple[np.ndarray, int]:
    """RRC pulse and anti-leak low-pass merged into one filter, with its group delay."""
    rrc = rrc_taps(shape)
    lpf = anti_leak_taps(bandwidth, fs)
    taps = np.convolve(rrc, lpf)
    taps.setflags(write=False)
    return taps, (rrc.size - 1) // 2 + (lpf.size - 1) // 2


def _baseband(spec: SignalSpec, cfg: GenConfig, rng: np.random.Generator) -> np.ndarray:
    """Pulse-shaped, anti-leak filtered symbols with channel context on both sides.

    Both filters run as one polyphase interpolator. Power is left unnormalized
    because SNR calibration rescales the signal at the end.
    """
    sps = int(round(cfg.fs / spec.symbol_rate))
    shape = PulseShape(cfg.rolloff, cfg.span_symbols, sps)
    n_sym = math.ceil(cfg.entry_len / sps) + 2 * cfg.span_symbols
    symbols = random_symbols(n_sym, spec.modulation, rng)
    taps, delay = _shaping_taps(shape, spec.bandwidth, cfg.fs)
    start = delay + cfg.span_symbols * sps - _CHANNEL_PAD
    return sps_signal.upfirdn(taps, symbols, up=sps)[start : start + cfg.entry_len + 2 * _CHANNEL_PAD]


def synth_signals(
    specs: Sequence[SignalSpec], cfg: GenConfig, rngs: Sequence[np.random.Generator]
) -> np.ndarray:
    """Synthesize several signals at once, one row per spec.

    Row ``i`` is bit-identical to ``synth_signal(specs[i], cfg, rngs[i])``;
    batching only amortizes the per-call overhead of the channel stages.
    """
    if len(specs) != len(rngs):
        raise ValueError("need one generator per spec")
    n_pad = cfg.entry_len + 2 * _CHANNEL_PAD
    x = np.empty((len(specs), n_pad), dtype=complex)
    faded: dict[tuple, list[tuple[int, np.ndarray, np.ndarray]]] = {}
    for i, (spec, rng) in enumerate(zip(specs, rngs)):
        x[i] = _baseband(spec, cfg, rng)
        chan = spec.channel
        if chan.kind is not ch.ChannelKind.AWGN_ONLY:
            faded.setdefault(chan.path_delays, []).append((i, *ch.draw_fading(chan, cfg.fs, rng)))
    for delays, group in faded.items():
        rows = [g[0] for g in group]
        taps = ch._sinusoid_bank(np.stack([g[1] for g in group]), np.stack([g[2] for g in group]), n_pad)
        x[rows] = ch.multipath_response(x[rows], taps, delays, cfg.fs)
    ppm = np.array([s.channel.clock_offset_ppm for s in specs])
    drift = np.flatnonzero(ppm > 0)
    if drift.size:
        carrier = np.array([specs[i].center_freq for i in drift])
        x[drift] = ch.apply_clock_offset(x[drift], ppm[drift], carrier, cfg.fs)
    x = x[:, _CHANNEL_PAD : _CHANNEL_PAD + cfg.entry_len]
    n = np.arange(cfg.entry_len)
    for i, spec in enumerate(specs):
        x[i] = ch.scale_to_snr(x[i], spec.snr, cfg.noise, spec.bandwidth, cfg.fs)
        x[i] *= ch.phasor(2 * np.pi * spec.center_freq * n / cfg.fs)
    return x


def synth_signal(spec: SignalSpec, cfg: GenConfig, rng: np.random.Generator) -> np.ndarray:
    """One impaired, SNR-calibrated signal at its carrier, ``entry_len`` samples long.

    Modulate, anti-leak filter, fading and clock impairments, SNR scaling,
    then mix to ``center_freq``. Extra symbols are synthesized on both sides
    and cropped so the capture never sees pulse-shaping start-up transients.
    """
    return synth_signals([spec], cfg, [rng])[0]


def check_disjoint(specs: Sequence[SignalSpec]) -> None:
    ordered = sorted(specs, key=lambda s: s.low)
    for a, b in zip(ordered, ordered[1:]):
        if b.low < a.high:
            raise OverlapError(
                f"signals at {a.center_freq:.1f} Hz and {b.center_freq:.1f} Hz overlap"
            )


def assemble_entry(
    specs: Sequence[SignalSpec],
    cfg: GenConfig,
    rng: np.random.Generator,
    *,
    entry_id: int = 0,
    seed: int = 0,
) -> Entry:
    """Superpose the synthesized signals and one noise realization.

    Each signal draws from its own child stream spawned from ``rng`` in list
    order; the noise is drawn from ``rng`` afterwards.
    """
    check_disjoint(specs)
    iq = np.zeros(cfg.entry_len, dtype=complex)
    children = rng.spawn(len(specs)) if specs else []
    for row in synth_signals(specs, cfg, children) if specs else []:
        iq += row
    iq = ch.add_awgn(iq, cfg.noise, rng)
    return Entry(iq=iq, fs=cfg.fs, truths=list(specs), entry_id=entry_id, seed=seed)


def plan_entry(cfg: GenConfig, index: int) -> tuple[int, np.random.Generator, list[SignalSpec]]:
    """Seed, generator state after planning, and the signal plan of entry ``index``."""
    seed = entry_seed(cfg.master_seed, index)
    rng = entry_rng(seed)
    snr = None
    if cfg.snr_per_entry:
        snr = float(cfg.snr_grid[rng.integers(len(cfg.snr_grid))])
    return seed, rng, plan_band(cfg.band_low, cfg.band_high, cfg, rng, entry_snr=snr)


def generate_entry(cfg: GenConfig, index: int) -> Entry:
    seed, rng, specs = plan_entry(cfg, index)
    return assemble_entry(specs, cfg, rng, entry_id=index, seed=seed)


def _generate_chunk(args) -> list[Entry]:
    cfg, start, stop = args
    return [generate_entry(cfg, k) for k in range(start, stop)]


def generate_dataset(cfg: GenConfig, jobs: int = 1, chunk: int = 64) -> Iterator[Entry]:
    """Yield ``cfg.entry_count`` entries in id order.

    Entry ``k`` depends only on ``(cfg, k)``, so the output is identical for
    any ``jobs``.
    """
    if jobs <= 1:
        for k in range(cfg.entry_count):
            yield generate_entry(cfg, k)
        return
    bounds = [(cfg, s, min(s + chunk, cfg.entry_count)) for s in range(0, cfg.entry_count, chunk)]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        for entries in pool.map(_generate_chunk, bounds):
            yield from entries
