"""Baseband digital modulation: Gray-mapped constellations and RRC pulse shaping.

Gray tables (bit order is MSB first within each symbol):

* BPSK:  0 -> +1, 1 -> -1
* QPSK:  (b0, b1) -> ((1 - 2 b0) + j (1 - 2 b1)) / sqrt(2)
* 8PSK:  label sequence 0,1,3,2,6,7,5,4 walks the circle counter-clockwise
         starting at angle 0, i.e. position k carries label gray(k)
* 16QAM/64QAM: first half of the bits picks the in-phase level, second half
  the quadrature level; per axis, level index i in -(M-1)..(M-1) step 2
  carries label gray(index)
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy import signal as sps_signal


class ModulationError(ValueError):
    """Raised for invalid modulation inputs or parameters."""


class ModulationScheme(str, enum.Enum):
    BPSK = "BPSK"
    QPSK = "QPSK"
    PSK8 = "PSK8"
    QAM16 = "QAM16"
    QAM64 = "QAM64"

    @property
    def order(self) -> int:
        return _ORDERS[self]

    @property
    def bits_per_symbol(self) -> int:
        return int(math.log2(self.order))

    @property
    def constellation(self) -> np.ndarray:
        """Unit-power constellation indexed by the integer bit label."""
        return _CONSTELLATIONS[self]

    @classmethod
    def parse(cls, value: "str | ModulationScheme") -> "ModulationScheme":
        if isinstance(value, cls):
            return value
        key = str(value).upper().replace("-", "")
        key = _ALIASES.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ModulationError(f"unknown modulation {value!r}") from None


_ORDERS = {
    ModulationScheme.BPSK: 2,
    ModulationScheme.QPSK: 4,
    ModulationScheme.PSK8: 8,
    ModulationScheme.QAM16: 16,
    ModulationScheme.QAM64: 64,
}
_ALIASES = {"8PSK": "PSK8", "16QAM": "QAM16", "64QAM": "QAM64"}

#: Canonical class order used by classifiers and confusion matrices.
SCHEMES: tuple[ModulationScheme, ...] = tuple(ModulationScheme)


def _gray(n: int) -> int:
    return n ^ (n >> 1)


def _normalize(points: np.ndarray) -> np.ndarray:
    return points / np.sqrt(np.mean(np.abs(points) ** 2))


def _square_qam(order: int) -> np.ndarray:
    m = int(math.isqrt(order))
    half = int(math.log2(m))
    levels = np.empty(m)
    for idx in range(m):
        levels[_gray(idx)] = 2 * idx - (m - 1)
    points = np.empty(order, dtype=complex)
    for label in range(order):
        points[label] = levels[label >> half] + 1j * levels[label & (m - 1)]
    return _normalize(points)


def _build_constellations() -> dict[ModulationScheme, np.ndarray]:
    bpsk = np.array([1.0, -1.0], dtype=complex)
    qpsk = np.array(
        [((1 - 2 * (lab >> 1)) + 1j * (1 - 2 * (lab & 1))) for lab in range(4)]
    ) / np.sqrt(2.0)
    psk8 = np.empty(8, dtype=complex)
    for pos in range(8):
        psk8[_gray(pos)] = np.exp(2j * np.pi * pos / 8)
    table = {
        ModulationScheme.BPSK: bpsk,
        ModulationScheme.QPSK: qpsk,
        ModulationScheme.PSK8: psk8,
        ModulationScheme.QAM16: _square_qam(16),
        ModulationScheme.QAM64: _square_qam(64),
    }
    for points in table.values():
        points.setflags(write=False)
    return table


_CONSTELLATIONS = _build_constellations()


def map_symbols(bits, scheme: ModulationScheme | str) -> np.ndarray:
    """Map a bit sequence onto Gray-labelled constellation points."""
    scheme = ModulationScheme.parse(scheme)
    bits = np.asarray(bits, dtype=np.int64).ravel()
    k = scheme.bits_per_symbol
    if bits.size % k:
        raise ModulationError(
            f"bit length {bits.size} not divisible by {k} bits/symbol for {scheme.value}"
        )
    if bits.size and (bits.min() < 0 or bits.max() > 1):
        raise ModulationError("bits must be 0 or 1")
    weights = 1 << np.arange(k - 1, -1, -1)
    labels = bits.reshape(-1, k) @ weights
    return scheme.constellation[labels]


def random_symbols(n: int, scheme: ModulationScheme | str, rng: np.random.Generator) -> np.ndarray:
    scheme = ModulationScheme.parse(scheme)
    bits = rng.integers(0, 2, size=n * scheme.bits_per_symbol)
    return map_symbols(bits, scheme)


@dataclass(frozen=True)
class PulseShape:
    rolloff: float = 0.35
    span_symbols: int = 12
    samples_per_symbol: int = 16

    def __post_init__(self):
        if not 0.0 < self.rolloff <= 1.0:
            raise ModulationError(f"rolloff must lie in (0, 1], got {self.rolloff}")
        if self.span_symbols < 6:
            raise ModulationError(f"span_symbols must be >= 6, got {self.span_symbols}")
        if self.samples_per_symbol < 1:
            raise ModulationError("samples_per_symbol must be positive")
        if (self.span_symbols * self.samples_per_symbol) % 2:
            raise ModulationError("span_symbols * samples_per_symbol must be even (odd tap count)")

    @property
    def num_taps(self) -> int:
        return self.span_symbols * self.samples_per_symbol + 1


def rrc_impulse(t: np.ndarray, rolloff: float) -> np.ndarray:
    """Root-raised-cosine impulse response at times ``t`` in symbol periods.

    Unnormalized (peak value ``1 - beta + 4 beta / pi`` at t = 0). The two
    removable singularities are replaced by their closed-form limits.
    """
    t = np.asarray(t, dtype=float)
    b = rolloff
    out = np.empty_like(t)
    at_zero = np.isclose(t, 0.0, atol=1e-12)
    at_sing = np.isclose(np.abs(t), 1.0 / (4.0 * b), atol=1e-12)
    reg = ~(at_zero | at_sing)
    tr = t[reg]
    num = np.sin(np.pi * tr * (1 - b)) + 4 * b * tr * np.cos(np.pi * tr * (1 + b))
    den = np.pi * tr * (1 - (4 * b * tr) ** 2)
    out[reg] = num / den
    out[at_zero] = 1 - b + 4 * b / np.pi
    out[at_sing] = (b / np.sqrt(2)) * (
        (1 + 2 / np.pi) * np.sin(np.pi / (4 * b)) + (1 - 2 / np.pi) * np.cos(np.pi / (4 * b))
    )
    return out


@functools.lru_cache(maxsize=64)
def rrc_taps(shape: PulseShape) -> np.ndarray:
    """Symmetric unit-energy RRC taps, ``span * sps + 1`` long (read-only)."""
    half = shape.span_symbols * shape.samples_per_symbol // 2
    t = np.arange(-half, half + 1) / shape.samples_per_symbol
    h = rrc_impulse(t, shape.rolloff)
    h = h / np.sqrt(np.sum(h**2))
    h.setflags(write=False)
    return h


@dataclass
class BasebandSignal:
    samples: np.ndarray
    symbol_rate: float
    occupied_bandwidth: float


def modulate(
    symbols,
    shape: PulseShape,
    fs: float = 1.0,
    *,
    normalize: bool = True,
) -> BasebandSignal:
    """Pulse-shape a symbol stream.

    The output is trimmed for the filter group delay so it holds exactly
    ``len(symbols) * sps`` samples aligned with the symbol clock. With
    ``normalize`` the result has unit average power.
    """
    symbols = np.asarray(symbols, dtype=complex).ravel()
    if symbols.size == 0:
        raise ModulationError("cannot modulate an empty symbol sequence")
    sps = shape.samples_per_symbol
    taps = rrc_taps(shape)
    shaped = sps_signal.upfirdn(taps, symbols, up=sps)
    delay = (taps.size - 1) // 2
    samples = shaped[delay : delay + symbols.size * sps]
    if normalize:
        power = np.mean(np.abs(samples) ** 2)
        if power > 0:
            samples = samples / np.sqrt(power)
    symbol_rate = fs / sps
    return BasebandSignal(samples, symbol_rate, symbol_rate * (1 + shape.rolloff))
