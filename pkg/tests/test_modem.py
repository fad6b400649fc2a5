import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import signal

from wideband_amc.modem import (SCHEMES, ModulationError, ModulationScheme, PulseShape, map_symbols,
                                modulate, random_symbols, rrc_impulse, rrc_taps)

# Center tap of the unit-energy rolloff 0.35 / sps 16 / span 12 pulse, from a
# 30-digit mpmath evaluation of the RRC formula approached symmetrically at t = 0.
CENTER_TAP = 0.27391869807749558
# Exact 99 % power bandwidth of a raised-cosine spectrum, rolloff 0.35,
# Rs = 9375 Hz, by root-finding on the integrated spectrum.
BW99_HZ = 10937.411269243643


def _all_bits(scheme):
    k = scheme.bits_per_symbol
    labels = np.arange(scheme.order)
    return ((labels[:, None] >> np.arange(k - 1, -1, -1)) & 1).ravel()


def test_constellation_sizes():
    assert [s.order for s in SCHEMES] == [2, 4, 8, 16, 64]


@pytest.mark.parametrize("scheme", SCHEMES)
def test_constellation_unit_power(scheme):
    points = map_symbols(_all_bits(scheme), scheme)
    assert len(set(np.round(points, 12))) == scheme.order
    assert abs(np.mean(np.abs(points) ** 2) - 1) < 1e-12


def test_bpsk_mapping():
    assert np.array_equal(map_symbols([0, 1], "BPSK"), [1, -1])


def test_qpsk_mapping():
    assert np.allclose(map_symbols([0, 0], "QPSK"), (1 + 1j) / np.sqrt(2), atol=1e-15)


@pytest.mark.parametrize("scheme", SCHEMES)
def test_gray_neighbours_differ_by_one_bit(scheme):
    if scheme is ModulationScheme.BPSK:
        return
    points = scheme.constellation
    d = np.abs(points[:, None] - points[None])
    np.fill_diagonal(d, np.inf)
    nearest = d.min()
    for a in range(scheme.order):
        for b in np.flatnonzero(np.isclose(d[a], nearest)):
            assert bin(a ^ int(b)).count("1") == 1


def test_length_not_divisible():
    with pytest.raises(ModulationError, match="divisible"):
        map_symbols([0, 1, 1], "QPSK")


def test_parse_aliases():
    assert ModulationScheme.parse("16QAM") is ModulationScheme.QAM16
    assert ModulationScheme.parse("8psk") is ModulationScheme.PSK8
    with pytest.raises(ModulationError):
        ModulationScheme.parse("FSK")


def test_rrc_tap_count():
    assert rrc_taps(PulseShape(0.35, 12, 16)).size == 193


@given(st.floats(0.05, 1.0), st.integers(3, 8), st.integers(2, 20))
def test_rrc_unit_energy_and_symmetric(beta, half_span, sps):
    span = 2 * half_span
    h = rrc_taps(PulseShape(beta, span, sps))
    assert h.size == span * sps + 1
    assert abs(np.sum(h**2) - 1) < 1e-12
    assert np.allclose(h, h[::-1], atol=1e-15)


def test_rrc_center_tap():
    h = rrc_taps(PulseShape(0.35, 12, 16))
    assert h[96] == pytest.approx(CENTER_TAP, rel=1e-13)


def test_rrc_singularity_limit_is_continuous():
    beta = 0.25  # t = 1 exactly hits +-1/(4 beta)
    t0 = 1 / (4 * beta)
    at = rrc_impulse(np.array([t0]), beta)[0]
    near = rrc_impulse(np.array([t0 - 1e-6, t0 + 1e-6]), beta).mean()
    assert at == pytest.approx(near, abs=1e-9)


def test_bad_pulse_parameters():
    for kwargs in ({"rolloff": 0.0}, {"rolloff": 1.5}, {"span_symbols": 4}, {"samples_per_symbol": 0},
                   {"span_symbols": 7, "samples_per_symbol": 3}):
        with pytest.raises(ModulationError):
            PulseShape(**kwargs)


def test_modulate_length_and_power(rng):
    sig = modulate(random_symbols(8, "QAM16", rng), PulseShape(0.35, 12, 16))
    assert sig.samples.size == 128
    assert abs(np.mean(np.abs(sig.samples) ** 2) - 1) < 1e-6


def test_modulate_empty():
    with pytest.raises(ModulationError):
        modulate([], PulseShape())


def test_constant_bpsk_is_real_positive():
    sig = modulate(np.ones(64), PulseShape(0.35, 12, 16))
    assert np.max(np.abs(sig.samples.imag)) < 1e-9
    assert sig.samples.mean().real > 0


def test_occupied_bandwidth_field():
    sig = modulate(np.ones(4), PulseShape(0.35, 12, 16), fs=150e3)
    assert sig.symbol_rate == 9375.0
    assert sig.occupied_bandwidth == pytest.approx(12656.25)


def test_qpsk_power_bandwidth(rng):
    fs = 150e3
    sig = modulate(random_symbols(20000, "QPSK", rng), PulseShape(0.35, 12, 16), fs)
    f, p = signal.welch(sig.samples, fs=fs, nperseg=4096, return_onesided=False)
    order = np.argsort(f)
    f, p = f[order], p[order]
    cum = np.cumsum(p) / p.sum()
    bw99 = f[np.searchsorted(cum, 0.995)] - f[np.searchsorted(cum, 0.005)]
    assert bw99 == pytest.approx(BW99_HZ, rel=0.02)
    inside = np.abs(f) <= sig.occupied_bandwidth / 2
    assert p[inside].sum() / p.sum() > 0.999


def test_bandwidth_grows_with_symbol_rate(rng):
    fs = 150e3
    widths = []
    for sps in (16, 14, 12):
        sig = modulate(random_symbols(8000, "QPSK", rng), PulseShape(0.35, 12, sps), fs)
        f, p = signal.welch(sig.samples, fs=fs, nperseg=2048, return_onesided=False)
        widths.append(np.sum(p > p.max() * 0.01) * fs / 2048)
    assert widths[0] < widths[1] < widths[2]


@given(st.complex_numbers(min_magnitude=0.1, max_magnitude=10, allow_nan=False, allow_infinity=False),
       st.integers(0, 2**32 - 1))
def test_modulate_linear(a, seed):
    symbols = random_symbols(12, "PSK8", np.random.default_rng(seed))
    shape = PulseShape(0.35, 12, 4)
    base = modulate(symbols, shape, normalize=False).samples
    scaled = modulate(a * symbols, shape, normalize=False).samples
    assert np.allclose(scaled, a * base, rtol=1e-12, atol=1e-12)


def test_random_symbols_deterministic():
    a = random_symbols(50, "QAM64", np.random.default_rng(5))
    b = random_symbols(50, "QAM64", np.random.default_rng(5))
    assert np.array_equal(a, b)
