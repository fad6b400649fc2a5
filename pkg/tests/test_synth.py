import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import signal

from wideband_amc import channel as ch
from wideband_amc.modem import SCHEMES
from wideband_amc.synth import (ConfigError, GenConfig, OverlapError, SignalSpec, anti_leak_taps,
                                assemble_entry, check_disjoint, entry_rng, entry_seed,
                                generate_dataset, generate_entry, plan_band, plan_entry, synth_signal,
                                synth_signals)

FS = 150e3


@pytest.fixture(scope="module")
def plans():
    cfg = GenConfig()
    return [plan_entry(cfg, k)[2] for k in range(10000)]


def _spec(modulation="QPSK", sps=16, center=5e3, snr=30.0, channel=ch.ChannelSpec()):
    return SignalSpec(modulation, FS / sps, center, FS / sps * 1.35, snr, channel)


def test_config_defaults_and_bandwidths():
    cfg = GenConfig()
    assert cfg.class_bandwidths == pytest.approx((12656.25, 14464.285714285714, 16875.0))
    assert cfg.snr_grid == tuple(float(s) for s in range(12, 31, 2))
    assert cfg.kfactor_grid == tuple(float(k) for k in range(1, 11))


@pytest.mark.parametrize("changes", [
    {"band_low": 10e3, "band_high": 0.0},
    {"band_high": 80e3},
    {"band_low": -5e3, "band_high": 5e3},
    {"p_stop": 1.0},
    {"entry_count": -1},
    {"channel_kinds": ("FOO",)},
])
def test_config_validation(changes):
    with pytest.raises((ConfigError, ValueError)):
        GenConfig(**changes)


def test_config_dict_round_trip():
    cfg = GenConfig(master_seed=5, snr_grid=(12.0, 20.0))
    assert GenConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        GenConfig.from_dict({"bogus": 1})


def test_narrow_band_gives_empty_plan(rng):
    cfg = GenConfig(p_stop=0.0)
    assert plan_band(0.0, 10e3, cfg, rng) == []


def test_plan_deterministic():
    cfg = GenConfig()
    a = plan_band(cfg.band_low, cfg.band_high, cfg, np.random.default_rng(7))
    b = plan_band(cfg.band_low, cfg.band_high, cfg, np.random.default_rng(7))
    assert a == b


def test_plans_disjoint_and_in_band(plans):
    cfg = GenConfig()
    for specs in plans:
        for s in specs:
            assert cfg.band_low <= s.low and s.high <= cfg.band_high
        for a, b in itertools.combinations(specs, 2):
            assert a.high <= b.low or b.high <= a.low
        assert len(specs) <= int(80e3 // 12656.25)


def test_plans_modulation_histogram_uniform(plans):
    counts = np.zeros(len(SCHEMES))
    for specs in plans:
        for s in specs:
            counts[SCHEMES.index(s.modulation)] += 1
    expected = counts.sum() / len(SCHEMES)
    assert np.all(np.abs(counts / expected - 1) < 0.10)


def test_plans_contain_empty_entries(plans):
    empty = sum(1 for specs in plans if not specs) / len(plans)
    assert 0.10 < empty < 0.20  # p_stop = 0.15 at the root


def test_plans_three_bandwidth_clusters(plans):
    widths = {round(s.bandwidth, 6) for specs in plans for s in specs}
    assert len(widths) == 3


def test_plans_mostly_four_to_six(plans):
    counts = np.array([len(s) for s in plans])
    nonempty = counts[counts > 0]
    assert np.mean((nonempty >= 4) & (nonempty <= 6)) >= 0.8


def test_draw_then_exit_mode_stays_valid():
    cfg = GenConfig(redraw_bandwidth=False)
    for k in range(300):
        specs = plan_entry(cfg, k)[2]
        check_disjoint(specs)


def test_anti_leak_filter_order():
    taps = anti_leak_taps(12656.25, FS)
    assert taps.size == 128
    assert np.sum(taps) == pytest.approx(1.0, abs=1e-12)


def test_synth_length_and_peak_region():
    cfg = GenConfig.awgn(30.0)
    spec = _spec(center=5e3)
    psd = 0.0
    for seed in range(40):
        x = synth_signal(spec, cfg, np.random.default_rng(seed))
        assert x.shape == (cfg.entry_len,)
        f, p = signal.welch(x, fs=FS, nperseg=256, return_onesided=False)
        psd = psd + p
    f, psd = np.fft.fftshift(f), np.fft.fftshift(psd)
    region = f[psd > psd.max() / 2]
    midpoint = (region.min() + region.max()) / 2
    assert abs(midpoint - spec.center_freq) <= FS / 256


@pytest.mark.parametrize("sps", [16, 14, 12])
def test_synth_out_of_band_leakage(sps):
    cfg = GenConfig.awgn(30.0)
    spec = _spec("QAM16", sps, center=5e3)
    x = synth_signal(spec, cfg, np.random.default_rng(sps))
    f, p = signal.periodogram(x, fs=FS, window="blackmanharris", return_onesided=False, nfft=8192)
    inside = np.abs(f - spec.center_freq) <= spec.bandwidth / 2 * 1.2
    assert 10 * np.log10(p[inside].sum() / p[~inside].sum()) >= 30


def test_synth_snr_calibrated():
    cfg = GenConfig.awgn(30.0)
    spec = _spec(snr=18.0)
    x = synth_signal(spec, cfg, np.random.default_rng(1))
    in_band_noise = cfg.noise_power * spec.bandwidth / FS
    assert 10 * np.log10(np.mean(np.abs(x) ** 2) / in_band_noise) == pytest.approx(18.0, abs=1e-9)


def test_synth_deterministic_static_channel():
    cfg = GenConfig.awgn(30.0)
    spec = _spec(channel=ch.ChannelSpec(kind="RAYLEIGH", max_doppler=0.0))
    a = synth_signal(spec, cfg, np.random.default_rng(4))
    b = synth_signal(spec, cfg, np.random.default_rng(4))
    assert np.array_equal(a, b)


def test_batched_rows_equal_single_calls():
    cfg = GenConfig()
    specs = plan_entry(cfg, 3)[2]
    batch = synth_signals(specs, cfg, [np.random.default_rng(i) for i in range(len(specs))])
    for i, spec in enumerate(specs):
        assert np.array_equal(batch[i], synth_signal(spec, cfg, np.random.default_rng(i)))


def test_noise_only_entry_power():
    cfg = GenConfig(noise_power=2.0)
    e = assemble_entry([], cfg, np.random.default_rng(0))
    assert e.truths == []
    assert np.mean(np.abs(e.iq) ** 2) == pytest.approx(2.0, rel=0.05)


def test_entry_parseval():
    e = generate_entry(GenConfig(), 2)
    energy_t = np.sum(np.abs(e.iq) ** 2)
    energy_f = np.sum(np.abs(np.fft.fft(e.iq)) ** 2) / e.iq.size
    assert energy_f == pytest.approx(energy_t, rel=1e-6)
    assert e.iq_matrix.shape == (2, 1200)


def test_superposition():
    cfg = GenConfig()
    specs = [_spec("BPSK", 16, -20e3, 20.0), _spec("QAM64", 12, 15e3, 26.0,
                                                    ch.ChannelSpec("RICIAN", ch.TABLE_PATH_DELAYS,
                                                                   ch.TABLE_PATH_GAINS_DB, 3.0, 4.0, 2.5))]
    e = assemble_entry(specs, cfg, entry_rng(99))
    parent = entry_rng(99)
    children = parent.spawn(2)
    total = synth_signal(specs[0], cfg, children[0]) + synth_signal(specs[1], cfg, children[1])
    noisy = ch.add_awgn(total, cfg.noise, parent)
    assert np.array_equal(e.iq, noisy)
    assert e.truths == specs


def test_overlap_rejected(rng):
    specs = [_spec(center=0.0), _spec(center=5e3)]
    with pytest.raises(OverlapError):
        assemble_entry(specs, GenConfig(), rng)


def test_entry_seeds_independent_of_order():
    assert entry_seed(7, 5) == entry_seed(7, 5)
    assert len({entry_seed(7, k) for k in range(1000)}) == 1000


def test_generate_dataset_parallel_matches_serial():
    cfg = GenConfig(entry_count=12)
    serial = list(generate_dataset(cfg))
    parallel = list(generate_dataset(cfg, jobs=2, chunk=5))
    assert [e.entry_id for e in parallel] == list(range(12))
    for a, b in zip(serial, parallel):
        assert np.array_equal(a.iq, b.iq) and a.truths == b.truths and a.seed == b.seed


def test_entry_independent_of_other_entries():
    a = generate_entry(GenConfig(entry_count=5), 4)
    b = generate_entry(GenConfig(entry_count=500), 4)
    assert np.array_equal(a.iq, b.iq)


@given(st.integers(0, 2**63), st.integers(0, 10**6))
def test_plan_valid_for_any_seed(seed, index):
    cfg = GenConfig(master_seed=seed)
    specs = plan_entry(cfg, index)[2]
    check_disjoint(specs)
    for s in specs:
        assert cfg.band_low <= s.low and s.high <= cfg.band_high
        assert s.snr in cfg.snr_grid
