import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from wideband_amc import channel as ch
from wideband_amc.detect import (DEFAULT_BANDWIDTHS, DetectError, DetectorConfig, DetectorMethod,
                                 Proposal, Spectrum, detect, detect_energy, interval_iou, iou, nms,
                                 template_scores, welch_psd)
from wideband_amc.synth import GenConfig, SignalSpec, assemble_entry

FS = 150e3
N = 1200
MF = DetectorConfig(method=DetectorMethod.MATCHED_FILTER)


def _entry(specs, seed):
    return assemble_entry(specs, GenConfig(), np.random.default_rng(seed))


def _spec(center, sps=16, snr=30.0, modulation="QPSK"):
    return SignalSpec(modulation, FS / sps, center, FS / sps * 1.35, snr, ch.ChannelSpec())


def _synthetic(levels_db):
    """A flat unit floor with the given dB excess per bin."""
    psd = 10 ** (np.asarray(levels_db, float) / 10)
    freqs = -FS / 2 + np.arange(psd.size) * FS / psd.size
    return Spectrum(psd, freqs, FS)


# -- spectrum estimate -----------------------------------------------------------


def test_tone_peak_location():
    n = np.arange(N)
    f0 = 20 * FS / 256
    spec = welch_psd(np.exp(2j * np.pi * f0 / FS * n), FS)
    assert spec.freqs[np.argmax(spec.psd)] == pytest.approx(f0)
    assert spec.n_bins == 256 and spec.n_segments == 8


def test_white_noise_power_integral(rng):
    x = ch.add_awgn(np.zeros(200 * N), ch.NoiseSpec(4.0), rng)
    assert welch_psd(x, FS).total_power == pytest.approx(4.0, rel=0.05)


def test_single_frame_parseval(rng):
    x = rng.normal(size=256) + 1j * rng.normal(size=256)
    spec = welch_psd(x, FS)
    window = np.hanning(257)[:-1]  # periodic Hann
    assert spec.total_power == pytest.approx(np.sum(np.abs(x * window) ** 2) / np.sum(window**2))


def test_short_capture_rejected():
    with pytest.raises(DetectError):
        welch_psd(np.zeros(100, complex), FS)


# -- energy and template detectors ---------------------------------------------


@pytest.mark.parametrize("method,max_rate", [(DetectorMethod.ENERGY, 0.10), (DetectorMethod.MATCHED_FILTER, 0.10)])
def test_noise_only_false_proposals(method, max_rate):
    cfg = DetectorConfig(method=method)
    dirty = sum(bool(detect(_entry([], s).iq, FS, cfg)) for s in range(100))
    assert dirty / 100 < max_rate


@pytest.mark.parametrize("method", list(DetectorMethod))
@pytest.mark.parametrize("sps,center", [(16, -20e3), (14, 3e3), (12, 25e3)])
def test_single_strong_signal(method, sps, center):
    truth = _spec(center, sps)
    props = detect(_entry([truth], sps).iq, FS, DetectorConfig(method=method))
    assert len(props) == 1
    assert iou(props[0], truth) >= 0.7


def test_two_separated_signals():
    a, b = _spec(-20e3, 16), _spec(20e3 - 4e3, 12)  # 10 kHz or more between edges
    assert b.low - a.high >= 10e3
    for method in DetectorMethod:
        props = sorted(detect(_entry([a, b], 5).iq, FS, DetectorConfig(method=method)),
                       key=lambda p: p.center_freq)
        assert len(props) == 2
        assert iou(props[0], a) >= 0.5 and iou(props[1], b) >= 0.5


@pytest.mark.parametrize("sps", [16, 14, 12])
def test_mf_top_bandwidth_is_the_class(sps):
    for seed in range(10):
        props = detect(_entry([_spec(3e3, sps)], seed).iq, FS, MF)
        best = max(props, key=lambda p: p.confidence)
        assert best.bandwidth == FS / sps * 1.35


def test_mf_saturation_can_be_disabled():
    uncapped = DetectorConfig(method=DetectorMethod.MATCHED_FILTER, mf_saturation_db=None)
    props = detect(_entry([_spec(3e3, 16)], 0).iq, FS, uncapped)
    assert props


def test_template_self_correlation_is_one():
    excess = np.zeros(100)
    excess[40:60] = 12.0
    score, level = template_scores(excess, 20)
    assert score[40] == pytest.approx(1.0)
    assert level[40] == pytest.approx(12.0)
    assert np.argmax(score) == 40


def test_adjacent_signals_need_valley_split():
    cfg = GenConfig()
    specs = [_spec(-12.5e3, 16), _spec(0.5e3, 16)]  # guard-band spacing
    iq = assemble_entry(specs, cfg, np.random.default_rng(3)).iq
    assert len(detect(iq, FS, DetectorConfig())) == 2
    assert len(detect(iq, FS, DetectorConfig(valley_split_db=None))) == 1


def test_valley_split_cut_at_valley():
    levels = np.zeros(256)
    levels[100:120] = 25.0
    levels[120] = 8.0
    levels[121:141] = 25.0
    props = sorted(detect_energy(_synthetic(levels)), key=lambda p: p.center_freq)
    assert len(props) == 2
    bin_hz = FS / 256
    # Each side keeps half of the valley bin.
    assert props[0].bandwidth == pytest.approx(20.5 * bin_hz)
    assert props[1].bandwidth == pytest.approx(20.5 * bin_hz)
    assert props[0].high <= props[1].low + 1e-9


def test_proposals_stay_inside_nyquist():
    levels = np.zeros(256)
    levels[:30] = 20.0
    (p,) = detect_energy(_synthetic(levels))
    assert p.low >= -FS / 2 - 1e-9


@pytest.mark.parametrize("changes", [{"threshold_db": -1}, {"nms_iou": 1.0},
                                     {"valley_split_db": 0.0}, {"min_run_bins": 0}])
def test_config_validation(changes):
    with pytest.raises(DetectError):
        DetectorConfig(**changes)


def test_method_parse():
    assert DetectorMethod.parse("energy") is DetectorMethod.ENERGY
    with pytest.raises(DetectError):
        DetectorMethod.parse("radar")


def _bumps(peaks, widths, starts):
    levels = np.zeros(256)
    for peak, width, start in zip(peaks, widths, starts):
        x = np.linspace(-1, 1, width)
        levels[start : start + width] = np.maximum(levels[start : start + width], peak * (1 - x**2))
    return levels


@given(st.lists(st.tuples(st.floats(8, 40), st.integers(10, 24)), min_size=1, max_size=4),
       st.floats(3, 20), st.floats(0.1, 10))
def test_count_non_increasing_in_threshold_for_unimodal_bands(bumps, t1, dt):
    starts = [10 + 30 * i for i in range(len(bumps))]
    levels = _bumps([b[0] for b in bumps], [b[1] for b in bumps], starts)
    spec = _synthetic(levels)
    low = detect_energy(spec, DetectorConfig(threshold_db=t1))
    high = detect_energy(spec, DetectorConfig(threshold_db=t1 + dt))
    assert len(high) <= len(low)


def test_count_can_grow_with_threshold_for_two_humped_band():
    # Two humps joined by an 8 dB dip: one run at 6 dB, two runs at 15 dB.
    levels = np.zeros(256)
    levels[100:112] = 20.0
    levels[112:118] = 12.0
    levels[118:130] = 20.0
    spec = _synthetic(levels)
    assert len(detect_energy(spec, DetectorConfig(threshold_db=6.0))) == 1
    assert len(detect_energy(spec, DetectorConfig(threshold_db=15.0))) == 2


# -- IoU and NMS ---------------------------------------------------------------


def test_iou_examples():
    assert interval_iou(0, 10, 2, 12) == pytest.approx(8 / 12)
    assert interval_iou(0, 10, 2, 8) == pytest.approx(0.6)
    assert interval_iou(0, 10, 10, 20) == 0.0
    assert iou(Proposal(0.0, 10.0), Proposal(0.0, 10.0)) == 1.0
    with pytest.raises(DetectError):
        interval_iou(0, 0, 0, 1)


_interval = st.tuples(st.floats(-1e5, 1e5), st.floats(1e-3, 1e5)).map(lambda t: (t[0], t[0] + t[1]))


@given(_interval, _interval)
def test_iou_properties(a, b):
    v = interval_iou(*a, *b)
    assert 0.0 <= v <= 1.0
    assert v == pytest.approx(interval_iou(*b, *a))
    assert interval_iou(*a, *a) == pytest.approx(1.0)


@given(_interval, _interval, st.floats(-1e4, 1e4))
def test_iou_shift_invariant(a, b, s):
    assume(abs(s) < 1e3)
    shifted = interval_iou(a[0] + s, a[1] + s, b[0] + s, b[1] + s)
    assert shifted == pytest.approx(interval_iou(*a, *b), abs=1e-6)


def test_nms_example():
    props = [Proposal(0.0, 10.0, 0.9), Proposal(1.0, 10.0, 0.8), Proposal(30.0, 10.0, 0.7)]
    kept = nms(props, 0.5)
    assert kept == [props[0], props[2]]
    assert nms(props, 0.0) == [props[0], props[2]]


_proposal = st.builds(Proposal, st.floats(-5e4, 5e4), st.floats(1e3, 2e4), st.floats(0, 1))


@given(st.lists(_proposal, max_size=12), st.floats(0, 0.95))
def test_nms_properties(props, thr):
    kept = nms(props, thr)
    assert len(kept) <= len(props)
    assert all(any(k is p for p in props) for k in kept)
    for i, a in enumerate(kept):
        for b in kept[i + 1 :]:
            assert iou(a, b) <= thr
    if props:
        assert max(p.confidence for p in props) == kept[0].confidence
    assert nms(kept, thr) == kept
