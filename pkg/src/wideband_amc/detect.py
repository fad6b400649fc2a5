"""Spectrum estimation and classical band detectors.

Both detectors work on a Welch power spectral density and report
proposals ``(center_freq, bandwidth, confidence)``:

* the energy detector thresholds the PSD against a median noise floor and
  turns runs of occupied bins into bands;
* the matched filter slides rectangular spectral templates of each known
  bandwidth over the floor-relative spectrum and keeps well-shaped peaks.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import signal as sps_signal

#: Occupied bandwidths of the default symbol-rate classes at 150 kHz.
DEFAULT_BANDWIDTHS = tuple(150e3 / s * 1.35 for s in (16, 14, 12))


class DetectError(ValueError):
    pass


class DetectorMethod(str, enum.Enum):
    ENERGY = "ENERGY"
    MATCHED_FILTER = "MATCHED_FILTER"

    @classmethod
    def parse(cls, value) -> "DetectorMethod":
        if isinstance(value, cls):
            return value
        key = str(value).upper()
        key = {"MF": "MATCHED_FILTER", "TH": "ENERGY"}.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise DetectError(f"unknown detector method {value!r}") from None


@dataclass(frozen=True)
class DetectorConfig:
    method: DetectorMethod = DetectorMethod.ENERGY
    threshold_db: float = 6.0
    merge_gap_bins: int = 3
    min_run_bins: int = 8
    # Split a run at an internal minimum this many dB below the lower of its
    # two side peaks; None keeps runs whole.
    valley_split_db: float | None = 10.0
    nms_iou: float = 0.3
    mf_bandwidths: tuple[float, ...] = DEFAULT_BANDWIDTHS
    # Minimum template correlation for a matched-filter peak to count.
    mf_min_score: float = 0.5
    # Cap on the floor-relative level seen by the templates, so a sloped
    # roll-off still reads as occupied; None leaves levels uncapped.
    mf_saturation_db: float | None = 15.0
    segment: int = 256
    hop: int = 128

    def __post_init__(self):
        object.__setattr__(self, "method", DetectorMethod.parse(self.method))
        object.__setattr__(self, "mf_bandwidths", tuple(float(b) for b in self.mf_bandwidths))
        if self.threshold_db <= 0:
            raise DetectError("threshold_db must be > 0")
        if not 0 <= self.nms_iou < 1:
            raise DetectError("nms_iou must lie in [0, 1)")
        if self.merge_gap_bins < 0 or self.min_run_bins < 1:
            raise DetectError("merge_gap_bins must be >= 0 and min_run_bins >= 1")
        if self.method is DetectorMethod.MATCHED_FILTER and not self.mf_bandwidths:
            raise DetectError("matched filter needs at least one template bandwidth")
        if any(b <= 0 for b in self.mf_bandwidths):
            raise DetectError("template bandwidths must be positive")
        if self.valley_split_db is not None and not self.valley_split_db > 0:
            raise DetectError("valley_split_db must be positive or None")
        if self.mf_saturation_db is not None and not self.mf_saturation_db > 0:
            raise DetectError("mf_saturation_db must be positive or None")
        if not 0 <= self.mf_min_score <= 1:
            raise DetectError("mf_min_score must lie in [0, 1]")
        if not 0 < self.hop <= self.segment:
            raise DetectError("hop must lie in (0, segment]")


@dataclass(frozen=True)
class Proposal:
    center_freq: float
    bandwidth: float
    confidence: float = 1.0

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise DetectError(f"bandwidth must be positive, got {self.bandwidth}")
        if not 0 <= self.confidence <= 1:
            raise DetectError(f"confidence must lie in [0, 1], got {self.confidence}")

    @property
    def low(self) -> float:
        return self.center_freq - self.bandwidth / 2

    @property
    def high(self) -> float:
        return self.center_freq + self.bandwidth / 2


@dataclass
class Spectrum:
    psd: np.ndarray  # power per Hz, bin 0 at -fs/2
    freqs: np.ndarray
    fs: float
    n_segments: int = 1

    @property
    def n_bins(self) -> int:
        return self.psd.size

    @property
    def bin_hz(self) -> float:
        return self.fs / self.n_bins

    @property
    def total_power(self) -> float:
        return float(np.sum(self.psd) * self.bin_hz)


def welch_psd(iq, fs: float, segment: int = 256, hop: int = 128) -> Spectrum:
    """Hann-window averaged periodogram, two-sided and centered on 0 Hz.

    Density scaling: the PSD integrates to the mean power of white input.
    """
    iq = np.asarray(iq)
    if iq.ndim != 1 or iq.size < segment:
        raise DetectError(f"need at least one segment of {segment} samples, got {iq.size}")
    freqs, psd = sps_signal.welch(
        iq, fs=fs, window="hann", nperseg=segment, noverlap=segment - hop,
        detrend=False, return_onesided=False, scaling="density",
    )
    n_seg = 1 + (iq.size - segment) // hop
    return Spectrum(np.fft.fftshift(psd), np.fft.fftshift(freqs), float(fs), n_seg)


# -- interval geometry -----------------------------------------------------------


def interval_iou(a_low: float, a_high: float, b_low: float, b_high: float) -> float:
    if not (a_high > a_low and b_high > b_low):
        raise DetectError("intervals must have positive width")
    inter = min(a_high, b_high) - max(a_low, b_low)
    if inter <= 0:
        return 0.0
    union = max(a_high, b_high) - min(a_low, b_low)
    return min(inter / union, 1.0)


def iou(a, b) -> float:
    """Intersection over union of two bands given by ``center_freq`` and ``bandwidth``."""
    if not (a.bandwidth > 0 and b.bandwidth > 0):
        raise DetectError("bandwidths must be positive")
    return interval_iou(a.center_freq - a.bandwidth / 2, a.center_freq + a.bandwidth / 2,
                        b.center_freq - b.bandwidth / 2, b.center_freq + b.bandwidth / 2)


def nms(proposals, iou_threshold: float) -> list:
    """Greedy non-maximum suppression.

    Visits proposals by confidence (ties: lower center first) and keeps one
    unless it overlaps an already kept proposal by more than the threshold.
    """
    if not 0 <= iou_threshold < 1:
        raise DetectError("iou_threshold must lie in [0, 1)")
    kept: list = []
    for p in sorted(proposals, key=lambda p: (-p.confidence, p.center_freq)):
        if all(iou(p, k) <= iou_threshold for k in kept):
            kept.append(p)
    return kept


# -- detectors -----------------------------------------------------------------


def noise_floor(spec: Spectrum) -> float:
    return float(np.median(spec.psd))


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Half-open ``[start, stop)`` index runs where ``mask`` is true."""
    edges = np.diff(np.concatenate([[0], mask.astype(np.int8), [0]]))
    return list(zip(np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)))


def _split_valleys(level_db: np.ndarray, lo: float, hi: float, depth_db: float) -> list[tuple[float, float]]:
    """Recursively cut the bin span ``[lo, hi)`` at its deepest valley.

    Spans are in fractional bins so a cut through the center of bin ``v``
    gives each side half of it. A valley qualifies when it lies at least
    ``depth_db`` below the smaller of the maxima on its two sides.
    """
    a, b = int(lo), int(np.ceil(hi))
    seg = level_db[a:b]
    if seg.size < 3:
        return [(lo, hi)]
    left = np.maximum.accumulate(seg)[:-2]
    right = np.maximum.accumulate(seg[::-1])[::-1][2:]
    depth = np.minimum(left, right) - seg[1:-1]
    i = int(np.argmax(depth))
    if depth[i] < depth_db:
        return [(lo, hi)]
    cut = a + i + 1.5
    return (_split_valleys(level_db, lo, cut, depth_db)
            + _split_valleys(level_db, cut, hi, depth_db))


def detect_energy(spec: Spectrum, cfg: DetectorConfig = DetectorConfig()) -> list[Proposal]:
    """Threshold detector on the PSD relative to its median noise floor.

    Runs of bins above the threshold are bridged across short gaps, split
    at deep valleys (adjacent signals), and reported as bands spanning the
    run around its power-weighted centroid.
    """
    floor = noise_floor(spec)
    if floor <= 0:
        return []
    mask = spec.psd > floor * 10 ** (cfg.threshold_db / 10)
    merged: list[list[int]] = []
    for start, stop in _runs(mask):
        if merged and start - merged[-1][1] < cfg.merge_gap_bins:
            merged[-1][1] = stop
        else:
            merged.append([start, stop])
    excess_db = 10 * np.log10(np.maximum(spec.psd, np.finfo(float).tiny) / floor)
    pieces: list[tuple[float, float]] = []
    for start, stop in merged:
        if cfg.valley_split_db is None:
            pieces.append((float(start), float(stop)))
        else:
            pieces.extend(_split_valleys(excess_db, float(start), float(stop), cfg.valley_split_db))
    out = []
    for lo, hi in pieces:
        if hi - lo < cfg.min_run_bins:
            continue
        a, b = int(lo), int(np.ceil(hi))
        p = spec.psd[a:b]
        center = float(np.sum(p * spec.freqs[a:b]) / np.sum(p))
        low = max(spec.freqs[0] + (lo - 0.5) * spec.bin_hz, -spec.fs / 2)
        high = min(spec.freqs[0] + (hi - 0.5) * spec.bin_hz, spec.fs / 2)
        width = high - low
        # Band = centroid +- half the run extent, nudged back inside Nyquist.
        center = min(max(center, -spec.fs / 2 + width / 2), spec.fs / 2 - width / 2)
        conf = float(np.clip(np.mean(excess_db[a:b]) / 30.0, 0.0, 1.0))
        out.append(Proposal(center, width, conf))
    return out


def _inside(center: float, width: float, fs: float) -> bool:
    return center - width / 2 >= -fs / 2 and center + width / 2 <= fs / 2


def template_scores(excess: np.ndarray, width_bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Cosine similarity and mean level of a centered rectangular template.

    The template is ``width_bins`` ones (unit energy after scaling) inside a
    window of twice that width, so it rewards bands that are flat inside and
    empty on both shoulders. ``excess`` is the non-negative floor-relative
    spectrum in dB. Position ``i`` scores the band starting at bin ``i``.
    """
    nb = int(width_bins)
    side = (nb + 1) // 2
    padded = np.concatenate([np.zeros(side), excess, np.zeros(side)])
    csum = np.concatenate([[0.0], np.cumsum(padded)])
    csq = np.concatenate([[0.0], np.cumsum(padded**2)])
    starts = np.arange(excess.size - nb + 1)
    inner = csum[starts + side + nb] - csum[starts + side]
    outer_sq = csq[starts + 2 * side + nb] - csq[starts]
    norm = np.sqrt(nb * outer_sq)
    with np.errstate(invalid="ignore", divide="ignore"):
        score = np.where(norm > 0, inner / norm, 0.0)
    return np.clip(score, 0.0, 1.0), inner / nb


def detect_matched_filter(spec: Spectrum, cfg: DetectorConfig = DetectorConfig()) -> list[Proposal]:
    """Rectangular spectral-template detector followed by NMS.

    Candidates are local maxima of the template correlation whose mean
    in-band level clears ``threshold_db`` and whose score reaches
    ``mf_min_score``; confidence is the score. The correlation runs on the
    level capped at ``mf_saturation_db``.
    """
    if not cfg.mf_bandwidths:
        raise DetectError("matched filter needs at least one template bandwidth")
    floor = noise_floor(spec)
    if floor <= 0:
        return []
    excess = np.maximum(10 * np.log10(np.maximum(spec.psd, np.finfo(float).tiny) / floor), 0.0)
    capped = excess if cfg.mf_saturation_db is None else np.minimum(excess, cfg.mf_saturation_db)
    candidates = []
    for bw in cfg.mf_bandwidths:
        nb = max(int(round(bw / spec.bin_hz)), 1)
        if nb > spec.n_bins:
            continue
        score, _ = template_scores(capped, nb)
        _, level = template_scores(excess, nb)
        gated = np.where(level >= cfg.threshold_db, score, 0.0)
        left = np.concatenate([[-1.0], gated[:-1]])
        right = np.concatenate([gated[1:], [-1.0]])
        peaks = np.flatnonzero((gated >= left) & (gated > right) & (gated >= cfg.mf_min_score)
                               & (gated > 0))
        for i in peaks:
            center = float(spec.freqs[0] + (i + (nb - 1) / 2) * spec.bin_hz)
            if _inside(center, bw, spec.fs):
                candidates.append(Proposal(center, float(bw), float(gated[i])))
    return nms(candidates, cfg.nms_iou)


def detect(iq, fs: float, cfg: DetectorConfig = DetectorConfig()) -> list[Proposal]:
    """Estimate the spectrum of one capture and run the configured detector."""
    spec = welch_psd(iq, fs, cfg.segment, cfg.hop)
    if cfg.method is DetectorMethod.ENERGY:
        return detect_energy(spec, cfg)
    return detect_matched_filter(spec, cfg)
