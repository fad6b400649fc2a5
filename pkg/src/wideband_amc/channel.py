"""Fading, clock-offset and noise impairments for transmitted signals.

Array arguments may carry leading batch axes; time runs along the last axis.
"""

from __future__ import annotations

import enum
import functools
import logging
import math
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

#: Sinusoids per fading tap in the sum-of-sinusoids generator.
NUM_SINUSOIDS = 16
#: Half-width (in samples) of the fractional-delay interpolator (order 8).
DELAY_HALF_WIDTH = 4
#: Half-width of the clock-offset resampling interpolator (also order 8).
RESAMPLE_HALF_WIDTH = 4
#: Polynomial degree of the Farrow interpolator.
FARROW_DEGREE = 12

TABLE_PATH_DELAYS = (0.0, 1.8e-7, 3.4e-7)
TABLE_PATH_GAINS_DB = (0.0, -2.0, -10.0)


class ChannelError(ValueError):
    pass


class ChannelKind(str, enum.Enum):
    AWGN_ONLY = "AWGN_ONLY"
    RAYLEIGH = "RAYLEIGH"
    RICIAN = "RICIAN"


@dataclass(frozen=True)
class ChannelSpec:
    kind: ChannelKind = ChannelKind.AWGN_ONLY
    path_delays: tuple[float, ...] = (0.0,)
    path_gains: tuple[float, ...] = (0.0,)  # dB
    k_factor: float = 0.0
    max_doppler: float = 0.0
    clock_offset_ppm: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ChannelKind(self.kind))
        object.__setattr__(self, "path_delays", tuple(float(d) for d in self.path_delays))
        object.__setattr__(self, "path_gains", tuple(float(g) for g in self.path_gains))
        if len(self.path_delays) != len(self.path_gains) or not self.path_delays:
            raise ChannelError("path_delays and path_gains must have equal nonzero length")
        d = np.asarray(self.path_delays)
        if d[0] < 0 or np.any(np.diff(d) <= 0):
            raise ChannelError("path delays must be non-negative and strictly increasing")
        if self.k_factor < 0 or self.max_doppler < 0 or self.clock_offset_ppm < 0:
            raise ChannelError("k_factor, max_doppler and clock_offset_ppm must be >= 0")


@dataclass(frozen=True)
class NoiseSpec:
    noise_power: float = 1.0

    def __post_init__(self):
        if self.noise_power < 0:
            raise ChannelError("noise_power must be >= 0")

    @property
    def noiseless(self) -> bool:
        return self.noise_power == 0


def phasor(phase: np.ndarray) -> np.ndarray:
    """``exp(1j * phase)`` for real ``phase``, via real cos/sin (about twice as fast)."""
    phase = np.asarray(phase, dtype=float)
    out = np.empty(phase.shape, dtype=complex)
    np.cos(phase, out=out.real)
    np.sin(phase, out=out.imag)
    return out


# -- band-limited interpolation ------------------------------------------------


def _windowed_sinc(u: np.ndarray, half_width: int) -> np.ndarray:
    span = half_width + 1
    w = 0.42 + 0.5 * np.cos(np.pi * u / span) + 0.08 * np.cos(2 * np.pi * u / span)
    return np.where(np.abs(u) <= span, np.sinc(u) * w, 0.0)


@functools.lru_cache(maxsize=None)
def _farrow_coefficients(half_width: int, degree: int = FARROW_DEGREE) -> np.ndarray:
    """Polynomial-in-offset approximation of the interpolation kernel.

    Row ``p`` holds the coefficient of ``frac**p`` for each tap
    ``k = -half_width..half_width``. The constant row is the exact kernel at
    ``frac = 0`` (a unit impulse), so integer times are reproduced exactly.
    """
    k = np.arange(-half_width, half_width + 1)
    nodes = 0.5 * np.cos(np.linspace(0, np.pi, 8 * (degree + 1)))
    exact0 = (k == 0).astype(float)
    target = _windowed_sinc(nodes[:, None] - k[None, :], half_width) - exact0
    basis = np.vander(nodes, degree + 1, increasing=True)[:, 1:]
    coef, *_ = np.linalg.lstsq(basis, target, rcond=None)
    out = np.vstack([exact0, coef])
    out.setflags(write=False)
    return out


def _top_degree(coef: np.ndarray, reach: np.ndarray) -> np.ndarray:
    """Per row, the highest polynomial term above 1e-14 for offsets up to ``reach``.

    The fitted kernel is only good to about 1e-11, so smaller terms are noise.
    """
    scale = np.max(np.abs(coef), axis=1) * reach[..., None] ** np.arange(coef.shape[0])
    live = scale > 1e-14
    return np.where(live.any(axis=-1), coef.shape[0] - 1 - np.argmax(live[..., ::-1], axis=-1), 0)


def _fir_planes(segs: np.ndarray, starts: np.ndarray, count: int, kernels: np.ndarray) -> np.ndarray:
    """``y[r, q, :, i] = sum_k kernels[k, q] * segs[r, starts[r] + i + k]`` as real/imag planes.

    Returns shape ``(R, Q, 2, count)``. Each row's shifted copies are packed
    into one real matrix, and the rows go through a stacked matrix product,
    so every row is computed exactly as it would be alone.
    """
    width = kernels.shape[0]
    rows, length = segs.shape
    ri = np.empty((rows, 2, length))
    ri[:, 0] = segs.real
    ri[:, 1] = segs.imag
    sr, sc, step = ri.strides
    starts = np.asarray(starts, dtype=np.int64)
    packed = np.empty((rows, width, 2, count))
    if np.all(starts == starts[0]):
        groups = [(slice(None), int(starts[0]))]
    else:
        groups = [(r, int(starts[r])) for r in range(rows)]
    for sel, start in groups:
        src = ri[sel, :, start:]
        shape = (width, 2, count) if src.ndim == 2 else (src.shape[0], width, 2, count)
        strides = (step, sc, step) if src.ndim == 2 else (sr, step, sc, step)
        packed[sel] = np.lib.stride_tricks.as_strided(src, shape, strides, writeable=False)
    packed = packed.reshape(rows, width, 2 * count)
    return (np.ascontiguousarray(kernels.T) @ packed).reshape(rows, -1, 2, count)


def _complex(planes: np.ndarray) -> np.ndarray:
    """Join ``(..., 2, n)`` real/imag planes into a complex ``(..., n)`` array."""
    out = np.empty(planes.shape[:-2] + planes.shape[-1:], dtype=complex)
    out.real = planes[..., 0, :]
    out.imag = planes[..., 1, :]
    return out


def sinc_interpolate(x: np.ndarray, t: np.ndarray, half_width: int) -> np.ndarray:
    """Band-limited interpolation of ``x`` at fractional sample times ``t``.

    Blackman-windowed sinc over ``2 * half_width + 1`` neighbours, realized
    as a Farrow structure (kernel error below 1e-10); samples outside ``x``
    count as zero. Integer ``t`` reproduces ``x`` exactly. Leading axes of
    ``x`` and ``t`` broadcast; each row is processed independently.
    """
    x = np.asarray(x, dtype=complex)
    t = np.asarray(t, dtype=float)
    lead = np.broadcast_shapes(x.shape[:-1], t.shape[:-1])
    x = np.broadcast_to(x, lead + x.shape[-1:]).reshape(-1, x.shape[-1])
    t = np.broadcast_to(t, lead + t.shape[-1:]).reshape(-1, t.shape[-1])
    out = np.zeros(t.shape, dtype=complex)
    if t.shape[-1] == 0 or t.shape[0] == 0:
        return out.reshape(lead + t.shape[-1:])
    coef = _farrow_coefficients(half_width)
    width = 2 * half_width + 1
    n, count = x.shape[-1], t.shape[-1]
    base = np.rint(t)
    frac = t - base
    base = base.astype(np.int64)
    lo = min(int(base.min()) - half_width, 0)
    hi = max(int(base.max()) + half_width + 1, n)
    segs = np.zeros((x.shape[0], hi - lo), dtype=complex)
    segs[:, -lo : n - lo] = x
    start = base - lo - half_width
    degree = _top_degree(coef, np.max(np.abs(frac), axis=-1))
    steady = np.all(start == start[:, :1] + np.arange(count), axis=-1)
    for d in np.unique(degree):
        kernels = coef[: d + 1].T
        for fast in (True, False):
            rows = np.flatnonzero((degree == d) & (steady == fast))
            if not rows.size:
                continue
            if fast:
                branch = _fir_planes(segs[rows], start[rows, 0], count, kernels)
            else:
                win = segs[rows[:, None, None], start[rows][:, :, None] + np.arange(width)]
                branch = np.stack([(win.real @ kernels).transpose(0, 2, 1),
                                   (win.imag @ kernels).transpose(0, 2, 1)], axis=2)
            f = frac[rows][:, None, :]
            y = branch[:, d].copy()
            for p in range(d - 1, -1, -1):
                y *= f
                y += branch[:, p]
            out[rows] = _complex(y)
    return out.reshape(lead + t.shape[-1:])


def fractional_delay_taps(delay_samples: float, half_width: int = DELAY_HALF_WIDTH) -> np.ndarray:
    """FIR taps ``h[k]``, ``k = -half_width..half_width``, for a delay of at most half a sample."""
    k = np.arange(-half_width, half_width + 1)
    return _windowed_sinc(k - delay_samples, half_width)


def fractional_delay(x: np.ndarray, delay_samples: float) -> np.ndarray:
    """Delay along the last axis by a possibly fractional number of samples.

    Samples outside ``x`` count as zero, so ``y[n] = sum_k h[k] x[n - k]``
    exactly for every output sample.
    """
    x = np.asarray(x, dtype=complex)
    whole = int(np.rint(delay_samples))
    frac = delay_samples - whole
    h = np.ones(1) if frac == 0 else fractional_delay_taps(frac)
    hw = (h.size - 1) // 2
    n = x.shape[-1]
    full = np.apply_along_axis(np.convolve, -1, x, h) if x.size else np.zeros(x.shape[:-1] + (n + 2 * hw,), complex)
    idx = np.arange(n) - whole + hw
    ok = (idx >= 0) & (idx < full.shape[-1])
    y = np.zeros(x.shape, dtype=complex)
    y[..., ok] = full[..., idx[ok]]
    return y


# -- fading --------------------------------------------------------------------


_FACTORIALS = np.array([math.factorial(p) for p in range(40)], dtype=float)


@functools.lru_cache(maxsize=16)
def _vandermonde(n: int, order: int) -> np.ndarray:
    v = np.vander(np.arange(n, dtype=float), order + 1, increasing=True)
    v.setflags(write=False)
    return v


def _series_order(reach: float) -> int:
    """Power-series order whose next term falls below 1e-17, rounded up to a
    multiple of 8 so that rows of similar reach share one batch."""
    order, term = 1, reach
    while term > 1e-17:
        order += 1
        term *= reach / order
    return -(-order // 8) * 8


def _sinusoid_bank(amps: np.ndarray, omega: np.ndarray, n: int) -> np.ndarray:
    """``sum_m amps[..., m] * exp(1j * omega[..., m] * arange(n))`` along a new last axis.

    Rows whose phase advance over the block stays below 4 rad use a power
    series in ``n`` (exact to rounding); the rest use a running product.
    Every row is computed exactly as it would be on its own.
    """
    amps = np.asarray(amps, dtype=complex)
    omega = np.asarray(omega, dtype=float)
    lead, m = amps.shape[:-1], amps.shape[-1]
    a = amps.reshape(-1, m)
    w = omega.reshape(-1, m)
    out = np.empty((a.shape[0], n), dtype=complex)
    reach = np.max(np.abs(w), axis=-1, initial=0.0) * max(n - 1, 0)
    series = reach <= 4.0
    orders = np.array([_series_order(float(r)) for r in reach]) if series.any() else np.zeros(0, int)
    for order in np.unique(orders[series]) if series.any() else ():
        rows = np.flatnonzero(series & (orders == order))
        powers = np.ones((rows.size, m, order + 1))
        powers[..., 1:] = w[rows][:, :, None]
        np.cumprod(powers, axis=-1, out=powers)
        coef = (a[rows][:, None, :] @ powers)[:, 0]
        # sum_p coef_p (j n)^p / p!, evaluated against real powers of n.
        coef *= 1j ** np.arange(order + 1) / _FACTORIALS[: order + 1]
        pair = np.stack([coef.real, coef.imag], axis=2)
        out[rows] = (_vandermonde(n, int(order)) @ pair).view(complex)[..., 0]
    if not series.all():
        rest = ~series
        rot = np.empty((int(rest.sum()), m, n), dtype=complex)
        rot[..., 0] = a[rest]
        rot[..., 1:] = np.exp(1j * w[rest])[..., None]
        out[rest] = np.cumprod(rot, axis=-1).sum(axis=-2)
    return out.reshape(lead + (n,))


def sos_fading(
    n: int,
    fs: float,
    max_doppler: float,
    rng: np.random.Generator,
    num_sinusoids: int = NUM_SINUSOIDS,
) -> np.ndarray:
    """Unit-power Rayleigh tap process from a sum of random-angle sinusoids.

    ``h[n] = M^-1/2 sum_m exp(j (2 pi fd cos(a_m) n / fs + phi_m))``, which
    approaches the Jakes Doppler spectrum as ``M`` grows.
    """
    angles = rng.uniform(0, 2 * np.pi, num_sinusoids)
    amps = np.exp(1j * rng.uniform(0, 2 * np.pi, num_sinusoids)) / np.sqrt(num_sinusoids)
    return _sinusoid_bank(amps, 2 * np.pi * max_doppler * np.cos(angles) / fs, n)


def draw_fading(
    spec: ChannelSpec, fs: float, rng: np.random.Generator, num_sinusoids: int = NUM_SINUSOIDS
) -> tuple[np.ndarray, np.ndarray]:
    """Random sinusoid amplitudes and frequencies for every path.

    Returns ``(amps, omega)``, each ``(num_paths, num_sinusoids + 1)``. The
    extra column is the RICIAN line-of-sight phasor, present on the first
    path only. Path powers follow ``path_gains`` normalized to unit sum; on
    the first RICIAN path LoS and diffuse power split by ``k_factor``.
    """
    gains = 10.0 ** (np.asarray(spec.path_gains) / 10.0)
    gains = gains / gains.sum()
    n_paths = gains.size
    angles = rng.uniform(0, 2 * np.pi, (n_paths, num_sinusoids + 1))
    amps = np.exp(1j * rng.uniform(0, 2 * np.pi, (n_paths, num_sinusoids + 1)))
    amps[:, :num_sinusoids] /= np.sqrt(num_sinusoids)
    if spec.kind is ChannelKind.RICIAN:
        k = spec.k_factor
        amps[0, :num_sinusoids] *= np.sqrt(1 / (k + 1))
        amps[0, num_sinusoids] *= np.sqrt(k / (k + 1))
        amps[1:, num_sinusoids] = 0
    else:
        amps[:, num_sinusoids] = 0
    amps *= np.sqrt(gains)[:, None]
    omega = 2 * np.pi * spec.max_doppler * np.cos(angles) / fs
    return amps, omega


def path_taps(n: int, spec: ChannelSpec, fs: float, rng: np.random.Generator) -> np.ndarray:
    """Time-varying complex gain of every path, shape ``(num_paths, n)``."""
    return _sinusoid_bank(*draw_fading(spec, fs, rng), n)


def _delay_kernels(delays_samples) -> tuple[np.ndarray, int]:
    """Stacked delay filters ``g[p, j]`` acting as ``y[n] = sum_j g[p, j] x[n - j - jmin]``."""
    parts = []
    for d in delays_samples:
        whole = int(np.rint(d))
        frac = d - whole
        if frac == 0:
            parts.append((whole, np.ones(1)))
        else:
            hw = DELAY_HALF_WIDTH
            parts.append((whole - hw, fractional_delay_taps(frac, hw)))
    jmin = min(0, *(j for j, _ in parts))
    jmax = max(0, *(j + h.size - 1 for j, h in parts))
    g = np.zeros((len(parts), jmax - jmin + 1))
    for p, (j, h) in enumerate(parts):
        g[p, j - jmin : j - jmin + h.size] = h
    return g, jmin


def multipath_response(
    x: np.ndarray, taps: np.ndarray, delays: tuple[float, ...], fs: float
) -> np.ndarray:
    """``sum_p taps[..., p, :] * delay(x, delays[p])`` with ``x`` of shape ``(..., n)``.

    Rows are processed independently.
    """
    x = np.asarray(x, dtype=complex)
    lead = np.broadcast_shapes(x.shape[:-1], taps.shape[:-2])
    x = np.broadcast_to(x, lead + x.shape[-1:])
    taps = np.broadcast_to(taps, lead + taps.shape[-2:])
    g, jmin = _delay_kernels([d * fs for d in delays])
    width = g.shape[1]
    jmax = jmin + width - 1
    n = x.shape[-1]
    kernel = g[:, ::-1].T  # window column i holds x[n + jmax - i]
    rows = x.reshape(-1, n)
    segs = np.zeros((rows.shape[0], n + width - 1), dtype=complex)
    segs[:, jmax : jmax + n] = rows
    delayed = _complex(_fir_planes(segs, np.zeros(rows.shape[0], int), n, kernel))
    taps = taps.reshape((-1,) + taps.shape[-2:])
    y = taps[:, 0] * delayed[:, 0]
    for p in range(1, len(delays)):
        y += taps[:, p] * delayed[:, p]
    return y.reshape(lead + (n,))


def apply_multipath(
    x: np.ndarray, spec: ChannelSpec, fs: float, rng: np.random.Generator
) -> np.ndarray:
    """Pass ``x`` through a tapped-delay-line fading channel.

    Each path is a fractionally delayed copy of the input scaled by its own
    fading process; total mean tap power is one.
    """
    if spec.kind is ChannelKind.AWGN_ONLY:
        raise ChannelError("apply_multipath called on an AWGN_ONLY channel")
    x = np.asarray(x, dtype=complex)
    taps = path_taps(x.shape[-1], spec, fs, rng)
    return multipath_response(x, taps, spec.path_delays, fs)


# -- clock, SNR, noise ---------------------------------------------------------


def apply_clock_offset(x: np.ndarray, ppm, carrier, fs: float) -> np.ndarray:
    """Carrier-frequency error plus sampling-clock drift of ``ppm`` parts per million.

    The carrier moves by ``carrier * ppm * 1e-6`` Hz and the signal is
    resampled so output sample ``n`` reads input time ``n * (1 + ppm * 1e-6)``,
    keeping the input length. ``ppm`` and ``carrier`` may be arrays matching
    the leading axes of ``x``.
    """
    x = np.asarray(x, dtype=complex)
    ppm = np.asarray(ppm, dtype=float)
    if np.any(ppm < 0):
        raise ChannelError("ppm must be >= 0")
    if not np.any(ppm):
        return x.copy()
    eps = (ppm * 1e-6)[..., None]
    n = np.arange(x.shape[-1])
    carrier = np.asarray(carrier, dtype=float)[..., None]
    shifted = x * phasor(2 * np.pi * carrier * eps * n / fs)
    return sinc_interpolate(shifted, n * (1 + eps), RESAMPLE_HALF_WIDTH)


def snr_scale_factor(
    x: np.ndarray, target_snr: float, noise: NoiseSpec, occupied_bw: float, fs: float
) -> float:
    power = float(np.mean(np.abs(x) ** 2))
    if power == 0:
        raise ChannelError("cannot scale a zero-power signal to an SNR")
    if noise.noiseless:
        log.debug("noiseless mode: SNR scaling skipped")
        return 1.0
    in_band_noise = noise.noise_power * occupied_bw / fs
    return float(np.sqrt(10.0 ** (target_snr / 10.0) * in_band_noise / power))


def scale_to_snr(
    x: np.ndarray, target_snr: float, noise: NoiseSpec, occupied_bw: float, fs: float
) -> np.ndarray:
    """Scale ``x`` so its power over the in-band noise power equals ``target_snr`` dB.

    In-band noise power is ``noise_power * occupied_bw / fs``.
    """
    return np.asarray(x) * snr_scale_factor(x, target_snr, noise, occupied_bw, fs)


def add_awgn(x: np.ndarray, noise: NoiseSpec, rng: np.random.Generator) -> np.ndarray:
    """Add circular complex Gaussian noise of variance ``noise_power``."""
    x = np.asarray(x, dtype=complex)
    if noise.noiseless:
        return x.copy()
    sigma = np.sqrt(noise.noise_power / 2)
    return x + sigma * (rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape))
