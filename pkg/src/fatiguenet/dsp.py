"""Signal conditioning: IIR filters, resampling, RMS envelopes, MVC
normalization and complex-Morlet scalogram images.

Every function is pure: inputs are never modified and a new
:class:`TimeSeries` (or :class:`TFImage`) is returned.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import fft as sfft
from scipy import signal as ss

from .errors import (
    DegenerateChannelError, EmptyInputError, InsufficientDataError, InvalidSpecError, ShapeError,
)
from .fileio import atomic_open

log = logging.getLogger(__name__)

CHANNELS = ("MG", "LG", "SO", "AT", "TA", "PL")


@dataclass(frozen=True)
class TimeSeries:
    """Uniformly sampled multichannel signal, ``data`` shaped (channels, samples)."""

    data: np.ndarray
    rate: float
    channel_names: tuple = ()

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 1:
            data = data[None, :]
        if data.ndim != 2:
            raise ShapeError(f"time series data must be 2-D (channels, samples), got {data.shape}")
        if not self.rate > 0:
            raise InvalidSpecError(f"sampling rate must be > 0, got {self.rate}")
        names = tuple(self.channel_names) or tuple(f"ch{i}" for i in range(data.shape[0]))
        if len(names) != data.shape[0]:
            raise ShapeError(f"{len(names)} channel names for {data.shape[0]} channels")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "channel_names", names)

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.rate

    def replace(self, data, rate=None):
        return TimeSeries(data, self.rate if rate is None else rate, self.channel_names)

    def slice(self, start, end):
        return self.replace(self.data[:, start:end])


@dataclass(frozen=True)
class FilterSpec:
    """Butterworth band/low-pass or notch design.

    For ``notch`` the centre frequency is ``corner_low_hz`` and ``q`` is the
    quality factor.
    """

    kind: str
    order: int = 4
    corner_low_hz: float = 20.0
    corner_high_hz: float | None = None
    q: float = 30.0

    def __post_init__(self):
        if self.kind not in ("bandpass", "lowpass", "notch"):
            raise InvalidSpecError(f"unknown filter kind {self.kind!r}")
        if self.order < 1:
            raise InvalidSpecError("filter order must be >= 1")
        if self.kind == "bandpass" and self.corner_high_hz is None:
            raise InvalidSpecError("bandpass needs corner_high_hz")
        if self.kind == "notch" and self.q <= 0:
            raise InvalidSpecError("notch quality factor must be > 0")

    def corners(self):
        if self.kind == "bandpass":
            return (self.corner_low_hz, self.corner_high_hz)
        return (self.corner_low_hz,)


@dataclass(frozen=True)
class WaveletSpec:
    bandwidth: float = 1.5
    center_frequency: float = 1.0

    def __post_init__(self):
        if self.bandwidth <= 0 or self.center_frequency <= 0:
            raise InvalidSpecError("wavelet bandwidth and centre frequency must be > 0")

    @property
    def peak_ratio(self) -> float:
        """``a * f`` at which a unit sine of frequency ``f`` peaks over scale ``a``.

        With the ``1/sqrt(a)`` normalization the response is
        ``sqrt(a) * exp(-pi^2 B (a f - C)^2)``; setting its log-derivative
        to zero gives this root.
        """
        b, c = self.bandwidth, self.center_frequency
        return 0.5 * (c + math.sqrt(c * c + 1.0 / (math.pi ** 2 * b)))


@dataclass(frozen=True)
class TFImage:
    values: np.ndarray               # (channels, n_freq, n_time), in [0, 1]
    freq_axis: np.ndarray = field(repr=False)   # Hz, descending
    time_axis: np.ndarray = field(repr=False)   # normalized, in [0, 1]


# --- filtering ---------------------------------------------------------------

def design_sos(spec: FilterSpec, rate: float):
    nyq = rate / 2
    for c in spec.corners():
        if not 0 < c < nyq:
            raise InvalidSpecError(f"corner {c} Hz outside (0, {nyq}) for rate {rate} Hz")
    if spec.kind == "bandpass" and spec.corner_low_hz >= spec.corner_high_hz:
        raise InvalidSpecError("bandpass corners must satisfy low < high")
    if spec.kind == "notch":
        b, a = ss.iirnotch(spec.corner_low_hz, spec.q, fs=rate)
        return ss.tf2sos(b, a)
    wn = spec.corners() if spec.kind == "bandpass" else spec.corner_low_hz
    return ss.butter(spec.order, wn, btype=spec.kind, fs=rate, output="sos")


def _zero_phase(sos, x):
    # reflect-pad 3x the digital filter order, zero initial state, forward then backward
    order = 2 * sos.shape[0]
    pad = min(3 * order, x.shape[-1] - 1)
    xp = np.pad(x, ((0, 0), (pad, pad)), mode="reflect") if pad > 0 else x
    y = ss.sosfilt(sos, xp, axis=-1)
    y = ss.sosfilt(sos, y[:, ::-1], axis=-1)[:, ::-1]
    return np.ascontiguousarray(y[:, pad:y.shape[1] - pad])


def iir_filter(sig: TimeSeries, spec: FilterSpec) -> TimeSeries:
    """Zero-phase (forward-backward) application of the designed filter."""
    if sig.n_samples == 0:
        raise EmptyInputError("cannot filter an empty signal")
    sos = design_sos(spec, sig.rate)
    return sig.replace(_zero_phase(sos, sig.data))


def single_pass_gain_db(spec: FilterSpec, rate: float, freq: float) -> float:
    """Magnitude response of one pass of the designed filter at ``freq``."""
    _, h = ss.sosfreqz(design_sos(spec, rate), worN=[freq], fs=rate)
    return float(20 * np.log10(np.abs(h[0])))


# --- resampling / envelopes ------------------------------------------------------

def resample(sig: TimeSeries, to_rate: float) -> TimeSeries:
    """Polyphase resampling; output length is ``round(n * to_rate / rate)``."""
    if not to_rate > 0:
        raise InvalidSpecError(f"target rate must be > 0, got {to_rate}")
    if sig.n_samples == 0:
        raise EmptyInputError("cannot resample an empty signal")
    target = int(round(sig.n_samples * to_rate / sig.rate))
    ratio = Fraction(to_rate / sig.rate).limit_denominator(10_000)
    if ratio == 1:
        y = sig.data.copy()
    else:
        y = ss.resample_poly(sig.data, ratio.numerator, ratio.denominator, axis=-1,
                             padtype="line")
    if y.shape[1] >= target:
        y = y[:, :target]
    else:
        y = np.pad(y, ((0, 0), (0, target - y.shape[1])), mode="edge")
    return sig.replace(y, float(to_rate))


def sliding_rms(sig: TimeSeries, window: int = 100, stride: int = 50) -> TimeSeries:
    if window < 1 or stride < 1:
        raise InvalidSpecError("window and stride must be >= 1")
    if sig.n_samples < window:
        raise InsufficientDataError(f"{sig.n_samples} samples < RMS window {window}")
    win = np.lib.stride_tricks.sliding_window_view(sig.data * sig.data, window, axis=1)
    rms = np.sqrt(win[:, ::stride].mean(axis=-1))
    return sig.replace(rms, sig.rate / stride)


def mvc_estimate(rms: TimeSeries) -> np.ndarray:
    """Nearest-rank 95th percentile of each channel's RMS envelope.

    A zero entry marks a degenerate (all-zero) channel.
    """
    if rms.n_samples == 0:
        raise EmptyInputError("MVC needs at least one RMS value")
    ordered = np.sort(rms.data, axis=1)
    rank = math.ceil(0.95 * rms.n_samples)
    mvc = ordered[:, rank - 1]
    for name in np.asarray(rms.channel_names)[mvc <= 0]:
        log.warning("channel %s has zero MVC (degenerate)", name)
    return mvc


def normalize_by_mvc(sig: TimeSeries, mvc) -> TimeSeries:
    mvc = np.asarray(mvc, dtype=np.float64).reshape(-1)
    if mvc.shape[0] != sig.data.shape[0]:
        raise ShapeError(f"{mvc.shape[0]} MVC values for {sig.data.shape[0]} channels")
    bad = np.flatnonzero(~(mvc > 0))
    if bad.size:
        names = ", ".join(sig.channel_names[i] for i in bad)
        raise DegenerateChannelError(f"non-positive MVC for channel(s) {names}")
    return sig.replace(sig.data / mvc[:, None])


# --- time-frequency images ---------------------------------------------------------

def scale_frequencies(n_scales, f_min, f_max):
    """Log-spaced equivalent frequencies, descending (row 0 is ``f_max``)."""
    return np.geomspace(f_max, f_min, n_scales)


def _bin_time(mag, n_time):
    n = mag.shape[-1]
    if n >= n_time:
        edges = np.round(np.linspace(0, n, n_time + 1)).astype(int)
        sums = np.add.reduceat(mag, edges[:-1], axis=-1)
        return sums / np.diff(edges)
    pos = (np.arange(n_time) + 0.5) * n / n_time - 0.5
    flat = mag.reshape(-1, n)
    out = np.stack([np.interp(pos, np.arange(n), row) for row in flat])
    return out.reshape(mag.shape[:-1] + (n_time,))


def cwt_magnitude(x, rate, freqs, wavelet: WaveletSpec = WaveletSpec()):
    """``|W(a, b)|`` for each row of ``x`` (..., n) at the given equivalent frequencies.

    The transform is evaluated in the frequency domain, where the complex
    Morlet wavelet ``exp(-t^2/B) exp(2j pi C t) / sqrt(pi B)`` has the real
    transform ``exp(-pi^2 B (f - C)^2)``. Scales are in seconds.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    nfft = sfft.next_fast_len(2 * n)
    spec = sfft.fft(x, nfft, axis=-1)
    f = sfft.fftfreq(nfft, d=1.0 / rate)
    scales = wavelet.peak_ratio / np.asarray(freqs)
    b, c = wavelet.bandwidth, wavelet.center_frequency
    psi_hat = np.exp(-(math.pi ** 2) * b * (scales[:, None] * f[None, :] - c) ** 2)
    # 1/sqrt(a) normalization combined with the a from the dilation theorem
    psi_hat *= np.sqrt(scales)[:, None]
    w = sfft.ifft(spec[..., None, :] * psi_hat, axis=-1)[..., :n]
    return np.abs(w)


def cwt_image(sig: TimeSeries, wavelet: WaveletSpec = WaveletSpec(), n_scales=64, n_time=64,
              f_min=20.0, f_max=400.0) -> TFImage:
    """Per-channel complex-Morlet scalogram, binned to ``n_time`` columns and
    max-normalized to [0, 1] (an all-zero channel stays zero)."""
    if sig.n_samples < 8:
        raise InsufficientDataError(f"CWT needs at least 8 samples, got {sig.n_samples}")
    if not f_max < sig.rate / 2:
        raise InvalidSpecError(f"f_max {f_max} Hz must be below Nyquist ({sig.rate / 2} Hz)")
    if not 0 < f_min < f_max:
        raise InvalidSpecError("need 0 < f_min < f_max")
    freqs = scale_frequencies(n_scales, f_min, f_max)
    img = _bin_time(cwt_magnitude(sig.data, sig.rate, freqs, wavelet), n_time)
    peak = img.max(axis=(1, 2), keepdims=True)
    img = np.divide(img, peak, out=np.zeros_like(img), where=peak > 0)
    time_axis = (np.arange(n_time) + 0.5) / n_time
    return TFImage(img, freqs, time_axis)


# --- CSV recordings ------------------------------------------------------------------

def write_csv(path, sig: TimeSeries, t0: float = 0.0):
    """Header ``t,<channels...>``; time in seconds."""
    t = t0 + np.arange(sig.n_samples) / sig.rate
    table = np.column_stack([t, sig.data.T])
    with atomic_open(path, "w", newline="") as fh:
        fh.write(",".join(("t",) + sig.channel_names) + "\n")
        np.savetxt(fh, table, delimiter=",", fmt="%.9g")


def read_csv(path) -> TimeSeries:
    with open(path, newline="") as fh:
        header = next(csv.reader(fh))
        if not header or header[0].strip() != "t":
            raise ShapeError(f"{path}: first column must be 't'")
        table = np.loadtxt(fh, delimiter=",", ndmin=2)
    if table.shape[0] < 2:
        raise EmptyInputError(f"{path}: need at least two samples")
    t = table[:, 0]
    rate = (len(t) - 1) / (t[-1] - t[0])
    rate = round(rate, 6)
    if not np.all(np.isfinite(table)):
        raise ShapeError(f"{path}: non-finite values")
    return TimeSeries(table[:, 1:].T.copy(), rate, tuple(h.strip() for h in header[1:]))
