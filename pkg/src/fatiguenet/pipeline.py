"""Recording -> time-frequency sample conversion.

Per subject: bandpass and notch the raw sEMG, estimate the per-channel MVC
from the RMS envelope over all of the subject's trials, normalize, align
with the IMU at 500 Hz, segment, and turn every holding phase into a
multichannel scalogram image.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .dsp import (
    FilterSpec, WaveletSpec, cwt_image, iir_filter, mvc_estimate, normalize_by_mvc, sliding_rms,
)
from .errors import InvalidConfigError
from .segmentation import (
    SegmenterParams, align_streams, borg_to_label, extract_holding, segment_phases,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DSPConfig:
    bandpass_low_hz: float = 20.0
    bandpass_high_hz: float = 400.0
    bandpass_order: int = 4
    notch_hz: float = 50.0
    notch_q: float = 30.0
    imu_cutoff_hz: float = 8.0
    rms_window: int = 100
    rms_stride: int = 50
    aligned_rate: float = 500.0
    n_scales: int = 64
    n_time: int = 64
    f_min: float = 20.0
    f_max: float = 240.0     # below the 250 Hz Nyquist of the aligned stream
    wavelet_bandwidth: float = 1.5
    wavelet_center: float = 1.0
    min_hold_s: float = 0.1

    def __post_init__(self):
        if not 0 < self.bandpass_low_hz < self.bandpass_high_hz:
            raise InvalidConfigError("need 0 < bandpass_low_hz < bandpass_high_hz")
        if self.rms_window < 1 or self.rms_stride < 1:
            raise InvalidConfigError("rms_window and rms_stride must be >= 1")
        if self.n_scales < 2 or self.n_time < 2:
            raise InvalidConfigError("image dimensions must be >= 2")
        if not 0 < self.f_min < self.f_max < self.aligned_rate / 2:
            raise InvalidConfigError("need 0 < f_min < f_max < aligned_rate / 2")
        if self.wavelet_bandwidth <= 0 or self.wavelet_center <= 0:
            raise InvalidConfigError("wavelet parameters must be > 0")


@dataclass
class SampleSet:
    """Stacked images with per-image labels."""

    images: np.ndarray        # (n, C, H, W) float32
    fatigue: np.ndarray       # (n,) int
    subject: np.ndarray       # (n,) int
    borg: np.ndarray          # (n,) int
    trial: np.ndarray         # (n,) int
    freq_axis: np.ndarray
    time_axis: np.ndarray

    def __len__(self):
        return self.images.shape[0]

    def subset(self, mask):
        return SampleSet(self.images[mask], self.fatigue[mask], self.subject[mask],
                         self.borg[mask], self.trial[mask], self.freq_axis, self.time_axis)

    @staticmethod
    def concat(parts):
        parts = [p for p in parts if len(p)]
        if not parts:
            raise InvalidConfigError("no samples to concatenate")
        cat = lambda name: np.concatenate([getattr(p, name) for p in parts])  # noqa: E731
        return SampleSet(cat("images"), cat("fatigue"), cat("subject"), cat("borg"),
                         cat("trial"), parts[0].freq_axis, parts[0].time_axis)

    def labels(self):
        return {"fatigue": self.fatigue, "subject": self.subject, "borg": self.borg,
                "trial": self.trial}


def condition_semg(semg, cfg: DSPConfig):
    bp = FilterSpec("bandpass", cfg.bandpass_order, cfg.bandpass_low_hz, cfg.bandpass_high_hz)
    notch = FilterSpec("notch", 2, cfg.notch_hz, q=cfg.notch_q)
    return iir_filter(iir_filter(semg, bp), notch)


def subject_mvc(filtered, cfg: DSPConfig):
    """95th percentile of the RMS envelope pooled over all of a subject's trials."""
    envs = [sliding_rms(s, cfg.rms_window, cfg.rms_stride) for s in filtered]
    pooled = envs[0].replace(np.concatenate([e.data for e in envs], axis=1))
    return mvc_estimate(pooled)


def preprocess_subject(trials, cfg: DSPConfig = DSPConfig(), report=None) -> SampleSet:
    """Images for one subject's trials. Boundary Borg scores are excluded.

    ``report``, when given, is a list that receives ``(trial_name, segments)``
    pairs for the segmentation report.
    """
    filtered = [condition_semg(tr.semg, cfg) for tr in trials]
    mvc = subject_mvc(filtered, cfg)
    wavelet = WaveletSpec(cfg.wavelet_bandwidth, cfg.wavelet_center)
    params = SegmenterParams()
    imgs, fat, subj, borg, tid = [], [], [], [], []
    freq_axis = time_axis = None
    for tr, sig in zip(trials, filtered):
        semg, imu = align_streams(normalize_by_mvc(sig, mvc), tr.imu, cfg.aligned_rate,
                                  cfg.imu_cutoff_hz)
        segments = segment_phases(imu, params)
        if report is not None:
            report.append((f"s{tr.subject_id:02d}_b{tr.borg:02d}_t{tr.trial_id}", segments))
        label = borg_to_label(tr.borg)
        if label is None:
            continue
        for hold in extract_holding(semg, segments, cfg.min_hold_s):
            img = cwt_image(hold, wavelet, cfg.n_scales, cfg.n_time, cfg.f_min, cfg.f_max)
            freq_axis, time_axis = img.freq_axis, img.time_axis
            imgs.append(img.values.astype(np.float32))
            fat.append(int(label))
            subj.append(tr.subject_id)
            borg.append(tr.borg)
            tid.append(tr.trial_id)
    if not imgs:
        c = trials[0].semg.data.shape[0] if trials else 6
        empty = np.zeros((0, c, cfg.n_scales, cfg.n_time), np.float32)
        z = np.zeros(0, int)
        return SampleSet(empty, z, z, z, z, np.zeros(cfg.n_scales), np.zeros(cfg.n_time))
    return SampleSet(np.stack(imgs), np.array(fat), np.array(subj), np.array(borg),
                     np.array(tid), freq_axis, time_axis)


def build_samples(subjects, cfg: DSPConfig = DSPConfig(), report=None) -> SampleSet:
    """``subjects`` yields objects with a ``trials`` list (see :func:`synthgen.iter_subjects`)."""
    return SampleSet.concat([preprocess_subject(s.trials, cfg, report) for s in subjects])
