"""Synthetic multi-subject calf-raise recordings and image augmentation.

Signal model
------------
IMU: five trapezoidal raises, one per 2 s repetition after a 2 s preparation
period. Each raise starts shortly after the 0.5 s cue and is lowered shortly
after the 1.5 s cue. Gaussian noise is added.

sEMG, per channel: Gaussian noise whose spectrum is a bump centred at
``mdf(borg) = baseline_mdf * (1 - fatigue_slope * borg)``. It is gated on
during the motion and scaled by ``gain * (1 + amp_slope * borg)``. On top
come a white noise floor, 50 Hz hum and a slow baseline wander. During each
hold the noise is time-warped so that its instantaneous centre frequency
falls linearly across the hold, by ``drift_slope * borg`` of ``mdf(borg)``
in total. The mean over the hold stays at ``mdf(borg)``. This within-hold
decline is a subject-invariant fatigue marker, whereas the absolute MDF
level is confounded by the per-subject baseline.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dsp import CHANNELS, TFImage, TimeSeries
from .errors import InvalidConfigError, InvalidLabelError
from .segmentation import Trial

SEMG_RATE = 2000.0
IMU_RATE = 100.0
TRIAL_S = 14.0
PREP_S = 2.0
REP_S = 2.0
N_REPS = 5
RAISE_CUE_S = 0.5
LOWER_CUE_S = 1.5


@dataclass(frozen=True)
class SubjectProfile:
    gains: tuple
    baseline_mdf: float
    fatigue_slope: float
    amp_slope: float
    drift_slope: float
    noise_floor: float
    angle_amplitude: float
    seed: int

    def mdf(self, borg) -> float:
        return self.baseline_mdf * (1.0 - self.fatigue_slope * borg)


@dataclass(frozen=True)
class SynthConfig:
    n_subjects: int = 12
    trials_per_borg: int = 3
    borg_sequence: tuple = tuple(range(11))
    rng_seed: int = 0
    imu_noise: float = 0.01          # fraction of the angle range
    bump_width: float = 0.3          # spectral bump std, fraction of mdf

    def __post_init__(self):
        if self.n_subjects < 4:
            raise InvalidConfigError("synthetic cohort needs at least 4 subjects")
        if self.trials_per_borg < 1:
            raise InvalidConfigError("trials_per_borg must be >= 1")
        if not self.borg_sequence or any(not 0 <= b <= 10 for b in self.borg_sequence):
            raise InvalidConfigError("borg_sequence values must lie in [0, 10]")
        if not 0 <= self.imu_noise < 0.5:
            raise InvalidConfigError("imu_noise must lie in [0, 0.5)")
        if not 0 < self.bump_width < 1:
            raise InvalidConfigError("bump_width must lie in (0, 1)")


def gen_subject(seed: int) -> SubjectProfile:
    rng = np.random.default_rng(seed)
    return SubjectProfile(
        gains=tuple(float(g) for g in np.exp(rng.uniform(np.log(0.5), np.log(2.0), len(CHANNELS)))),
        baseline_mdf=float(rng.uniform(90.0, 140.0)),
        fatigue_slope=float(rng.uniform(0.02, 0.05)),
        amp_slope=float(rng.uniform(0.02, 0.06)),
        drift_slope=float(rng.uniform(0.04, 0.05)),
        noise_floor=float(rng.uniform(0.02, 0.05)),
        angle_amplitude=float(rng.uniform(20.0, 35.0)),
        seed=int(seed),
    )


def rep_schedule(rng):
    """Per repetition ``(rise_start, hold_start, fall_start, fall_end)`` in seconds."""
    out = []
    for k in range(N_REPS):
        t0 = PREP_S + k * REP_S
        rs = t0 + RAISE_CUE_S + rng.uniform(0.08, 0.2)
        hs = rs + rng.uniform(0.2, 0.35)
        fs = t0 + LOWER_CUE_S + rng.uniform(0.08, 0.2)
        fe = fs + rng.uniform(0.2, 0.35)
        out.append((rs, hs, fs, fe))
    return out


def trapezoid_train(t, schedule):
    """Unit-height trapezoids following ``schedule``; 0 at rest."""
    y = np.zeros_like(t)
    for rs, hs, fs, fe in schedule:
        y = np.maximum(y, np.interp(t, [rs, hs, fs, fe], [0.0, 1.0, 1.0, 0.0],
                                    left=0.0, right=0.0))
    return y


def colored_noise(rng, n, rate, center, width):
    """Gaussian noise with a Gaussian-bump amplitude spectrum, unit variance."""
    f = np.fft.rfftfreq(n, 1.0 / rate)
    shape = np.exp(-0.5 * ((f - center) / width) ** 2)
    spec = (rng.standard_normal(f.size) + 1j * rng.standard_normal(f.size)) * shape
    x = np.fft.irfft(spec, n)
    return x / (x.std() + 1e-12)


def _warp_rate(t, schedule, drift):
    # r(t): 1 outside holds; falls linearly from 1 + drift/2 to 1 - drift/2 over each hold
    r = np.ones_like(t)
    for _, hs, fs, _ in schedule:
        m = (t >= hs) & (t < fs)
        r[m] = 1.0 + drift * (0.5 - (t[m] - hs) / (fs - hs))
    return r


def gen_trial(profile: SubjectProfile, borg: int, trial_index: int = 0,
              config: SynthConfig = SynthConfig(), subject_id: int = 0) -> Trial:
    """One 14 s trial at raw rates (sEMG 2000 Hz, IMU 100 Hz)."""
    if isinstance(borg, bool) or int(borg) != borg or not 0 <= borg <= 10:
        raise InvalidLabelError(f"borg must be an integer in [0, 10], got {borg!r}")
    rng = np.random.default_rng([profile.seed, int(borg), int(trial_index)])
    schedule = rep_schedule(rng)

    t_imu = np.arange(int(TRIAL_S * IMU_RATE)) / IMU_RATE
    amp = profile.angle_amplitude
    angle = amp * trapezoid_train(t_imu, schedule)
    angle = angle + rng.normal(0.0, config.imu_noise * amp, t_imu.size)

    n = int(TRIAL_S * SEMG_RATE)
    t = np.arange(n) / SEMG_RATE
    gate = 0.05 + 0.95 * trapezoid_train(t, [(rs - 0.1, hs, fs, fe + 0.1)
                                              for rs, hs, fs, fe in schedule])
    phase = np.cumsum(_warp_rate(t, schedule, profile.drift_slope * borg)) - 1.0
    mdf = profile.mdf(borg)
    level = 1.0 + profile.amp_slope * borg
    semg = np.empty((len(CHANNELS), n))
    hum_phase = rng.uniform(0, 2 * np.pi)
    for c, g in enumerate(profile.gains):
        base = colored_noise(rng, n, SEMG_RATE, mdf, config.bump_width * mdf)
        warped = np.interp(phase, np.arange(n), base)
        wander = 0.2 * g * np.sin(2 * np.pi * rng.uniform(0.1, 0.5) * t + rng.uniform(0, 6.3))
        hum = 0.1 * g * np.sin(2 * np.pi * 50.0 * t + hum_phase)
        floor = profile.noise_floor * g * rng.standard_normal(n)
        semg[c] = g * level * gate * warped + floor + hum + wander
    return Trial(TimeSeries(semg, SEMG_RATE, CHANNELS), TimeSeries(angle, IMU_RATE, ("angle",)),
                 int(borg), subject_id, trial_index)


@dataclass
class SubjectData:
    subject_id: int
    profile: SubjectProfile
    trials: list = field(default_factory=list)


def subject_seeds(config: SynthConfig):
    return [int(s) for s in np.random.SeedSequence(config.rng_seed).generate_state(config.n_subjects)]


def iter_subjects(config: SynthConfig):
    """Yield one :class:`SubjectData` at a time (keeps memory per subject)."""
    for sid, seed in enumerate(subject_seeds(config)):
        profile = gen_subject(seed)
        data = SubjectData(sid, profile)
        for borg in config.borg_sequence:
            for k in range(config.trials_per_borg):
                data.trials.append(gen_trial(profile, borg, k, config, sid))
        yield data


def gen_dataset(config: SynthConfig = SynthConfig()):
    """All trials, subject-major then Borg then repetition."""
    return [tr for subj in iter_subjects(config) for tr in subj.trials]


def augment(image, rng, p: float = 0.5, max_shift: int = 6, scale=(0.9, 1.1), max_mask: int = 8):
    """Random circular time shift, amplitude scale and one zeroed rectangle.

    Each transform fires independently with probability ``p``. Shift and mask
    extents are quoted for 64-column images and scaled with the image size.
    Accepts a :class:`TFImage` or a (C, H, W) array and returns the same kind.
    """
    values = image.values if isinstance(image, TFImage) else np.asarray(image)
    _, h, w = values.shape
    fire = rng.random(3) < p
    out = values.copy()
    if fire[0]:
        s = max(1, round(max_shift * w / 64))
        out = np.roll(out, int(rng.integers(-s, s + 1)), axis=-1)
    if fire[1]:
        out = out * rng.uniform(*scale)
    if fire[2]:
        mh = int(rng.integers(1, max(1, round(max_mask * h / 64)) + 1))
        mw = int(rng.integers(1, max(1, round(max_mask * w / 64)) + 1))
        r0 = int(rng.integers(0, h - mh + 1))
        c0 = int(rng.integers(0, w - mw + 1))
        out[:, r0:r0 + mh, c0:c0 + mw] = 0
    out = np.clip(out, 0, None)
    if isinstance(image, TFImage):
        return TFImage(out, image.freq_axis, image.time_axis)
    return out
