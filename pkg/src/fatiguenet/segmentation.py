"""Stream alignment, motion-phase segmentation and fatigue labelling.

The segmenter is a four-state machine on the normalized IMU angle. State
changes are driven by position hysteresis (20 % / 80 % of the trial's robust
angle range, with a 50 ms dwell above the upper threshold before a hold is
accepted). The resulting boundaries are then moved to where the angular
velocity enters or leaves a noise-adaptive band, so that Rising and Falling
cover the whole ramp.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np

from .dsp import FilterSpec, TimeSeries, iir_filter, resample
from .errors import AlignmentError, InvalidLabelError, ShapeError
from .fileio import atomic_open

log = logging.getLogger(__name__)

ALIGNED_RATE = 500.0


class MotionPhase(enum.Enum):
    RESTING = "Resting"
    RISING = "Rising"
    HOLDING = "Holding"
    FALLING = "Falling"


NEXT_PHASE = {
    MotionPhase.RESTING: MotionPhase.RISING,
    MotionPhase.RISING: MotionPhase.HOLDING,
    MotionPhase.HOLDING: MotionPhase.FALLING,
    MotionPhase.FALLING: MotionPhase.RESTING,
}


class FatigueLabel(enum.IntEnum):
    NF = 0
    MF = 1
    SF = 2


@dataclass(frozen=True)
class PhaseSegment:
    phase: MotionPhase
    start: int
    end: int     # exclusive

    def __post_init__(self):
        if not self.start < self.end:
            raise ShapeError(f"segment start {self.start} must precede end {self.end}")


@dataclass
class Trial:
    semg: TimeSeries
    imu: TimeSeries
    borg: int
    subject_id: int
    trial_id: int = 0


@dataclass(frozen=True)
class SegmenterParams:
    theta_lo: float = 0.2
    theta_hi: float = 0.8
    v_th: float = 0.1          # range / s
    v_eps: float = 0.02        # range / s
    dwell_s: float = 0.05
    noise_mult: float = 4.0    # velocity band = max(v_th, noise_mult * sigma_v)
    flat_snr: float = 8.0      # range must exceed this many noise std devs


class Segments(list):
    """List of :class:`PhaseSegment`; ``flat`` marks a trial with no usable motion."""

    flat = False


class Holds(list):
    """List of per-hold slices; ``dropped`` counts holds that were too short."""

    dropped = 0


def align_streams(semg_raw: TimeSeries, imu_raw: TimeSeries, rate: float = ALIGNED_RATE,
                  imu_cutoff_hz: float = 8.0, max_skew_s: float = 0.1):
    """Bring both streams to ``rate``; the IMU is lowpassed first. Trims to equal length."""
    if abs(semg_raw.duration - imu_raw.duration) > max_skew_s + 1e-9:
        raise AlignmentError(f"stream durations differ: sEMG {semg_raw.duration:.3f} s, "
                             f"IMU {imu_raw.duration:.3f} s")
    imu = iir_filter(imu_raw, FilterSpec("lowpass", 4, imu_cutoff_hz))
    imu = resample(imu, rate)
    semg = resample(semg_raw, rate)
    n = min(imu.n_samples, semg.n_samples)
    return semg.slice(0, n), imu.slice(0, n)


def _robust_scale(x):
    lo, hi = np.percentile(x, [1, 99])
    return lo, hi - lo


def _noise_std(x):
    # MAD of first differences; white noise std = that / sqrt(2)
    d = np.diff(x)
    if d.size == 0:
        return 0.0
    return 1.4826 * float(np.median(np.abs(d - np.median(d)))) / np.sqrt(2)


def _find_cycles(xn, n_dwell, lo, hi):
    """Position-hysteresis pass: (lo_up, hi_up, hi_down, lo_down) sample indices per cycle.

    ``lo_down`` is ``len(xn)`` when the trial ends before the return to rest.
    """
    cycles = []
    state = MotionPhase.RESTING
    lo_up = hi_up = hi_down = None
    run = 0
    armed = xn[0] < lo           # a trial starting mid-motion waits for rest first
    for i, v in enumerate(xn):
        if state is MotionPhase.RESTING:
            if v < lo:
                armed = True
            elif armed:
                state, lo_up, run = MotionPhase.RISING, i, 0
        elif state is MotionPhase.RISING:
            if v < lo:
                state = MotionPhase.RESTING      # aborted rise: stays part of rest
            elif v >= hi:
                if run == 0:
                    hi_up = i
                run += 1
                if run >= n_dwell:
                    state, hi_down = MotionPhase.HOLDING, None
            else:
                run = 0
        else:   # HOLDING, with a pending fall while below hi
            if v >= hi:
                hi_down = None
            elif hi_down is None:
                hi_down = i
            if v < lo:
                cycles.append((lo_up, hi_up, hi_down, i))
                state = MotionPhase.RESTING
    if state is MotionPhase.HOLDING:
        n = len(xn)
        cycles.append((lo_up, hi_up, n if hi_down is None else hi_down, n))
    return cycles


def segment_phases(imu: TimeSeries, params: SegmenterParams = SegmenterParams(),
                   channel: int = 0) -> Segments:
    """Tile the trial into ordered Resting/Rising/Holding/Falling segments."""
    x = imu.data[channel]
    n = x.size
    out = Segments()
    lo_val, rng = _robust_scale(x)
    sigma = _noise_std(x)
    if n < 2 or rng <= max(1e-9, params.flat_snr * sigma):
        log.warning("flat trial (angle range %.3g); emitting a single Resting segment", rng)
        out.flat = True
        if n:
            out.append(PhaseSegment(MotionPhase.RESTING, 0, n))
        return out

    xn = (x - lo_val) / rng
    v = np.gradient(xn) * imu.rate
    quiet = (xn < params.theta_lo) | (xn > params.theta_hi)
    sigma_v = 1.4826 * float(np.median(np.abs(v[quiet] - np.median(v[quiet])))) if quiet.any() else 0.0
    band = max(params.v_th, params.v_eps, params.noise_mult * sigma_v)
    n_dwell = max(1, int(round(params.dwell_s * imu.rate)))

    cycles = _find_cycles(xn, n_dwell, params.theta_lo, params.theta_hi)
    bounds = []
    prev_end = 0
    for c, (lo_up, hi_up, hi_down, lo_down) in enumerate(cycles):
        # Rising start: walk back while still moving up, keeping >= 1 rest sample before
        rs = lo_up
        while rs - 1 > prev_end and v[rs - 1] > band:
            rs -= 1
        # Holding: trim ramp ends still moving faster than the band
        hs, he = hi_up, hi_down
        while hs + 1 < he and v[hs] > band:
            hs += 1
        while he - 1 > hs and v[he - 1] < -band:
            he -= 1
        hs = max(hs, rs + 1)
        if hi_down >= n:
            # trial ended mid-hold: no falling phase
            bounds.append((rs, hs, n, None))
            break
        he = max(he, hs + 1)
        # Falling end: walk on while still descending, leaving room for rest
        fe = lo_down
        limit = cycles[c + 1][0] - 1 if c + 1 < len(cycles) else n
        while fe < limit and v[fe] < -band:
            fe += 1
        fe = min(max(fe, he + 1), n)
        bounds.append((rs, hs, he, fe))
        prev_end = fe

    cursor = 0
    for rs, hs, he, fe in bounds:
        if rs > cursor:
            out.append(PhaseSegment(MotionPhase.RESTING, cursor, rs))
        out.append(PhaseSegment(MotionPhase.RISING, rs, hs))
        out.append(PhaseSegment(MotionPhase.HOLDING, hs, he))
        if fe is None:
            cursor = n
            break
        out.append(PhaseSegment(MotionPhase.FALLING, he, fe))
        cursor = fe
    if cursor < n:
        out.append(PhaseSegment(MotionPhase.RESTING, cursor, n))
    return out


def cycle_violations(segments) -> int:
    """Number of adjacent segment pairs that break the phase cycle or tiling."""
    bad = 0
    for a, b in zip(segments, segments[1:]):
        if NEXT_PHASE[a.phase] is not b.phase or a.end != b.start:
            bad += 1
    return bad


def extract_holding(semg: TimeSeries, segments, min_hold_s: float = 0.1) -> Holds:
    """One sEMG slice per Holding segment; holds shorter than ``min_hold_s`` are dropped."""
    out = Holds()
    min_len = int(round(min_hold_s * semg.rate))
    for seg in segments:
        if seg.phase is not MotionPhase.HOLDING:
            continue
        if seg.end - seg.start < min_len or seg.end > semg.n_samples:
            out.dropped += 1
            continue
        out.append(semg.slice(seg.start, seg.end))
    if out.dropped:
        log.warning("dropped %d short holding segment(s)", out.dropped)
    return out


def borg_to_label(score: int) -> FatigueLabel | None:
    """[0,2] -> NF, [4,6] -> MF, [8,10] -> SF; the boundary scores 3 and 7 map to None."""
    if isinstance(score, bool) or int(score) != score or not 0 <= score <= 10:
        raise InvalidLabelError(f"Borg score must be an integer in [0, 10], got {score!r}")
    score = int(score)
    if score <= 2:
        return FatigueLabel.NF
    if 4 <= score <= 6:
        return FatigueLabel.MF
    if score >= 8:
        return FatigueLabel.SF
    return None


def write_segmentation_report(path, rows, rate: float = ALIGNED_RATE):
    """``rows`` is an iterable of ``(trial_name, segments)``."""
    with atomic_open(path, "w", newline="") as fh:
        fh.write("trial,phase,start_s,end_s\n")
        for name, segments in rows:
            for s in segments:
                fh.write(f"{name},{s.phase.value},{s.start / rate:.4f},{s.end / rate:.4f}\n")
