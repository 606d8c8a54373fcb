import numpy as np
import pytest
from scipy import signal

from fatiguenet import synthgen as sg
from fatiguenet.dsp import TFImage
from fatiguenet.errors import InvalidConfigError, InvalidLabelError
from fatiguenet.fileio import read_image_batch, write_image_batch
from fatiguenet.pipeline import DSPConfig, SampleSet, build_samples, preprocess_subject


def median_frequency(x, rate):
    f, p = signal.welch(x, rate, nperseg=512)
    c = np.cumsum(p)
    return f[np.searchsorted(c, c[-1] / 2)]


@pytest.fixture(scope="module")
def profile():
    return sg.gen_subject(11)


def test_config_validation():
    with pytest.raises(InvalidConfigError):
        sg.SynthConfig(n_subjects=3)
    with pytest.raises(InvalidConfigError):
        sg.SynthConfig(borg_sequence=(0, 12))
    with pytest.raises(InvalidConfigError):
        sg.SynthConfig(imu_noise=0.6)


def test_trial_shapes(profile):
    tr = sg.gen_trial(profile, 5)
    assert tr.semg.data.shape == (6, 28000)
    assert tr.imu.data.shape == (1, 1400)
    assert tr.semg.channel_names == ("MG", "LG", "SO", "AT", "TA", "PL")
    assert tr.borg == 5


def test_trial_is_deterministic(profile):
    a, b = sg.gen_trial(profile, 7, 1), sg.gen_trial(profile, 7, 1)
    np.testing.assert_array_equal(a.semg.data, b.semg.data)
    c = sg.gen_trial(profile, 7, 2)
    assert not np.array_equal(a.semg.data, c.semg.data)


def test_invalid_borg(profile):
    with pytest.raises(InvalidLabelError):
        sg.gen_trial(profile, 11)


def test_schedule_is_ordered():
    for seed in range(20):
        sched = sg.rep_schedule(np.random.default_rng(seed))
        flat = [t for rep in sched for t in rep]
        assert np.all(np.diff(flat) > 0)
        assert flat[-1] < sg.TRIAL_S


def test_median_frequency_drops_with_borg(profile):
    mdfs = []
    for borg in (0, 5, 10):
        tr = sg.gen_trial(profile, borg)
        mdfs.append(median_frequency(tr.semg.data[0, 5000:25000], sg.SEMG_RATE))
    assert mdfs[0] > mdfs[1] > mdfs[2]


def test_within_hold_drift_grows_with_borg(profile):
    def drift(borg):
        rng = np.random.default_rng([profile.seed, borg, 0])
        sched = sg.rep_schedule(rng)
        tr = sg.gen_trial(profile, borg)
        early, late = [], []
        for _, hs, fs, _ in sched:
            a, b = int(hs * sg.SEMG_RATE), int(fs * sg.SEMG_RATE)
            mid = (a + b) // 2
            early.append(median_frequency(tr.semg.data[0, a:mid], sg.SEMG_RATE))
            late.append(median_frequency(tr.semg.data[0, mid:b], sg.SEMG_RATE))
        return np.mean(early) / np.mean(late)

    assert drift(10) > drift(0)
    assert drift(10) > 1.05


def test_subject_seeds_reproducible():
    cfg = sg.SynthConfig(rng_seed=3)
    assert sg.subject_seeds(cfg) == sg.subject_seeds(cfg)
    assert sg.subject_seeds(cfg) != sg.subject_seeds(sg.SynthConfig(rng_seed=4))


def test_colored_noise_band(rng):
    x = sg.colored_noise(rng, 20000, 2000.0, 120.0, 30.0)
    assert x.std() == pytest.approx(1.0)
    assert 100 < median_frequency(x, 2000.0) < 140


@pytest.mark.parametrize("size", [32, 64])
def test_augment_preserves_shape_and_sign(rng, size):
    img = rng.random((6, size, size))
    for _ in range(20):
        out = sg.augment(img, rng)
        assert out.shape == img.shape and out.min() >= 0
    assert np.array_equal(sg.augment(img, rng, p=0.0), img)


def test_augment_tfimage_round_trip(rng):
    img = TFImage(rng.random((6, 8, 8)), np.arange(8.0), np.arange(8.0))
    out = sg.augment(img, rng, p=1.0)
    assert isinstance(out, TFImage)
    assert out.freq_axis is img.freq_axis


def test_augment_mask_shared_across_channels(rng):
    img = np.ones((6, 64, 64))
    out = sg.augment(img, np.random.default_rng(0), p=1.0)
    zero = out == 0
    assert zero.any()
    assert np.all(zero == zero[0])


@pytest.fixture(scope="module")
def tiny_samples():
    cfg = sg.SynthConfig(n_subjects=4, trials_per_borg=1, borg_sequence=(0, 3, 5, 9))
    subjects = list(sg.iter_subjects(cfg))[:2]
    report = []
    samples = build_samples(subjects, DSPConfig(n_scales=16, n_time=16), report)
    return samples, report


def test_pipeline_skips_boundary_scores(tiny_samples):
    samples, report = tiny_samples
    assert len(report) == 8                 # every trial is segmented and reported
    assert 3 not in samples.borg
    assert len(samples) == 2 * 3 * 5
    assert samples.images.shape[1:] == (6, 16, 16)
    assert samples.images.dtype == np.float32
    assert set(samples.fatigue) == {0, 1, 2}


def test_sample_set_subset_and_concat(tiny_samples):
    samples, _ = tiny_samples
    a = samples.subset(samples.subject == 0)
    b = samples.subset(samples.subject == 1)
    both = SampleSet.concat([a, b])
    np.testing.assert_array_equal(both.images, samples.images)


def test_preprocess_only_boundary_trials_is_empty(profile):
    tr = sg.gen_trial(profile, 3)
    out = preprocess_subject([tr], DSPConfig(n_scales=8, n_time=8))
    assert len(out) == 0 and out.images.shape == (0, 6, 8, 8)


def test_dsp_config_rejects_nyquist():
    with pytest.raises(InvalidConfigError):
        DSPConfig(f_max=260.0)


def test_image_batch_round_trip(tmp_path, tiny_samples):
    samples, _ = tiny_samples
    write_image_batch(tmp_path / "imgs", samples.images, samples.freq_axis, samples.time_axis,
                      samples.labels())
    images, meta = read_image_batch(tmp_path / "imgs")
    np.testing.assert_array_equal(images, samples.images)
    assert meta["labels"]["subject"] == samples.subject.tolist()
