import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fatiguenet import dsp
from fatiguenet.errors import (
    DegenerateChannelError, EmptyInputError, InsufficientDataError, InvalidSpecError, ShapeError,
)

RATE = 2000.0


def sine(freq, seconds=1.0, rate=RATE, amp=1.0):
    t = np.arange(int(seconds * rate)) / rate
    return dsp.TimeSeries(amp * np.sin(2 * np.pi * freq * t), rate)


def test_timeseries_validation():
    ts = dsp.TimeSeries(np.zeros(10), 100.0)
    assert ts.data.shape == (1, 10) and ts.channel_names == ("ch0",)
    assert ts.duration == pytest.approx(0.1)
    with pytest.raises(InvalidSpecError):
        dsp.TimeSeries(np.zeros(3), 0.0)
    with pytest.raises(ShapeError):
        dsp.TimeSeries(np.zeros((2, 3)), 1.0, ("a",))


@pytest.mark.parametrize("corner", [20.0, 400.0])
def test_bandpass_corner_is_3db(corner):
    spec = dsp.FilterSpec("bandpass", 4, 20.0, 400.0)
    assert dsp.single_pass_gain_db(spec, RATE, corner) == pytest.approx(-3.0103, abs=0.01)


def test_filter_spec_validation():
    with pytest.raises(InvalidSpecError):
        dsp.FilterSpec("highshelf")
    with pytest.raises(InvalidSpecError):
        dsp.FilterSpec("bandpass")
    with pytest.raises(InvalidSpecError):
        dsp.design_sos(dsp.FilterSpec("lowpass", corner_low_hz=1500.0), RATE)
    with pytest.raises(InvalidSpecError):
        dsp.design_sos(dsp.FilterSpec("bandpass", 4, 400.0, 20.0), RATE)


def test_notch_removes_mains():
    spec = dsp.FilterSpec("notch", corner_low_hz=50.0, q=30.0)
    assert dsp.single_pass_gain_db(spec, RATE, 50.0) < -40
    out = dsp.iir_filter(sine(50.0, 10.0), spec)
    mid = out.data[0, 5000:-5000]
    assert np.max(np.abs(mid)) < 0.01


def test_zero_phase_preserves_passband_alignment():
    x = sine(100.0, 2.0)
    y = dsp.iir_filter(x, dsp.FilterSpec("bandpass", 4, 20.0, 400.0))
    core = slice(500, -500)
    np.testing.assert_allclose(y.data[0, core], x.data[0, core], atol=0.02)


def test_bandpass_removes_dc():
    y = dsp.iir_filter(dsp.TimeSeries(np.full(4000, 3.0), RATE),
                       dsp.FilterSpec("bandpass", 4, 20.0, 400.0))
    # zero initial state leaves a start-up transient; the interior must be flat zero
    assert np.max(np.abs(y.data[0, 1000:-1000])) < 1e-6


def test_filter_empty_raises():
    with pytest.raises(EmptyInputError):
        dsp.iir_filter(dsp.TimeSeries(np.zeros((1, 0)), RATE), dsp.FilterSpec("lowpass"))


@pytest.mark.parametrize("src,dst,n", [(2000, 500, 2001), (100, 500, 77), (500, 500, 10)])
def test_resample_length(src, dst, n):
    out = dsp.resample(dsp.TimeSeries(np.ones(n), float(src)), float(dst))
    assert out.n_samples == round(n * dst / src)
    assert out.rate == dst


def test_resample_keeps_low_frequency_content():
    x = sine(5.0, 2.0, rate=2000.0)
    y = dsp.resample(x, 500.0)
    t = np.arange(y.n_samples) / 500.0
    np.testing.assert_allclose(y.data[0, 50:-50], np.sin(2 * np.pi * 5 * t)[50:-50], atol=1e-2)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 400), st.integers(1, 60), st.integers(1, 60))
def test_rms_window_count(n, window, stride):
    sig = dsp.TimeSeries(np.ones(n), 1000.0)
    if n < window:
        with pytest.raises(InsufficientDataError):
            dsp.sliding_rms(sig, window, stride)
        return
    out = dsp.sliding_rms(sig, window, stride)
    assert out.n_samples == (n - window) // stride + 1
    np.testing.assert_allclose(out.data, 1.0)


def test_rms_of_sine():
    out = dsp.sliding_rms(sine(100.0), 200, 100)
    np.testing.assert_allclose(out.data, 1 / np.sqrt(2), rtol=1e-6)


def test_mvc_nearest_rank():
    rms = dsp.TimeSeries(np.arange(1.0, 101.0)[None, :], 1.0)
    assert dsp.mvc_estimate(rms)[0] == 95.0
    rms = dsp.TimeSeries(np.array([[5.0, 1.0, 3.0]]), 1.0)
    assert dsp.mvc_estimate(rms)[0] == 5.0


def test_zero_channel_warns_and_normalization_refuses(caplog):
    rms = dsp.TimeSeries(np.array([[1.0, 2.0], [0.0, 0.0]]), 1.0, ("MG", "LG"))
    with caplog.at_level(logging.WARNING):
        mvc = dsp.mvc_estimate(rms)
    assert "LG" in caplog.text
    with pytest.raises(DegenerateChannelError, match="LG"):
        dsp.normalize_by_mvc(rms, mvc)


def test_normalize_by_mvc():
    sig = dsp.TimeSeries(np.array([[2.0, 4.0], [3.0, 6.0]]), 1.0)
    np.testing.assert_allclose(dsp.normalize_by_mvc(sig, [2.0, 3.0]).data, [[1, 2], [1, 2]])


def test_peak_ratio_maximizes_response():
    w = dsp.WaveletSpec(1.5, 1.0)
    u = np.linspace(0.5, 1.5, 200001)
    resp = np.sqrt(u) * np.exp(-np.pi ** 2 * w.bandwidth * (u - w.center_frequency) ** 2)
    assert u[np.argmax(resp)] == pytest.approx(w.peak_ratio, abs=1e-5)


def test_scale_frequencies_descending():
    f = dsp.scale_frequencies(64, 20.0, 400.0)
    assert f[0] == pytest.approx(400.0) and f[-1] == pytest.approx(20.0)
    assert np.all(np.diff(f) < 0)


@pytest.mark.parametrize("freq", [35.0, 90.0, 170.0, 333.0])
def test_cwt_localizes_sine(freq):
    img = dsp.cwt_image(sine(freq), f_min=20.0, f_max=400.0)
    row = np.argmax(img.values[0].mean(axis=1))
    assert abs(row - np.argmin(np.abs(img.freq_axis - freq))) <= 1


def test_cwt_image_shape_and_range(rng):
    sig = dsp.TimeSeries(rng.standard_normal((6, 1500)), RATE)
    img = dsp.cwt_image(sig, n_scales=32, n_time=48)
    assert img.values.shape == (6, 32, 48)
    assert img.values.min() >= 0
    np.testing.assert_allclose(img.values.max(axis=(1, 2)), 1.0)
    assert img.time_axis.shape == (48,)


def test_cwt_zero_channel_stays_zero():
    data = np.zeros((2, 400))
    data[0] = np.sin(np.arange(400))
    img = dsp.cwt_image(dsp.TimeSeries(data, RATE))
    assert not img.values[1].any()


def test_cwt_short_input_upsamples_time():
    img = dsp.cwt_image(dsp.TimeSeries(np.sin(np.arange(20.0)), RATE), n_time=64)
    assert img.values.shape == (1, 64, 64)


def test_cwt_rejects_bad_band():
    with pytest.raises(InvalidSpecError):
        dsp.cwt_image(sine(50.0, rate=500.0), f_max=300.0)
    with pytest.raises(InsufficientDataError):
        dsp.cwt_image(dsp.TimeSeries(np.zeros(4), RATE))


def test_csv_round_trip(tmp_path, rng):
    sig = dsp.TimeSeries(rng.standard_normal((3, 50)), 2000.0, ("MG", "LG", "SO"))
    dsp.write_csv(tmp_path / "r.csv", sig)
    back = dsp.read_csv(tmp_path / "r.csv")
    assert back.rate == 2000.0
    assert back.channel_names == sig.channel_names
    np.testing.assert_allclose(back.data, sig.data, rtol=1e-8)


def test_csv_requires_time_column(tmp_path):
    (tmp_path / "x.csv").write_text("a,b\n1,2\n3,4\n")
    with pytest.raises(ShapeError):
        dsp.read_csv(tmp_path / "x.csv")
