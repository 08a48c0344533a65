import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from knockstat.errors import FormatError, PreconditionError
from knockstat.trace import (KI_FLOOR, FilterSpec, KIDataset, bandpass_filter, design_bandpass, extract_dataset,
                             extract_ki, frequency_response, knock_window, load_traces, read_ki_csv,
                             resample_to_time, write_ki_csv, write_traces)

from conftest import burst, compression_curve, make_trace

FS = 90_000.0
SPEC = FilterSpec()


def tone(freq, amp=1.0, n=9000, fs=FS, phase=0.3):
    return amp * np.sin(2 * np.pi * freq * np.arange(n) / fs + phase)


def amplitude(y, trim=1000):
    return np.max(np.abs(y[trim:-trim]))


# ---- file handling

def _write(tmp_path, body, header="# rpm=1500\n# spark_btdc=20\n# resolution_deg=0.1\n"):
    p = tmp_path / "t.csv"
    p.write_text(header + "cycle_id,crank_angle_deg,pressure_bar\n" + body)
    return p


def test_load_two_blocks(tmp_path):
    traces = [make_trace(cycle=c, lo=-360, hi=359.9) for c in (0, 1)]
    path = tmp_path / "two.csv"
    write_traces(traces, path)
    got = load_traces(path)
    assert [len(t.pressure) for t in got] == [7200, 7200]
    assert all(t.rpm == 1500 and t.spark_timing == 20 for t in got)
    np.testing.assert_array_equal(got[1].pressure, traces[1].pressure)


def test_decreasing_angles_rejected(tmp_path):
    path = _write(tmp_path, "0,0.2,1\n0,0.1,1\n0,0.0,1\n")
    with pytest.raises(FormatError):
        load_traces(path)


def test_duplicate_and_missing_angles_rejected(tmp_path):
    with pytest.raises(FormatError):
        load_traces(_write(tmp_path, "0,0.0,1\n0,0.1,1\n0,0.1,1\n"))
    with pytest.raises(FormatError):
        load_traces(_write(tmp_path, "0,0.0,1\n0,0.1,1\n0,0.3,1\n"))


def test_missing_header_rejected(tmp_path):
    with pytest.raises(FormatError):
        load_traces(_write(tmp_path, "0,0.0,1\n0,0.1,1\n", header="# rpm=1500\n"))


def test_ki_csv_roundtrip(tmp_path):
    data = KIDataset("op", np.array([0.1, 0.25, 3.0]))
    write_ki_csv(data, tmp_path / "ki.csv")
    assert (tmp_path / "ki.csv").read_text().splitlines()[0] == "cycle,ki_bar"
    np.testing.assert_array_equal(read_ki_csv(tmp_path / "ki.csv").ki, data.ki)


# ---- resampling

@pytest.mark.parametrize("rpm,res,fs", [(1500, 0.1, 90_000), (1500, 1.0, 9_000), (3000, 0.5, 36_000)])
def test_sample_rate(rpm, res, fs):
    t = make_trace(rpm=rpm, res=res, lo=-30, hi=30)
    samples, rate = resample_to_time(t)
    assert rate == pytest.approx(fs, rel=1e-12)
    np.testing.assert_array_equal(samples, t.pressure)


def test_nyquist_violation():
    t = make_trace(res=1.0)
    with pytest.raises(PreconditionError):
        extract_ki(t)
    with pytest.raises(PreconditionError):
        bandpass_filter(np.zeros(100), 9_000.0, SPEC)


# ---- filter

def test_designed_response_meets_band_specs():
    h = design_bandpass(FS, SPEC)
    assert h.size % 2 == 1
    np.testing.assert_allclose(h, h[::-1], atol=1e-15)
    f = np.linspace(0, FS / 2, 40001)
    mag = frequency_response(h, f, FS)
    tf = SPEC.transition_fraction
    passband = (f >= SPEC.low_cut * (1 + tf)) & (f <= SPEC.high_cut * (1 - tf))
    stopband = (f <= SPEC.low_cut * (1 - tf)) | (f >= SPEC.high_cut * (1 + tf))
    gain_db = 20 * np.log10(mag)
    assert np.all(np.abs(gain_db[passband]) <= 0.5)
    assert np.all(gain_db[stopband] <= -SPEC.attenuation_floor)


def test_tone_in_band():
    h = design_bandpass(FS, SPEC)
    gain = frequency_response(h, [10_000.0], FS)[0]
    x = tone(10_000, 0.5)
    y = bandpass_filter(x, FS, SPEC)
    # zero phase: the steady-state output is the input scaled by |H(10 kHz)|
    np.testing.assert_allclose(y[1000:-1000], gain * x[1000:-1000], atol=1e-9)
    assert 0.47 <= 0.5 * gain <= 0.53


def test_dc_rejected():
    out = bandpass_filter(np.full(5000, 7.0), FS, SPEC)
    assert out.shape == (5000,)
    assert np.max(np.abs(out)) <= 10 ** (-SPEC.attenuation_floor / 20) * 7.0


def test_out_of_band_tone_rejected():
    out = amplitude(bandpass_filter(tone(40_000), FS, FilterSpec(attenuation_floor=40)))
    assert out <= 0.01


def test_zero_phase():
    x = tone(10_000, n=4000)
    y = bandpass_filter(x, FS, SPEC)
    mid = slice(1000, 3000)
    lag = np.argmax(np.correlate(y[mid], x[mid], mode="full")) - (len(x[mid]) - 1)
    assert lag == 0


def test_twice_equals_once_within_ripple():
    once = bandpass_filter(tone(12_000), FS, SPEC)
    twice = bandpass_filter(once, FS, SPEC)
    ratio = amplitude(twice) / amplitude(once)
    assert 10 ** (-0.5 / 20) <= ratio <= 10 ** (0.5 / 20)


# ---- KI extraction

def test_default_window():
    assert knock_window(make_trace(spark=20.0)) == (0.0, 90.0)


def test_window_outside_trace():
    with pytest.raises(PreconditionError):
        extract_ki(make_trace(lo=-180, hi=60))


def test_smooth_curve_gives_floor():
    assert extract_ki(make_trace()) == KI_FLOOR


@pytest.mark.parametrize("phase", [0.0, 0.7, 1.9])
def test_burst_amplitude(phase):
    t = make_trace(lambda a: compression_curve(a) + burst(a, 45.0, 0.5, phase=phase))
    assert 0.45 <= extract_ki(t) <= 0.53


def test_extract_dataset_metadata():
    traces = [make_trace(lambda a, k=k: compression_curve(a) + burst(a, 45.0, 0.1 * (k + 1)), cycle=k)
              for k in range(3)]
    ds = extract_dataset(traces)
    assert ds.metadata == {"rpm": 1500.0, "spark_btdc": 20.0}
    assert np.all(np.diff(ds.ki) > 0)


@settings(max_examples=25, deadline=None)
@given(offset=st.floats(-50, 50), scale=st.floats(0.01, 100), amp=st.floats(0.05, 2.0))
def test_offset_invariance_and_scaling(offset, scale, amp):
    base = make_trace(lambda a: compression_curve(a) + burst(a, 45.0, amp), lo=-60, hi=120)
    ki = extract_ki(base)
    shifted = make_trace(lambda a: compression_curve(a) + burst(a, 45.0, amp) + offset, lo=-60, hi=120)
    scaled = make_trace(lambda a: scale * (compression_curve(a) + burst(a, 45.0, amp)), lo=-60, hi=120)
    assert extract_ki(shifted) == pytest.approx(ki, rel=1e-9, abs=1e-9)
    assert extract_ki(scaled) == pytest.approx(max(scale * ki, KI_FLOOR), rel=1e-9)
