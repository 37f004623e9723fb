import numpy as np
import pytest

from prosodykit.excitation import (ExcitationSignal, amplitude_bound, harmonic_count, read_wav,
                                   running_phase, synthesize, wav_duration, write_csv, write_wav)


@pytest.mark.parametrize("f0,k", [(100, 80), (30, 200), (8000, 1), (200, 40), (0, 0), (-5, 0)])
def test_harmonic_count(f0, k):
    assert harmonic_count(f0, 16000, 200) == k


def test_harmonic_count_array():
    np.testing.assert_array_equal(harmonic_count(np.array([0.0, 100.0, 30.0]), 16000),
                                  [0, 80, 200])


def test_single_sample_hand_value():
    # K = 2: sin(pi/2) + sin(pi) = 1
    sig = synthesize(np.array([4000.0]), 16000)
    assert sig.samples[0] == pytest.approx(1.0, abs=1e-12)


def test_all_unvoiced_is_silent():
    sig = synthesize(np.zeros(500), 16000)
    assert np.all(sig.samples == 0.0)


def test_gate_zeroes_exactly():
    f0 = np.full(1000, 180.0)
    gate = np.ones(1000, bool)
    gate[300:600] = False
    s = synthesize(f0, 16000, gate=gate).samples
    assert np.all(s[300:600] == 0.0)
    assert np.any(s[:300] != 0) and np.any(s[600:] != 0)


def test_empty_track():
    assert len(synthesize(np.zeros(0), 16000)) == 0


def test_bounded_and_finite():
    rng = np.random.default_rng(0)
    f0 = np.repeat(rng.uniform(60, 500, 40), 100)
    s = synthesize(f0, 16000).samples
    assert np.all(np.isfinite(s))
    assert np.all(np.abs(s) <= amplitude_bound(f0, 16000) + 1e-9)


def test_phase_wraps_but_signal_matches_unwrapped():
    f0 = np.full(3000, 333.0)
    phi = running_phase(f0, 16000)
    assert phi.max() < 16000
    direct = sum(np.sin(2 * np.pi * k * np.cumsum(f0) / 16000) for k in range(1, 25))
    np.testing.assert_allclose(synthesize(f0, 16000).samples, direct, atol=1e-8)


def test_harmonics_drop_out_in_glide():
    # K falls from 40 to 20 across a 200 -> 400 Hz glide
    f0 = np.linspace(200, 400, 4000)
    k = harmonic_count(f0, 16000)
    assert k[0] == 40 and k[-1] == 20
    s = synthesize(f0, 16000).samples
    assert np.all(np.abs(s) <= k + 1e-9)


def test_spectrum_peaks_at_harmonics():
    sig = synthesize(np.full(16000, 200.0), 16000)
    mag = np.abs(np.fft.rfft(sig.samples))
    # 1 Hz bins; the 40th harmonic sits on Nyquist where sin(pi n) vanishes
    for k in range(1, 40):
        b = 200 * k
        assert mag[b] > mag[b - 1] and mag[b] > mag[b + 1]
    other = np.ones_like(mag, bool)
    other[200::200] = False
    other[0] = False
    assert mag[other].max() < 0.05 * mag[200]


def test_wav_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    sig = ExcitationSignal(rng.uniform(-0.8, 0.8, 16000), 16000)
    p = tmp_path / "a.wav"
    gain = write_wav(sig, p, normalize_peak=False)
    assert gain == 1.0
    assert wav_duration(p) == 1.0
    back, rate = read_wav(p)
    assert rate == 16000
    assert np.max(np.abs(back - sig.samples)) <= 1 / 32768


def test_wav_peak_normalization(tmp_path):
    sig = synthesize(np.full(800, 150.0), 16000)
    p = tmp_path / "b.wav"
    gain = write_wav(sig, p)
    back, _ = read_wav(p)
    assert np.max(np.abs(back)) == pytest.approx(0.9, abs=1 / 32768)
    np.testing.assert_allclose(back, sig.samples * gain, atol=1 / 32768)


def test_silent_wav_unscaled(tmp_path):
    p = tmp_path / "z.wav"
    assert write_wav(ExcitationSignal(np.zeros(100), 16000), p) == 1.0
    back, _ = read_wav(p)
    assert np.all(back == 0)


def test_wav_bad_rate(tmp_path):
    with pytest.raises(ValueError):
        write_wav(ExcitationSignal(np.zeros(10), 12345), tmp_path / "r.wav")


def test_csv_export(tmp_path):
    p = tmp_path / "e.csv"
    write_csv(synthesize(np.full(5, 4000.0), 16000), p)
    lines = p.read_text().splitlines()
    assert lines[0] == "sample_index,value" and len(lines) == 6
