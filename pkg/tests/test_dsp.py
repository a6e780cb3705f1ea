import wave

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from uformer import dsp, synth


def test_hann_endpoints():
    w = dsp.hann_window(512)
    assert w[0] == 0.0
    assert w[256] == 1.0
    with pytest.raises(ValueError):
        dsp.hann_window(1)


def test_hann_is_cola_at_half_hop():
    w = dsp.hann_window(512)
    assert np.allclose(w[:256] + w[256:], 1.0, atol=1e-12)


def test_squared_hann_overlap_sum():
    # w^2 overlap-adds to a constant at hop K/4 but ripples at hop K/2,
    # which is why istft divides by the accumulated envelope
    w2 = dsp.hann_window(512) ** 2
    quarter = sum(np.roll(w2, s) for s in range(0, 512, 128))
    assert np.allclose(quarter, 1.5, atol=1e-12)
    half = w2[:256] + w2[256:]
    assert np.isclose(half.min(), 0.5) and np.isclose(half.max(), 1.0)


def test_stft_shape_and_zero_input():
    spec = dsp.stft(np.zeros(16000))
    assert spec.shape == (dsp.num_frames(16000), 257, 2)
    assert not spec.any()
    with pytest.raises(dsp.DataError):
        dsp.stft(np.zeros(0))


def test_frame_padding():
    n = 16000
    assert dsp.padded_length(n) >= n + 1024
    assert (dsp.padded_length(n) - 512) % 256 == 0
    frames = dsp.frame_signal(np.arange(1, n + 1, dtype=float))
    assert frames[0].sum() == 0.0
    assert frames[2, 0] == 1.0


def test_sinusoid_peaks_at_bin_32():
    t = np.arange(16000) / 16000
    spec = dsp.stft(np.sin(2 * np.pi * 1000 * t))
    mag = np.hypot(spec[..., 0], spec[..., 1]).sum(axis=0)
    assert int(np.argmax(mag)) == 32


def test_stft_linearity(rng):
    a, b = rng.standard_normal(8000), rng.standard_normal(8000)
    assert np.allclose(dsp.stft(a + b), dsp.stft(a) + dsp.stft(b), atol=1e-5)


@given(st.integers(8000, 64000), st.integers(0, 2**31 - 1))
def test_round_trip(n, seed):
    x = np.random.default_rng(seed).standard_normal(n)
    assert np.max(np.abs(dsp.istft(dsp.stft(x), n) - x)) < 1e-5


def test_istft_zero_and_scaling(rng):
    spec = dsp.stft(rng.standard_normal(4000))
    assert not dsp.istft(np.zeros_like(spec), 4000).any()
    assert np.allclose(dsp.istft(2.5 * spec, 4000), 2.5 * dsp.istft(spec, 4000))


def test_istft_rejects_long_output(rng):
    spec = dsp.stft(rng.standard_normal(4000))
    with pytest.raises(dsp.DataError):
        dsp.istft(spec, 10 ** 6)


def test_parseval_frame_energy(rng):
    x = rng.standard_normal(12345)
    spec = dsp.stft(x)
    weights = np.full(257, 2.0)
    weights[[0, -1]] = 1.0
    freq = (np.square(spec).sum(axis=-1) * weights).sum(axis=1) / 512
    time = np.square(dsp.frame_signal(x) * dsp.hann_window()).sum(axis=1)
    assert np.allclose(freq, time, rtol=1e-4, atol=1e-9)


# -- mixing --------------------------------------------------------------------

@pytest.mark.parametrize("snr", [0.0, 10.0])
def test_mix_power_ratio(snr, rng):
    clean = rng.standard_normal(8000)
    _, scaled = dsp.mix_at_snr(clean, rng.standard_normal(9000), snr)
    assert np.isclose(dsp.power(clean) / dsp.power(scaled), 10 ** (snr / 10), rtol=1e-10)


@given(st.floats(-10, 20), st.integers(100, 5000), st.integers(0, 2**31 - 1))
def test_mix_recovers_requested_snr(snr, noise_len, seed):
    r = np.random.default_rng(seed)
    clean = r.standard_normal(4000)
    noisy, scaled = dsp.mix_at_snr(clean, r.standard_normal(noise_len), snr)
    assert np.allclose(noisy, clean + scaled)
    assert abs(dsp.snr_db(clean, noisy - clean) - snr) < 0.01


@given(st.floats(0.01, 100), st.integers(0, 2**31 - 1))
def test_mix_scale_equivariant_in_clean(c, seed):
    r = np.random.default_rng(seed)
    clean, noise = r.standard_normal(3000), r.standard_normal(3000)
    a, _ = dsp.mix_at_snr(clean, noise, 5.0)
    b, _ = dsp.mix_at_snr(c * clean, noise, 5.0)
    assert np.allclose(b, c * a)


def test_noise_tiles_cyclically():
    assert np.array_equal(dsp.fit_noise(np.array([1.0, 2.0, 3.0]), 7, offset=1), [2, 3, 1, 2, 3, 1, 2])


def test_mix_rejects_silence(rng):
    with pytest.raises(dsp.DataError):
        dsp.mix_at_snr(np.zeros(100), rng.standard_normal(100), 0.0)
    with pytest.raises(dsp.DataError):
        dsp.mix_at_snr(rng.standard_normal(100), np.zeros(100), 0.0)


# -- ssnr ------------------------------------------------------------------------

def test_ssnr_identity_silence_and_clamp(rng):
    ref = rng.standard_normal(8000)
    assert dsp.ssnr(ref, ref) == 35.0
    assert dsp.ssnr(ref, np.zeros_like(ref)) == 0.0
    assert dsp.ssnr(ref, ref * (1 + 1e-9)) == 35.0
    assert dsp.ssnr(ref, -5 * ref) == -10.0


@given(st.floats(1e-3, 1e3), st.integers(0, 2**31 - 1))
def test_ssnr_scale_symmetric(c, seed):
    r = np.random.default_rng(seed)
    ref = r.standard_normal(3000)
    est = ref + 0.3 * r.standard_normal(3000)
    assert np.isclose(dsp.ssnr(ref, est), dsp.ssnr(c * ref, c * est))


def test_ssnr_needs_reference_energy():
    with pytest.raises(dsp.DataError):
        dsp.ssnr(np.zeros(2000), np.ones(2000))


# -- synthetic signals and WAV -----------------------------------------------------

def test_synth_signals_deterministic():
    assert np.array_equal(synth.speech_like(0.5, seed=3), synth.speech_like(0.5, seed=3))
    for kind in ("white", "pink", "brown"):
        n = synth.noise(0.5, kind, seed=1)
        assert n.shape == (8000,) and np.isclose(np.sqrt(dsp.power(n)), 0.1)


def test_wav_round_trip(tmp_path, rng):
    x = 0.5 * np.clip(rng.standard_normal(1000), -1, 1)
    dsp.write_wav(tmp_path / "a.wav", x)
    y = dsp.read_wav(tmp_path / "a.wav")
    assert np.max(np.abs(x - y)) <= 1 / 32768


def _write_raw(path, channels=1, width=2, rate=16000):
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(channels)
        fh.setsampwidth(width)
        fh.setframerate(rate)
        fh.writeframes(b"\x00" * channels * width * 10)


@pytest.mark.parametrize("kw,msg", [({"channels": 2}, "mono"), ({"width": 1}, "16-bit"), ({"rate": 8000}, "16000")])
def test_wav_refuses_other_formats(tmp_path, kw, msg):
    _write_raw(tmp_path / "x.wav", **kw)
    with pytest.raises(dsp.WavFormatError, match=msg):
        dsp.read_wav(tmp_path / "x.wav")


def test_wav_not_riff(tmp_path):
    (tmp_path / "x.wav").write_bytes(b"hello world")
    with pytest.raises(dsp.WavFormatError):
        dsp.read_wav(tmp_path / "x.wav")
