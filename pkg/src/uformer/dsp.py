"""Analysis/synthesis transforms, SNR-controlled mixing, segmental SNR, WAV I/O.

All functions here are pure numpy in float64.  A spectrogram is a
``(T, F, 2)`` array holding real and imaginary parts of the onesided STFT.
"""
from __future__ import annotations

import wave
from pathlib import Path

import numpy as np

SAMPLE_RATE = 16000
FFT_SIZE = 512
HOP = 256


class DataError(ValueError):
    """Bad audio data or an unsupported file."""


class WavFormatError(DataError):
    pass


def hann_window(k: int = FFT_SIZE) -> np.ndarray:
    """Periodic Hann window, ``0.5 * (1 - cos(2*pi*n/K))``."""
    if k < 2:
        raise ValueError(f"window length must be >= 2, got {k}")
    n = np.arange(k)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * n / k))


def padded_length(n: int, k: int = FFT_SIZE, hop: int = HOP) -> int:
    """Length after padding ``k`` zeros at both ends and completing the last frame."""
    total = n + 2 * k
    rem = (total - k) % hop
    return total + (hop - rem if rem else 0)


def num_frames(n: int, k: int = FFT_SIZE, hop: int = HOP) -> int:
    return (padded_length(n, k, hop) - k) // hop + 1


def frame_signal(x: np.ndarray, k: int = FFT_SIZE, hop: int = HOP) -> np.ndarray:
    """Zero-pad and cut into overlapping frames, shape (T, k)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise DataError(f"expected a non-empty 1-D waveform, got shape {x.shape}")
    buf = np.zeros(padded_length(x.size, k, hop))
    buf[k:k + x.size] = x
    t = (buf.size - k) // hop + 1
    idx = np.arange(t)[:, None] * hop + np.arange(k)[None, :]
    return buf[idx]


def stft(x: np.ndarray, k: int = FFT_SIZE, hop: int = HOP) -> np.ndarray:
    """Hann-windowed onesided STFT as a real (T, k//2 + 1, 2) array."""
    spec = np.fft.rfft(frame_signal(x, k, hop) * hann_window(k), n=k, axis=-1)
    return np.stack([spec.real, spec.imag], axis=-1)


def synthesis_envelope(t: int, k: int = FFT_SIZE, hop: int = HOP) -> np.ndarray:
    """Overlap-added squared analysis window for ``t`` frames."""
    w2 = hann_window(k) ** 2
    env = np.zeros((t - 1) * hop + k)
    for i in range(t):
        env[i * hop:i * hop + k] += w2
    return env


def istft(spec: np.ndarray, out_len: int, k: int = FFT_SIZE, hop: int = HOP) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft`, trimmed to ``out_len`` samples."""
    spec = np.asarray(spec, dtype=np.float64)
    if spec.ndim != 3 or spec.shape[1:] != (k // 2 + 1, 2):
        raise DataError(f"expected a (T, {k // 2 + 1}, 2) spectrogram, got {spec.shape}")
    t = spec.shape[0]
    frames = np.fft.irfft(spec[..., 0] + 1j * spec[..., 1], n=k, axis=-1) * hann_window(k)
    length = (t - 1) * hop + k
    if out_len > length - k:
        raise DataError(f"requested {out_len} samples but only {length - k} are synthesizable")
    out = np.zeros(length)
    for i in range(t):
        out[i * hop:i * hop + k] += frames[i]
    env = synthesis_envelope(t, k, hop)
    nz = env > 1e-10
    out[nz] /= env[nz]
    out[~nz] = 0.0
    return out[k:k + out_len]


def power(x: np.ndarray) -> float:
    return float(np.mean(np.square(np.asarray(x, dtype=np.float64))))


def fit_noise(noise: np.ndarray, n: int, offset: int = 0) -> np.ndarray:
    """Cyclically tile ``noise`` and take ``n`` samples starting at ``offset``."""
    noise = np.asarray(noise, dtype=np.float64)
    if noise.size == 0:
        raise DataError("empty noise signal")
    idx = (offset + np.arange(n)) % noise.size
    return noise[idx]


def mix_at_snr(clean: np.ndarray, noise: np.ndarray, snr_db: float, offset: int = 0):
    """Scale ``noise`` to sit ``snr_db`` below ``clean`` and add them.

    Returns ``(noisy, scaled_noise)``, both the length of ``clean``.
    """
    clean = np.asarray(clean, dtype=np.float64)
    seg = fit_noise(noise, clean.size, offset)
    pc, pn = power(clean), power(seg)
    if pc == 0.0:
        raise DataError("clean signal is silent; SNR undefined")
    if pn == 0.0:
        raise DataError("noise segment is silent; cannot reach a finite SNR")
    scaled = seg * np.sqrt(pc / (pn * 10.0 ** (snr_db / 10.0)))
    return clean + scaled, scaled


def snr_db(clean: np.ndarray, noise: np.ndarray) -> float:
    return 10.0 * np.log10(power(clean) / power(noise))


def ssnr(ref: np.ndarray, est: np.ndarray, frame: int = FFT_SIZE, hop: int = HOP,
         floor_db: float = -10.0, ceil_db: float = 35.0) -> float:
    """Segmental SNR: clamped per-frame SNRs averaged over frames with reference energy."""
    ref = np.asarray(ref, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    n = min(ref.size, est.size)
    ref, est = ref[:n], est[:n]
    if n == 0:
        raise DataError("empty signals")
    starts = np.arange(0, max(n - frame, 0) + 1, hop)
    vals = []
    for s in starts:
        r = ref[s:s + frame]
        e = r - est[s:s + frame]
        sig = float(np.dot(r, r))
        if sig == 0.0:
            continue
        err = float(np.dot(e, e))
        val = ceil_db if err == 0.0 else 10.0 * np.log10(sig / err)
        vals.append(min(max(val, floor_db), ceil_db))
    if not vals:
        raise DataError("reference has no frame with nonzero energy")
    return float(np.mean(vals))


# -- WAV I/O -------------------------------------------------------------------

def read_wav(path) -> np.ndarray:
    """Read mono 16-bit PCM at 16 kHz as float64 samples in [-1, 1)."""
    try:
        with wave.open(str(path), "rb") as fh:
            ch, width, rate = fh.getnchannels(), fh.getsampwidth(), fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except wave.Error as exc:
        raise WavFormatError(f"{path}: unsupported WAV ({exc})") from None
    except (OSError, EOFError) as exc:
        raise DataError(f"{path}: cannot read ({exc})") from None
    if ch != 1:
        raise WavFormatError(f"{path}: expected mono, got {ch} channels")
    if width != 2:
        raise WavFormatError(f"{path}: expected 16-bit PCM, got {8 * width}-bit samples")
    if rate != SAMPLE_RATE:
        raise WavFormatError(f"{path}: expected {SAMPLE_RATE} Hz, got {rate} Hz")
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0


def write_wav(path, samples: np.ndarray) -> None:
    """Write float samples as mono 16-bit PCM at 16 kHz (clipped, rounded)."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1 or not np.all(np.isfinite(x)):
        raise DataError("samples must be a finite 1-D array")
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(SAMPLE_RATE)
        fh.writeframes(pcm.tobytes())
