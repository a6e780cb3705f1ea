"""Deterministic synthetic speech-like and noise signals for desk-scale experiments."""
from __future__ import annotations

import numpy as np

from .dsp import SAMPLE_RATE

FORMANTS = ((500.0, 80.0), (1500.0, 120.0), (2500.0, 160.0))


def speech_like(seconds: float, seed: int = 0, sr: int = SAMPLE_RATE) -> np.ndarray:
    """Voiced harmonic bursts with a gliding pitch, formant-shaped spectrum and pauses."""
    rng = np.random.default_rng(seed)
    n = int(round(seconds * sr))
    t = np.arange(n) / sr
    f0 = 110.0 + 60.0 * rng.random() + 25.0 * np.sin(2 * np.pi * (0.7 + rng.random()) * t)
    phase = 2 * np.pi * np.cumsum(f0) / sr
    shift = rng.uniform(0.85, 1.15)
    x = np.zeros(n)
    for h in range(1, 40):
        fh = h * f0.mean()
        if fh > 0.45 * sr:
            break
        gain = sum(1.0 / (1.0 + ((fh - c * shift) / bw) ** 2) for c, bw in FORMANTS) / h ** 0.5
        x += gain * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    # syllable envelope: 4 Hz bursts with random silences
    syl = 0.25
    env = np.zeros(n)
    start = 0.0
    while start < seconds:
        dur = syl * rng.uniform(0.6, 1.4)
        if rng.random() > 0.2:
            a = int(start * sr)
            b = min(int((start + dur) * sr), n)
            if b > a:
                env[a:b] = np.hanning(b - a) * rng.uniform(0.5, 1.0)
        start += dur + syl * rng.uniform(0.0, 0.5)
    x *= env
    return 0.1 * x / (np.max(np.abs(x)) + 1e-12)


def noise(seconds: float, kind: str = "white", seed: int = 0, sr: int = SAMPLE_RATE) -> np.ndarray:
    """Stationary noise: ``white``, ``pink`` (1/f power) or ``brown`` (1/f^2)."""
    rng = np.random.default_rng(seed)
    n = int(round(seconds * sr))
    w = rng.standard_normal(n)
    if kind == "white":
        x = w
    else:
        slope = {"pink": 0.5, "brown": 1.0}.get(kind)
        if slope is None:
            raise ValueError(f"unknown noise kind {kind!r}")
        spec = np.fft.rfft(w)
        f = np.arange(spec.size, dtype=np.float64)
        f[0] = 1.0
        x = np.fft.irfft(spec / f ** slope, n=n)
    return 0.1 * x / np.sqrt(np.mean(x ** 2))
