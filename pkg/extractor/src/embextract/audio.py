"""Audio decoding: WAV to mono float32 at 16 kHz."""

from __future__ import annotations

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

TARGET_RATE = 16_000

_PEAK = {
    np.dtype(np.int16): 32768.0,
    np.dtype(np.int32): 2147483648.0,
    np.dtype(np.uint8): 128.0,
}


class AudioError(ValueError):
    """File could not be decoded into usable samples."""


def load_wav_16k(path) -> np.ndarray:
    try:
        rate, samples = wavfile.read(path)
    except Exception as exc:
        raise AudioError(f"{path}: {exc}") from exc
    if samples.size == 0:
        raise AudioError(f"{path}: empty audio")
    peak = _PEAK.get(samples.dtype)
    if peak is not None:
        offset = peak if samples.dtype == np.uint8 else 0.0
        samples = (samples.astype(np.float32) - offset) / peak
    else:
        samples = samples.astype(np.float32)
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    if rate != TARGET_RATE:
        gcd = np.gcd(rate, TARGET_RATE)
        samples = resample_poly(samples, TARGET_RATE // gcd, rate // gcd)
    return np.ascontiguousarray(samples, dtype=np.float32)
