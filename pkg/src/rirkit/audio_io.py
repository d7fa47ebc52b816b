"""WAV reading/writing and sample-rate conversion."""

from __future__ import annotations

import warnings
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import signal as sps
from scipy.io import wavfile

from .dsp import Waveform
from .errors import InvalidValueError

_INT_SCALE = {np.dtype(np.int16): 32768.0, np.dtype(np.int32): 2147483648.0}


def read_wav(path: str | Path) -> Waveform:
    """Read a WAV file (16-bit PCM or 32-bit float) as a mono waveform.

    Multi-channel inputs keep channel 0 with a warning; integer PCM is
    scaled to [-1, 1).
    """
    rate, data = wavfile.read(str(path))
    if data.ndim == 2:
        warnings.warn(f"{path}: {data.shape[1]} channels, using channel 0", stacklevel=2)
        data = data[:, 0]
    if data.dtype in _INT_SCALE:
        samples = data.astype(np.float64) / _INT_SCALE[data.dtype]
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise InvalidValueError(f"{path}: unsupported WAV sample format {data.dtype}")
    return Waveform(samples, int(rate))


def write_wav(path: str | Path, w: Waveform) -> None:
    """Write a mono 32-bit float WAV."""
    wavfile.write(str(path), w.sample_rate_hz, w.samples.astype(np.float32))


def resample(w: Waveform, target_rate_hz: int) -> Waveform:
    """Rate-convert with a polyphase windowed-sinc filter."""
    if target_rate_hz == w.sample_rate_hz:
        return w
    frac = Fraction(int(target_rate_hz), w.sample_rate_hz)
    out = sps.resample_poly(w.samples, frac.numerator, frac.denominator)
    return Waveform(out, int(target_rate_hz))


def truncate_pad(w: Waveform, duration_s: float) -> Waveform:
    """Cut or zero-pad to an exact duration."""
    n = int(round(duration_s * w.sample_rate_hz))
    x = w.samples[:n]
    if x.size < n:
        x = np.concatenate([x, np.zeros(n - x.size)])
    return Waveform(x, w.sample_rate_hz)
