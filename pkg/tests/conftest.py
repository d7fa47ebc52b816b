"""Shared oracles and corpus builders for the test suite."""

import math

import numpy as np
import pytest

from rirkit.dsp import BandSet, Waveform, bandpass_filterbank

#: ln(10^6): exponent giving 60 dB of energy decay over one reverberation time.
K60 = math.log(1e6)


def exponential_rir(t60_s: float, fs: int = 44100, length_factor: float = 1.5,
                    amplitude: float = 1.0) -> Waveform:
    """Deterministic single-slope RIR: pure exponential amplitude envelope."""
    t = np.arange(int(length_factor * t60_s * fs)) / fs
    return Waveform(amplitude * np.exp(-K60 / 2.0 * t / t60_s), fs)


def c80_closed_form(t60_s: float) -> float:
    """Clarity of an infinite exponential decay, split at 80 ms."""
    return 10.0 * math.log10(math.exp(K60 * 0.08 / t60_s) - 1.0)


def d50_closed_form(t60_s: float) -> float:
    """Definition of an infinite exponential decay, split at 50 ms."""
    return 100.0 * (1.0 - math.exp(-K60 * 0.05 / t60_s))


def banded_noise_rir(band_t60s, fs: int = 44100, duration_s: float = 2.0,
                     seed: int = 0) -> Waveform:
    """Noise-carrier RIR with an independent decay time per octave band."""
    bands = BandSet()
    assert len(band_t60s) == len(bands.centers_hz)
    n = int(duration_s * fs)
    margin = int(0.25 * fs)
    rng = np.random.default_rng(seed)
    noise = Waveform(rng.standard_normal(n + 2 * margin), fs)
    t = np.arange(n) / fs
    out = np.zeros(n)
    for t60, bw in zip(band_t60s, bandpass_filterbank(noise, bands)):
        carrier = bw.samples[margin: margin + n]
        carrier = carrier / np.sqrt(np.mean(carrier**2))
        out += carrier * np.exp(-K60 / 2.0 * t / t60)
    return Waveform(out / np.max(np.abs(out)), fs)


@pytest.fixture(scope="session")
def rir_corpus_32k():
    """Twelve deterministic synthetic RIRs at 32 kHz (1 s each)."""
    from rirkit.synth import grid_center_target, synth_rir
    corpus = []
    for i in range(12):
        target = grid_center_target(2 + (i % 6), i % 10, duration_s=1.0,
                                    sample_rate_hz=32000, seed=100 + i)
        corpus.append(synth_rir(target)[0])
    return corpus
