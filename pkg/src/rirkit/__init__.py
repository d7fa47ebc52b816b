"""rirkit: room-impulse-response analysis, synthesis, tokenization, and
conditioned-sampling toolkit."""

from .dsp import (
    AcousticParams,
    BandSet,
    EnergyDecayCurve,
    MeasureSet,
    MelEnergyProfile,
    Waveform,
    analyze,
    bandpass_filterbank,
    clarity_c80,
    definition_d50,
    detect_onset,
    energy_decay_curve,
    estimate_srd,
    mel_energy_profile,
    reverb_time,
    slot_names,
    srmr_lite,
)
from .params import (
    ClassGrid,
    ConditioningVector,
    QuantizedParams,
    default_grids,
    dequantize,
    dequantize_params,
    quantize,
    quantize_params,
    to_conditioning_vector,
)
from .synth import SynthReport, SynthTarget, anchor_rir, apply_mel_eq, synth_rir

__version__ = "0.1.0"
