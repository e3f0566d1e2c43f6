"""envgain: speech enhancement driven by one-third-octave envelope correlation.

Library layout::

 signal_io -- WAV read/write, resampling to 10 kHz, test tones
 stft      -- Hann STFT analysis/synthesis and spectral gains
 octave    -- band layout, temporal envelopes, gain back-mapping
 cost      -- envelope correlation (ELC) / envelope MSE objectives + gradients
 neural    -- from-scratch MLP, batch norm, SGD trainer, model files
 mixing    -- active-level SNR mixing, noise synthesis, dataset assembly
 pipeline  -- end-to-end enhancement, scoring, evaluation tables
 baseline  -- classical spectral-magnitude MSE enhancer
"""

from .cost import elc, elc_grad, elc_grad_norm, emse, emse_grad
from .mixing import (
    active_speech_level,
    build_dataset,
    mix_at_snr,
    pseudo_corpus,
    pseudo_speech,
    split_noise,
    synth_babble,
    synth_ssn,
)
from .octave import (
    BandLayout,
    average_overlapping_gains,
    band_gains_to_stft_gains,
    build_band_layout,
    envelopes,
    frame_envelope,
)
from .pipeline import (
    EnhancementSystem,
    enhance,
    gain_correlation,
    load_system,
    report_tables,
    save_system,
    score_approx_stoi,
    score_elc,
    train_enhancement_system,
)
from .signal_io import WORKING_RATE_HZ, TimeSignal, read_wav, synth_tone, to_working_rate, write_wav
from .stft import Spectrogram, StftConfig, analyze, apply_gain, synthesize

__version__ = "0.1.0"

__all__ = [
    "WORKING_RATE_HZ",
    "TimeSignal",
    "read_wav",
    "write_wav",
    "to_working_rate",
    "synth_tone",
    "StftConfig",
    "Spectrogram",
    "analyze",
    "synthesize",
    "apply_gain",
    "BandLayout",
    "build_band_layout",
    "envelopes",
    "frame_envelope",
    "band_gains_to_stft_gains",
    "average_overlapping_gains",
    "elc",
    "elc_grad",
    "elc_grad_norm",
    "emse",
    "emse_grad",
    "active_speech_level",
    "mix_at_snr",
    "synth_ssn",
    "synth_babble",
    "split_noise",
    "pseudo_speech",
    "pseudo_corpus",
    "build_dataset",
    "EnhancementSystem",
    "train_enhancement_system",
    "enhance",
    "score_elc",
    "score_approx_stoi",
    "gain_correlation",
    "report_tables",
    "save_system",
    "load_system",
]
