#!/usr/bin/env python3
"""Noise synthesis and active-level SNR mixing.

Generates pseudo-speech, measures its active level (which ignores the
pauses) against its overall RMS, fits speech-shaped noise to the corpus
spectrum, and shows that requested SNRs are hit exactly.
"""

import numpy as np
from scipy import signal as sp

from envgain import (
    active_speech_level,
    mix_at_snr,
    pseudo_corpus,
    pseudo_speech,
    synth_babble,
    synth_ssn,
)
from envgain.mixing import overall_level

speech = pseudo_speech(4.0, seed=3)
asl = active_speech_level(speech)
rms = overall_level(speech)
print(f"pseudo-speech: active level {asl:+.2f} dB, overall RMS {rms:+.2f} dB")
print(f"  (the {asl - rms:.2f} dB gap is the pauses not counting against the level)")

corpus = pseudo_corpus(8, 6.0, seed=4)
ssn = synth_ssn(corpus, 30.0, seed=5)
babble = synth_babble(corpus, num_speakers=6, duration_s=30.0, seed=6)

ref = np.concatenate([u.samples for u in corpus])
freqs, psd_ref = sp.welch(ref, 10000, nperseg=512)
_, psd_ssn = sp.welch(ssn.samples, 10000, nperseg=512)
print("\nSSN spectral fit (per one-third-octave band, level-aligned):")
for c in 150.0 * 2 ** (np.arange(0, 15, 2) / 3):
    sel = (freqs >= c * 2 ** (-1 / 6)) & (freqs < c * 2 ** (1 / 6))
    d = 10 * np.log10(psd_ssn[sel].sum() / psd_ref[sel].sum())
    d -= 10 * np.log10(psd_ssn.sum() / psd_ref.sum())
    print(f"  {c:7.1f} Hz: {d:+.2f} dB")

print("\nSNR exactness:")
for snr in (-5.0, 0.0, 5.0, 10.0):
    mixture, scaled = mix_at_snr(speech, ssn, snr, rng=7)
    measured = active_speech_level(speech) - overall_level(scaled)
    print(f"  requested {snr:+6.1f} dB -> measured {measured:+9.5f} dB")

print(f"\nbabble RMS: {np.sqrt(np.mean(babble.samples**2)):.6f} (normalized to 1)")
