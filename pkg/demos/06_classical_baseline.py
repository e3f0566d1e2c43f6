#!/usr/bin/env python3
"""The classical per-bin magnitude-MSE enhancer, for comparison.

One network sees 30 frames of log magnitudes and predicts sigmoid gains
for every STFT bin of the 5 most recent frames; overlapping predictions
are averaged. Same trainer, same data, different domain.
"""

from envgain import pseudo_corpus, split_noise, synth_ssn
from envgain.baseline import build_magnitude_dataset, classical_enhance, train_classical
from envgain.mixing import mix_at_snr
from envgain.neural import TrainConfig
from envgain.pipeline import score_elc

train_speech = pseudo_corpus(30, 2.5, seed=500)
val_speech = pseudo_corpus(6, 2.5, seed=600)
test_speech = pseudo_corpus(4, 2.5, seed=700)
noise = synth_ssn(train_speech[:15], 45.0, seed=800)
noise_train, noise_val, noise_test = split_noise(noise, 20.0, 10.0, 15.0)

train_ds = build_magnitude_dataset(train_speech, noise_train, seed=501)
val_ds = build_magnitude_dataset(val_speech, noise_val, seed=601)
print(f"{train_ds.n_frames} training steps of 30-frame context")

config = TrainConfig(objective="emse", initial_lr_per_sample=3e-4, max_epochs=8, seed=1)
system, report = train_classical(train_ds, val_ds, config, hidden=(64, 64, 64),
                                 max_train_frames=4000, max_val_frames=1000)
print("validation cost per epoch:",
      ", ".join(f"{e.validation_cost:.4f}" for e in report.epochs))

print("\nSNR    unprocessed ELC    baseline ELC")
for snr in (-5.0, 0.0, 5.0):
    total_up = total_enh = 0.0
    for i, clean in enumerate(test_speech):
        noisy, _ = mix_at_snr(clean, noise_test, snr, rng=900 + i)
        enhanced = classical_enhance(system, noisy)
        total_up += score_elc(clean, noisy)
        total_enh += score_elc(clean, enhanced)
    n = len(test_speech)
    print(f"{snr:+5.1f}       {total_up / n:6.4f}            {total_enh / n:6.4f}")
