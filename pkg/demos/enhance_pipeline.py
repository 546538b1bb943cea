"""Walk through the enhancement pipeline on a synthetic noisy utterance.

The chain is: waveform -> STFT -> complex ratio mask -> masked spectrogram
-> inverse STFT. An untrained model produces an arbitrary (but bounded)
mask; the point here is the plumbing, shapes, and the perfect-reconstruction
property of the analysis/synthesis pair.
"""

import numpy as np

from pfpl import (
    StftConfig,
    Waveform,
    build_model,
    enhance,
    estimate_mask,
    istft,
    mix_at_snr,
    stft,
)

rng = np.random.default_rng(0)
sr = 16000

# a crude vowel-like signal: harmonic stack with a slow envelope
t = np.arange(2 * sr) / sr
phase = 2 * np.pi * 170 * t
clean = Waveform(
    ((0.4 * np.sin(phase) + 0.2 * np.sin(2 * phase) + 0.1 * np.sin(3 * phase))
     * (0.4 + 0.6 * np.sin(2 * np.pi * 2.5 * t) ** 2)).astype(np.float32),
    sr,
)
noise = Waveform(rng.standard_normal(len(clean)).astype(np.float32), sr)
noisy = mix_at_snr(clean, noise, snr_db=5.0)

cfg = StftConfig()  # 64 ms Hann window, 16 ms hop, centered
spec = stft(noisy, cfg)
print(f"spectrogram: {spec.frames} frames x {spec.bins} bins")

# analysis/synthesis alone is lossless
rebuilt = istft(spec)
rel = np.linalg.norm(rebuilt.samples - noisy.samples) / np.linalg.norm(noisy.samples)
print(f"istft(stft(x)) relative error: {rel:.2e}")

model = build_model("small10", seed=0)
print(f"model parameters: {model.num_parameters():,}")

mask = estimate_mask(model, spec)
print(f"mask shape {mask.shape}, max |M| = {np.abs(mask.values).max():.6f} (< 1 always)")

enhanced = enhance(model, noisy, cfg)
print(f"enhanced length {len(enhanced)} == input length {len(noisy)}")
