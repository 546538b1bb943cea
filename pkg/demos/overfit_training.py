"""Overfit the enhancer on two utterances as a training sanity check.

A capacity-adequate model must be able to memorize two fixture pairs; the
loss should collapse and the enhanced output should beat the noisy input's
segmental SNR by a wide margin. Takes a few minutes on CPU. A shorter run
(steps=100) already shows the trend.
"""

import tempfile
from pathlib import Path

import numpy as np

from pfpl import (
    SegmentSpec,
    TINY_CONV_SPEC,
    TrainConfig,
    Waveform,
    build_model,
    enhance,
    load_encoder,
    load_pair,
    mix_at_snr,
    scan_corpus,
    seg_snr,
    train,
    write_wav,
)

STEPS = 100

root = Path(tempfile.mkdtemp()) / "corpus"
(root / "clean_trainset_wav").mkdir(parents=True)
(root / "noisy_trainset_wav").mkdir(parents=True)
rng = np.random.default_rng(0)
sr = 16000
for i in range(2):
    t = np.arange(20000) / sr
    phase = 2 * np.pi * np.cumsum(170 + 25 * np.sin(2 * np.pi * 0.9 * t + i)) / sr
    clean = Waveform(
        ((0.4 * np.sin(phase) + 0.2 * np.sin(2 * phase))
         * (0.4 + 0.6 * np.sin(2 * np.pi * 3 * t) ** 2)
         + 0.004 * rng.standard_normal(20000)).astype(np.float32),
        sr,
    )
    noise = Waveform(rng.standard_normal(20000).astype(np.float32), sr)
    noisy = mix_at_snr(clean, noise, snr_db=5.0)
    write_wav(root / "clean_trainset_wav" / f"u{i}.wav", clean)
    write_wav(root / "noisy_trainset_wav" / f"u{i}.wav", noisy)

corpus = scan_corpus(root)
model = build_model("small10", seed=0)
encoder = load_encoder("random:7", conv=TINY_CONV_SPEC)  # offline stand-in
cfg = TrainConfig(
    loss="pfpl",
    steps=STEPS,
    batch_size=2,
    learning_rate=1e-3,
    seed=0,
    crop=SegmentSpec(length=16384),
)

print(f"training small10 ({model.num_parameters():,} params) for {STEPS} steps...")
report = train(cfg, corpus, model, encoder)
print(f"loss: {report.initial_loss:.4f} -> {report.final_loss:.4f} "
      f"({report.final_loss / report.initial_loss:.1%} of initial, "
      f"{report.wall_seconds:.0f}s)")

for utterance_id in corpus.ids():
    clean, noisy = load_pair(corpus, utterance_id)
    enhanced = enhance(model, noisy)
    print(f"{utterance_id}: segSNR {seg_snr(clean, noisy):+6.2f} dB (noisy) -> "
          f"{seg_snr(clean, enhanced):+6.2f} dB (enhanced)")
