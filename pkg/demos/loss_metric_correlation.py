"""How well does each training loss track the objective metrics?

For every test utterance we enhance, evaluate each loss against the clean
reference, compute the metric bundle, and correlate per (loss, metric)
pair. With an untrained model and a synthetic corpus the numbers are not
meaningful science; the demo shows the harness and its CSV outputs.
"""

import tempfile
from pathlib import Path

import numpy as np

from pfpl import (
    LossSpec,
    TINY_CONV_SPEC,
    Waveform,
    build_model,
    correlation_report,
    load_encoder,
    mix_at_snr,
    scan_corpus,
    write_wav,
)
from pfpl.analysis import export_features
from pfpl.data import load_pair

root = Path(tempfile.mkdtemp()) / "corpus"
(root / "clean_testset_wav").mkdir(parents=True)
(root / "noisy_testset_wav").mkdir(parents=True)
rng = np.random.default_rng(0)
sr = 16000
for i in range(6):
    t = np.arange(24000) / sr
    phase = 2 * np.pi * np.cumsum(160 + 40 * np.sin(2 * np.pi * (0.5 + 0.2 * i) * t)) / sr
    clean = Waveform(
        ((0.4 * np.sin(phase) + 0.2 * np.sin(2 * phase))
         * (0.35 + 0.65 * np.sin(2 * np.pi * 3 * t + i) ** 2)
         + 0.004 * rng.standard_normal(24000)).astype(np.float32),
        sr,
    )
    noise = Waveform(rng.standard_normal(24000).astype(np.float32), sr)
    noisy = mix_at_snr(clean, noise, snr_db=float(rng.uniform(0, 15)))
    write_wav(root / "clean_testset_wav" / f"u{i}.wav", clean)
    write_wav(root / "noisy_testset_wav" / f"u{i}.wav", noisy)

corpus = scan_corpus(root)
model = build_model("small10", seed=0)
encoder = load_encoder("random:7", conv=TINY_CONV_SPEC)

losses = [
    LossSpec("mae"),
    LossSpec("mse"),
    LossSpec("wsdr"),
    LossSpec("pfpl", encoder=encoder),
]
out_dir = Path(tempfile.mkdtemp()) / "report"
report = correlation_report(corpus, model, losses, out_dir=out_dir)

header = "".join(f"{m:>10}" for m in report.metric_names)
print(f"{'loss':<8}{header}")
for loss_name in report.loss_names:
    cells = "".join(
        f"{report.cell(loss_name, m):>10.3f}" if report.cell(loss_name, m) is not None
        else f"{'n/a':>10}"
        for m in report.metric_names
    )
    print(f"{loss_name:<8}{cells}")
print(f"\nwrote {out_dir}/correlation_report.csv and pcc_matrix.csv")

# labeled per-frame features for external projection (e.g. t-SNE)
items = []
for utterance_id in corpus.ids("test")[:2]:
    clean, noisy = load_pair(corpus, utterance_id)
    items.append((clean, "clean"))
    items.append((noisy, "noisy"))
features_csv = export_features(encoder, items, out_dir / "features.csv")
print(f"wrote {features_csv} (one row per encoder frame)")
