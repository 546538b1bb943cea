"""Objective quality metrics under increasing noise.

Segmental SNR, LLR, WSS, and the intelligibility correlation all degrade
monotonically as the SNR of a synthetic mixture drops. With an external
PESQ binary on PATH you would also get PESQ plus the composite scores; the
composites are shown here with a hypothetical PESQ value instead.
"""

import numpy as np

from pfpl import Waveform, composite, evaluate_pair, mix_at_snr

rng = np.random.default_rng(0)
sr = 16000
t = np.arange(2 * sr) / sr
phase = 2 * np.pi * np.cumsum(190 + 30 * np.sin(2 * np.pi * 0.8 * t)) / sr
clean = Waveform(
    ((0.4 * np.sin(phase) + 0.2 * np.sin(2 * phase) + 0.1 * np.sin(3 * phase))
     * (0.35 + 0.65 * np.sin(2 * np.pi * 3 * t) ** 2)
     + 0.004 * rng.standard_normal(2 * sr)).astype(np.float32),
    sr,
)
noise = Waveform(rng.standard_normal(len(clean)).astype(np.float32), sr)

print(f"{'SNR':>6} {'segSNR':>8} {'LLR':>7} {'WSS':>8} {'STOI':>6}")
for snr_db in (20, 10, 0, -10):
    noisy = mix_at_snr(clean, noise, snr_db)
    s = evaluate_pair(clean, noisy)  # no PESQ adapter -> composites absent
    print(f"{snr_db:>5}  {s.seg_snr:8.2f} {s.llr:7.3f} {s.wss:8.2f} {s.stoi:6.3f}")

# composite regressions over {PESQ, LLR, WSS, segSNR}, clipped to [1, 5]
print("\ncomposites for (pesq=2.0, llr=1.0, wss=50, segsnr=5):")
csig, cbak, covl = composite(2.0, 1.0, 50.0, 5.0)
print(f"  CSIG={csig:.3f}  CBAK={cbak:.3f}  COVL={covl:.3f}")
