import numpy as np
import pytest

from pfpl.data import mix_at_snr
from pfpl.dsp import Waveform, write_wav


def speechlike(n_samples: int, seed: int = 0, sample_rate: int = 16000) -> Waveform:
    """Harmonic series with syllable-rate amplitude modulation plus a noise floor."""
    rng = np.random.default_rng(seed)
    t = np.arange(n_samples) / sample_rate
    f0 = 180.0 + 40.0 * np.sin(2 * np.pi * 0.7 * t)
    phase = 2 * np.pi * np.cumsum(f0) / sample_rate
    tone = sum(
        amp * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
        for k, amp in ((1, 0.4), (2, 0.25), (3, 0.15), (4, 0.08))
    )
    envelope = 0.35 + 0.65 * np.sin(2 * np.pi * 3.1 * t + 0.5) ** 2
    samples = envelope * tone + 0.004 * rng.standard_normal(n_samples)
    return Waveform(samples.astype(np.float32), sample_rate)


def build_corpus(root, n_train=2, n_test=2, n_samples=20000, snr_db=5.0,
                 noisy_equals_clean=False):
    """Write a paired clean/noisy fixture tree in the standard layout."""
    layout = {
        "train": ("clean_trainset_28spk_wav", "noisy_trainset_28spk_wav", n_train),
        "test": ("clean_testset_wav", "noisy_testset_wav", n_test),
    }
    seed = 100
    for split, (clean_dir, noisy_dir, count) in layout.items():
        (root / clean_dir).mkdir(parents=True, exist_ok=True)
        (root / noisy_dir).mkdir(parents=True, exist_ok=True)
        for i in range(count):
            clean = speechlike(n_samples, seed=seed)
            if noisy_equals_clean:
                noisy = clean
            else:
                noise = Waveform(
                    np.random.default_rng(seed + 7000)
                    .standard_normal(n_samples)
                    .astype(np.float32)
                )
                noisy = mix_at_snr(clean, noise, snr_db)
            write_wav(root / clean_dir / f"p{seed}_{i:03d}.wav", clean)
            write_wav(root / noisy_dir / f"p{seed}_{i:03d}.wav", noisy)
            seed += 1
    return root


@pytest.fixture
def corpus_root(tmp_path):
    return build_corpus(tmp_path / "corpus")
