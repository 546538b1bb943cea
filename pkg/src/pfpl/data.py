"""Corpus ingestion, pair loading, segmentation, and synthetic mixing.

Corpora follow the paired-by-filename convention: sibling ``clean_*`` /
``noisy_*`` directories whose names also carry the train/test split, e.g.
``clean_trainset_28spk_wav`` next to ``noisy_trainset_28spk_wav``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import DEFAULT_SAMPLE_RATE, Waveform, read_wav
from .exceptions import EmptyCorpus, InvalidInput, PairingError

DEFAULT_CROP = 16384


@dataclass(frozen=True)
class CorpusEntry:
    utterance_id: str
    clean_path: Path
    noisy_path: Path
    split: str  # train | test


@dataclass(frozen=True)
class CorpusIndex:
    entries: tuple[CorpusEntry, ...]

    def __post_init__(self):
        ids = [e.utterance_id for e in self.entries]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise PairingError(f"duplicate utterance ids: {dupes}")

    def __len__(self) -> int:
        return len(self.entries)

    def ids(self, split: str | None = None) -> list[str]:
        return [e.utterance_id for e in self.entries if split in (None, e.split)]

    def entry(self, utterance_id: str) -> CorpusEntry:
        for e in self.entries:
            if e.utterance_id == utterance_id:
                return e
        raise KeyError(utterance_id)


@dataclass(frozen=True)
class SegmentSpec:
    length: int = DEFAULT_CROP
    hop: int = DEFAULT_CROP
    pad_policy: str = "drop_last"  # reflect | zero | drop_last

    def __post_init__(self):
        if self.length <= 0 or self.hop <= 0:
            raise InvalidInput("segment length and hop must be positive")
        if self.pad_policy not in ("reflect", "zero", "drop_last"):
            raise InvalidInput(f"unknown pad policy {self.pad_policy!r}")


def scan_corpus(root: str | Path) -> CorpusIndex:
    """Index clean/noisy WAV pairs under `root`, inferring splits from dir names."""
    root = Path(root)
    if not root.exists():
        raise InvalidInput(f"corpus root does not exist: {root}")
    clean_dirs = sorted(
        d for d in root.iterdir() if d.is_dir() and d.name.startswith("clean")
    )
    if not clean_dirs:
        raise EmptyCorpus(f"no clean_* directories under {root}")

    entries: list[CorpusEntry] = []
    problems: list[str] = []
    for clean_dir in clean_dirs:
        noisy_dir = root / ("noisy" + clean_dir.name[len("clean"):])
        if not noisy_dir.is_dir():
            problems.append(f"{clean_dir.name}: no sibling {noisy_dir.name}")
            continue
        split = "test" if "test" in clean_dir.name.lower() else "train"
        clean_files = {p.name: p for p in clean_dir.glob("*.wav")}
        noisy_files = {p.name: p for p in noisy_dir.glob("*.wav")}
        for name in sorted(set(clean_files) | set(noisy_files)):
            if name not in noisy_files:
                problems.append(f"{clean_dir.name}/{name}: no noisy sibling")
            elif name not in clean_files:
                problems.append(f"{noisy_dir.name}/{name}: no clean sibling")
            else:
                entries.append(
                    CorpusEntry(
                        utterance_id=f"{split}/{Path(name).stem}",
                        clean_path=clean_files[name],
                        noisy_path=noisy_files[name],
                        split=split,
                    )
                )
    if problems:
        raise PairingError("unpaired corpus files: " + "; ".join(problems))
    if not entries:
        raise EmptyCorpus(f"no WAV pairs found under {root}")
    return CorpusIndex(entries=tuple(entries))


def load_pair(idx: CorpusIndex, utterance_id: str) -> tuple[Waveform, Waveform]:
    """Load (clean, noisy) at 16 kHz mono, zero-padding the shorter to match."""
    e = idx.entry(utterance_id)
    clean = read_wav(e.clean_path, DEFAULT_SAMPLE_RATE)
    noisy = read_wav(e.noisy_path, DEFAULT_SAMPLE_RATE)
    if len(clean) != len(noisy):
        warnings.warn(
            f"{utterance_id}: clean/noisy lengths differ "
            f"({len(clean)} vs {len(noisy)}); zero-padding the shorter",
            stacklevel=2,
        )
        n = max(len(clean), len(noisy))
        clean = Waveform(_pad_to(clean.samples, n), clean.sample_rate)
        noisy = Waveform(_pad_to(noisy.samples, n), noisy.sample_rate)
    return clean, noisy


def _pad_to(x: np.ndarray, n: int) -> np.ndarray:
    return np.pad(x, (0, n - x.shape[0])) if x.shape[0] < n else x


def mix_at_snr(clean: Waveform, noise: Waveform, snr_db: float, tile: bool = False) -> Waveform:
    """Return clean + g*noise with the gain g set so the mixture SNR is exact."""
    c = clean.samples.astype(np.float64)
    n = noise.samples.astype(np.float64)
    if n.shape[0] < c.shape[0]:
        if not tile:
            raise InvalidInput(
                f"noise ({n.shape[0]}) shorter than clean ({c.shape[0]}); "
                "pass tile=True to repeat it"
            )
        n = np.tile(n, int(np.ceil(c.shape[0] / n.shape[0])))
    n = n[: c.shape[0]]
    p_clean = float(np.mean(c**2))
    p_noise = float(np.mean(n**2))
    if p_clean == 0.0 or p_noise == 0.0:
        raise InvalidInput("mix_at_snr needs nonzero-power clean and noise")
    gain = np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    mixed = (c + gain * n).astype(clean.samples.dtype)
    return Waveform(samples=mixed, sample_rate=clean.sample_rate)


def segment(w: Waveform, spec: SegmentSpec) -> list[Waveform]:
    """Deterministic fixed-length segmentation; pad policy applies to the tail."""
    x = w.samples
    out: list[np.ndarray] = []
    start = 0
    while start + spec.length <= x.shape[0]:
        out.append(x[start : start + spec.length])
        start += spec.hop
    tail = x.shape[0] - start
    if tail > 0 and spec.pad_policy != "drop_last":
        chunk = x[start:]
        if spec.pad_policy == "zero":
            chunk = np.pad(chunk, (0, spec.length - tail))
        else:  # reflect
            chunk = _reflect_pad(chunk, spec.length)
        out.append(chunk)
    return [Waveform(samples=seg, sample_rate=w.sample_rate) for seg in out]


def _reflect_pad(x: np.ndarray, length: int) -> np.ndarray:
    # numpy reflect caps each application at len(x)-1; apply repeatedly
    while x.shape[0] < length:
        pad = min(length - x.shape[0], max(x.shape[0] - 1, 1))
        x = np.pad(x, (0, pad), mode="reflect" if x.shape[0] > 1 else "edge")
    return x


def random_crop_pair(
    clean: Waveform, noisy: Waveform, length: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Aligned random crop for training; zero-pads utterances shorter than `length`."""
    c, n = clean.samples, noisy.samples
    if c.shape[0] != n.shape[0]:
        raise InvalidInput("clean and noisy must share length before cropping")
    if c.shape[0] < length:
        c, n = _pad_to(c, length), _pad_to(n, length)
    offset = int(rng.integers(0, c.shape[0] - length + 1))
    return c[offset : offset + length], n[offset : offset + length]
