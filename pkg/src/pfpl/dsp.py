"""Short-time Fourier analysis/synthesis with exact round-trip reconstruction.

The tensor-level helpers (`stft_tensor`, `istft_tensor`) are differentiable and
batched; the `Waveform`/`ComplexSpectrogram` wrappers are the numpy-facing API
used by data loading, metrics, and analysis. Synthesis divides by the summed
squared window, so any config passing the overlap-add validity check inverts
exactly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.io.wavfile
import scipy.signal
import torch

from .exceptions import InvalidInput, IoError

DEFAULT_SAMPLE_RATE = 16000

_WINDOW_FNS = {
    "hann": lambda n: torch.hann_window(n, periodic=True, dtype=torch.float64),
    "hamming": lambda n: torch.hamming_window(n, periodic=True, dtype=torch.float64),
    "rect": lambda n: torch.ones(n, dtype=torch.float64),
}


@dataclass(frozen=True)
class Waveform:
    """Mono time-domain signal. Samples are float32/float64 in nominal [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim != 1:
            raise InvalidInput(f"waveform must be 1-D, got shape {samples.shape}")
        if samples.dtype not in (np.float32, np.float64):
            samples = samples.astype(np.float32)
        if not np.all(np.isfinite(samples)):
            raise InvalidInput("waveform contains NaN or Inf samples")
        if self.sample_rate <= 0:
            raise InvalidInput(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def tensor(self, dtype: torch.dtype | None = None) -> torch.Tensor:
        return torch.as_tensor(self.samples, dtype=dtype)


@dataclass(frozen=True)
class StftConfig:
    """Analysis/synthesis parameters. Defaults: 64 ms Hann, 16 ms hop, centered."""

    window_length: int = 1024
    hop_length: int = 256
    window: str = "hann"
    centered: bool = True

    def __post_init__(self):
        if self.window_length <= 0 or self.hop_length <= 0:
            raise InvalidInput("window_length and hop_length must be positive")
        if self.hop_length > self.window_length:
            raise InvalidInput(
                f"hop_length {self.hop_length} exceeds window_length {self.window_length}"
            )
        if self.window not in _WINDOW_FNS:
            raise InvalidInput(
                f"unknown window {self.window!r}; choose from {sorted(_WINDOW_FNS)}"
            )
        env = _ola_envelope(self.window_tensor(torch.float64), self.hop_length)
        if env.min().item() <= 1e-11:
            raise InvalidInput(
                f"window {self.window!r} violates the overlap-add condition at "
                f"hop {self.hop_length}: synthesis envelope reaches zero"
            )

    @property
    def bins(self) -> int:
        return self.window_length // 2 + 1

    def frames_for(self, n_samples: int) -> int:
        if self.centered:
            return n_samples // self.hop_length + 1
        return (n_samples - self.window_length) // self.hop_length + 1

    def window_tensor(self, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        return _WINDOW_FNS[self.window](self.window_length).to(dtype)


def _ola_envelope(window: torch.Tensor, hop: int) -> torch.Tensor:
    # steady-state squared-window overlap-add envelope over one full window span
    n = window.shape[0]
    sq = window**2
    reps = 2 * (n // hop) + 1
    env = torch.zeros(n + reps * hop, dtype=window.dtype)
    for m in range(reps):
        env[m * hop : m * hop + n] += sq
    mid = reps * hop // 2
    return env[mid : mid + hop]


@dataclass(frozen=True)
class ComplexSpectrogram:
    """frames x bins complex matrix plus the config used to produce it."""

    values: np.ndarray
    config: StftConfig
    original_length: int

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise InvalidInput(f"spectrogram must be 2-D, got shape {values.shape}")
        if not np.iscomplexobj(values):
            values = values.astype(np.complex64)
        if values.shape[1] != self.config.bins:
            raise InvalidInput(
                f"expected {self.config.bins} bins for window_length "
                f"{self.config.window_length}, got {values.shape[1]}"
            )
        if self.original_length <= 0:
            raise InvalidInput("original_length must be positive")
        object.__setattr__(self, "values", values)

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def bins(self) -> int:
        return self.values.shape[1]


def stft_tensor(x: torch.Tensor, cfg: StftConfig) -> torch.Tensor:
    """Differentiable STFT. Input (..., N) real; output (..., bins, frames) complex."""
    if x.shape[-1] < cfg.hop_length:
        raise InvalidInput(
            f"waveform of {x.shape[-1]} samples is shorter than one hop "
            f"({cfg.hop_length} samples)"
        )
    window = cfg.window_tensor(x.dtype if x.dtype.is_floating_point else torch.float32)
    squeeze = x.dim() == 1
    if squeeze:
        x = x.unsqueeze(0)
    out = torch.stft(
        x,
        n_fft=cfg.window_length,
        hop_length=cfg.hop_length,
        win_length=cfg.window_length,
        window=window.to(x.device),
        center=cfg.centered,
        pad_mode="reflect",
        return_complex=True,
    )
    return out.squeeze(0) if squeeze else out


def istft_tensor(spec: torch.Tensor, cfg: StftConfig, length: int) -> torch.Tensor:
    """Differentiable inverse STFT. Input (..., bins, frames) complex; output (..., length)."""
    real_dtype = torch.float64 if spec.dtype == torch.complex128 else torch.float32
    window = cfg.window_tensor(real_dtype)
    squeeze = spec.dim() == 2
    if squeeze:
        spec = spec.unsqueeze(0)
    try:
        out = torch.istft(
            spec,
            n_fft=cfg.window_length,
            hop_length=cfg.hop_length,
            win_length=cfg.window_length,
            window=window.to(spec.device),
            center=cfg.centered,
            length=length,
        )
    except RuntimeError as exc:
        # uncentered synthesis with a tapered window: edge envelope reaches
        # zero, so those samples are unrecoverable
        raise InvalidInput(
            f"synthesis impossible for this config (window {cfg.window!r}, "
            f"centered={cfg.centered}): {exc}"
        ) from exc
    return out.squeeze(0) if squeeze else out


def stft(w: Waveform, cfg: StftConfig | None = None) -> ComplexSpectrogram:
    """Analyze a waveform into a frames x bins complex spectrogram."""
    cfg = cfg or StftConfig()
    if not cfg.centered and len(w) < cfg.window_length:
        raise InvalidInput(
            f"uncentered analysis needs at least window_length "
            f"({cfg.window_length}) samples, got {len(w)}"
        )
    values = stft_tensor(w.tensor(), cfg).numpy().T  # (frames, bins)
    return ComplexSpectrogram(values=values, config=cfg, original_length=len(w))


def istft(s: ComplexSpectrogram) -> Waveform:
    """Resynthesize a waveform; exact inverse of `stft` for unmodified input."""
    if s.config is None or s.original_length is None:
        raise InvalidInput("spectrogram is missing its config or original_length")
    expected = s.config.frames_for(s.original_length)
    if s.frames != expected:
        raise InvalidInput(
            f"spectrogram has {s.frames} frames but original_length "
            f"{s.original_length} implies {expected}"
        )
    spec = torch.as_tensor(s.values).T  # (bins, frames)
    samples = istft_tensor(spec, s.config, s.original_length).numpy()
    return Waveform(samples=samples, sample_rate=DEFAULT_SAMPLE_RATE)


def read_wav(path: str | Path, target_rate: int = DEFAULT_SAMPLE_RATE) -> Waveform:
    """Load a mono WAV (16-bit PCM or 32-bit float), resampling if needed."""
    path = Path(path)
    try:
        rate, data = scipy.io.wavfile.read(path)
    except FileNotFoundError:
        raise IoError(f"no such file: {path}") from None
    except Exception as exc:
        raise IoError(f"cannot read WAV {path}: {exc}") from exc
    if data.ndim != 1:
        raise InvalidInput(f"{path}: only mono WAV is supported, got {data.ndim} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float32) / 32768.0
    elif data.dtype == np.float32:
        samples = data
    elif data.dtype == np.int32:
        samples = data.astype(np.float32) / 2147483648.0
    else:
        raise InvalidInput(f"{path}: unsupported WAV sample format {data.dtype}")
    if rate != target_rate:
        warnings.warn(
            f"{path.name}: resampling {rate} Hz -> {target_rate} Hz", stacklevel=2
        )
        samples = scipy.signal.resample_poly(
            samples.astype(np.float64), target_rate, rate
        ).astype(np.float32)
    return Waveform(samples=samples, sample_rate=target_rate)


def write_wav(path: str | Path, w: Waveform, fmt: str = "float32") -> None:
    """Write a mono WAV as 32-bit float (default) or 16-bit PCM."""
    path = Path(path)
    if fmt == "float32":
        data = w.samples.astype(np.float32)
    elif fmt == "pcm16":
        data = np.clip(np.round(w.samples * 32767.0), -32768, 32767).astype(np.int16)
    else:
        raise InvalidInput(f"unsupported WAV format {fmt!r}; use float32 or pcm16")
    try:
        scipy.io.wavfile.write(path, w.sample_rate, data)
    except Exception as exc:
        raise IoError(f"cannot write WAV {path}: {exc}") from exc
