"""Phonetic feature extraction from raw waveforms.

A strided 1-D conv stack downsamples the signal, then a length-preserving
causal context network produces the frame features the perceptual losses
compare. Backends: a pretrained checkpoint (adapter over the published
weight layout), a seed-deterministic random stand-in (so the whole test
suite runs offline), and an identity-framing backend for oracle tests.

All backends are frozen: parameters never receive gradient updates, but
gradients flow through to the waveform input.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .dsp import Waveform
from .exceptions import InvalidInput, LoadError

FEATURE_CHANNELS = 512


@dataclass(frozen=True)
class ConvSpec:
    """Conv stack geometry: per-layer kernels/strides plus the context net."""

    kernels: tuple[int, ...] = (10, 8, 4, 4, 4)
    strides: tuple[int, ...] = (5, 4, 2, 2, 2)
    channels: int = FEATURE_CHANNELS
    context_layers: int = 9
    context_kernel: int = 3

    def __post_init__(self):
        if len(self.kernels) != len(self.strides) or not self.kernels:
            raise InvalidInput("kernels and strides must be non-empty and equal length")
        if any(k <= 0 for k in self.kernels) or any(s <= 0 for s in self.strides):
            raise InvalidInput("kernels and strides must be positive")

    @property
    def total_stride(self) -> int:
        out = 1
        for s in self.strides:
            out *= s
        return out

    @property
    def receptive_field(self) -> int:
        rf, jump = 1, 1
        for k, s in zip(self.kernels, self.strides):
            rf += (k - 1) * jump
            jump *= s
        return rf

    def frames_for(self, n_samples: int) -> int:
        length = n_samples
        for k, s in zip(self.kernels, self.strides):
            length = (length - k) // s + 1
        return length


WAV2VEC_BASE = ConvSpec()
# reduced stack for desk-scale tests: receptive field 20 samples, stride 8
TINY_CONV_SPEC = ConvSpec(
    kernels=(8, 4), strides=(4, 2), channels=64, context_layers=2, context_kernel=3
)


@dataclass(frozen=True)
class FeatureSequence:
    """frames x channels real matrix of encoder outputs."""

    values: np.ndarray
    frame_stride: int
    source: str

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2 or values.shape[0] < 1:
            raise InvalidInput(f"features must be (frames, channels), got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InvalidInput("features contain non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]


class _ConvBlock(nn.Module):
    def __init__(self, c_in, c_out, kernel, stride, bias, causal_pad):
        super().__init__()
        self.causal_pad = (kernel - 1) if causal_pad else 0
        self.conv = nn.Conv1d(c_in, c_out, kernel, stride=stride, bias=bias)
        self.norm = nn.GroupNorm(1, c_out, affine=True)

    def forward(self, x):
        if self.causal_pad:
            x = nn.functional.pad(x, (self.causal_pad, 0))
        return nn.functional.relu(self.norm(self.conv(x)))


class _EncoderNet(nn.Module):
    def __init__(self, spec: ConvSpec):
        super().__init__()
        c = spec.channels
        ins = [1] + [c] * (len(spec.kernels) - 1)
        self.feature_layers = nn.ModuleList(
            _ConvBlock(i, c, k, s, bias=False, causal_pad=False)
            for i, k, s in zip(ins, spec.kernels, spec.strides)
        )
        self.context_layers = nn.ModuleList(
            _ConvBlock(c, c, spec.context_kernel, 1, bias=True, causal_pad=True)
            for _ in range(spec.context_layers)
        )

    def forward(self, x, tap: str = "context"):
        # x: (batch, samples) -> (batch, frames, channels)
        h = x.unsqueeze(1)
        for layer in self.feature_layers:
            h = layer(h)
        if tap == "conv":
            return h.transpose(1, 2)
        for layer in self.context_layers:
            h = layer(h)
        return h.transpose(1, 2)


class EncoderBackend:
    """Frozen feature extractor; thread-safe for concurrent encodes."""

    def __init__(self, net: _EncoderNet, spec: ConvSpec, source: str):
        net.eval()
        for p in net.parameters():
            p.requires_grad_(False)
        self.net = net
        self.spec = spec
        self.source = source
        self.frozen = True

    @property
    def channels(self) -> int:
        return self.spec.channels

    @property
    def frame_stride(self) -> int:
        return self.spec.total_stride

    @property
    def receptive_field(self) -> int:
        return self.spec.receptive_field

    def to_dtype(self, dtype: torch.dtype) -> "EncoderBackend":
        self.net.to(dtype)
        return self

    def encode_tensor(self, x: torch.Tensor, tap: str = "context") -> torch.Tensor:
        """(batch, samples) or (samples,) -> (batch, frames, channels) or (frames, channels).

        `tap="conv"` skips the context network and returns the raw conv-stack
        features instead of the default context outputs.
        """
        if tap not in ("context", "conv"):
            raise InvalidInput(f"unknown tap {tap!r}; use 'context' or 'conv'")
        squeeze = x.dim() == 1
        if squeeze:
            x = x.unsqueeze(0)
        if x.shape[-1] < self.spec.receptive_field:
            raise InvalidInput(
                f"input of {x.shape[-1]} samples is below the encoder's "
                f"{self.spec.receptive_field}-sample minimum (receptive field)"
            )
        out = self.net(x, tap=tap)
        return out.squeeze(0) if squeeze else out

    def parameters(self):
        return self.net.parameters()

    def state_bytes(self) -> bytes:
        import io

        buf = io.BytesIO()
        torch.save(self.net.state_dict(), buf)
        return buf.getvalue()


class IdentityFrameBackend(EncoderBackend):
    """Emits raw non-overlapping sample frames; channels == frame length."""

    def __init__(self, frame: int = 160):
        if frame <= 0:
            raise InvalidInput("frame length must be positive")
        self.frame = frame
        self.spec = ConvSpec(kernels=(frame,), strides=(frame,), channels=frame,
                             context_layers=0)
        self.net = None
        self.source = f"identity:{frame}"
        self.frozen = True

    def to_dtype(self, dtype):
        return self

    def encode_tensor(self, x: torch.Tensor, tap: str = "context") -> torch.Tensor:
        squeeze = x.dim() == 1
        if squeeze:
            x = x.unsqueeze(0)
        if x.shape[-1] < self.frame:
            raise InvalidInput(
                f"input of {x.shape[-1]} samples is below the encoder's "
                f"{self.frame}-sample minimum (receptive field)"
            )
        frames = x.shape[-1] // self.frame
        out = x[:, : frames * self.frame].reshape(x.shape[0], frames, self.frame)
        return out.squeeze(0) if squeeze else out

    def parameters(self):
        return iter(())


def _build_random(seed: int, spec: ConvSpec) -> _EncoderNet:
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        net = _EncoderNet(spec)
    return net


# Expected checkpoint layout (published wav2vec convention):
#   feature_extractor.conv_layers.{i}.0.weight        conv kernel, no bias
#   feature_extractor.conv_layers.{i}.2.{weight,bias}  group-norm affine
#   feature_aggregator.conv_layers.{i}.1.{weight,bias} context conv
#   feature_aggregator.conv_layers.{i}.2.{weight,bias} group-norm affine
_CKPT_FEATURE_CONV = "feature_extractor.conv_layers.{}.0.weight"
_CKPT_FEATURE_NORM = "feature_extractor.conv_layers.{}.2.{}"
_CKPT_CONTEXT_CONV = "feature_aggregator.conv_layers.{}.1.{}"
_CKPT_CONTEXT_NORM = "feature_aggregator.conv_layers.{}.2.{}"


def _load_checkpoint(path: Path, spec: ConvSpec) -> _EncoderNet:
    if not path.exists():
        raise LoadError(f"encoder checkpoint not found: {path}")
    try:
        blob = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise LoadError(f"cannot parse encoder checkpoint {path}: {exc}") from exc
    if isinstance(blob, dict) and "model" in blob and isinstance(blob["model"], dict):
        blob = blob["model"]
    if not isinstance(blob, dict):
        raise LoadError(f"{path}: expected a state dict, got {type(blob).__name__}")

    net = _EncoderNet(spec)
    mapped: dict[str, torch.Tensor] = {}
    consumed = set()

    def take(key: str, target: torch.Tensor, dest: str):
        if key not in blob:
            raise LoadError(f"{path}: missing required tensor {key!r}")
        value = torch.as_tensor(blob[key])
        if tuple(value.shape) != tuple(target.shape):
            raise LoadError(
                f"{path}: tensor {key!r} has shape {tuple(value.shape)}, "
                f"expected {tuple(target.shape)}"
            )
        mapped[dest] = value.to(target.dtype)
        consumed.add(key)

    for i, layer in enumerate(net.feature_layers):
        take(_CKPT_FEATURE_CONV.format(i), layer.conv.weight, f"feature_layers.{i}.conv.weight")
        take(_CKPT_FEATURE_NORM.format(i, "weight"), layer.norm.weight, f"feature_layers.{i}.norm.weight")
        take(_CKPT_FEATURE_NORM.format(i, "bias"), layer.norm.bias, f"feature_layers.{i}.norm.bias")
    for i, layer in enumerate(net.context_layers):
        take(_CKPT_CONTEXT_CONV.format(i, "weight"), layer.conv.weight, f"context_layers.{i}.conv.weight")
        take(_CKPT_CONTEXT_CONV.format(i, "bias"), layer.conv.bias, f"context_layers.{i}.conv.bias")
        take(_CKPT_CONTEXT_NORM.format(i, "weight"), layer.norm.weight, f"context_layers.{i}.norm.weight")
        take(_CKPT_CONTEXT_NORM.format(i, "bias"), layer.norm.bias, f"context_layers.{i}.norm.bias")

    extra = sorted(set(blob) - consumed)
    if extra:
        warnings.warn(
            f"{path.name}: ignoring {len(extra)} unrecognized tensors "
            f"(first: {extra[0]!r})",
            stacklevel=2,
        )
    net.load_state_dict(mapped)
    return net


def load_encoder(source: str, conv: ConvSpec | None = None) -> EncoderBackend:
    """Build a frozen encoder backend.

    `source` is one of ``random:<seed>``, ``identity[:<frame>]``, or a
    checkpoint path. `conv` overrides the stack geometry (defaults to the
    published base layout: kernels (10,8,4,4,4), strides (5,4,2,2,2), 512
    channels).
    """
    if source.startswith("random:"):
        try:
            seed = int(source.split(":", 1)[1])
        except ValueError:
            raise InvalidInput(f"bad random encoder source {source!r}; use random:<int>")
        spec = conv or WAV2VEC_BASE
        return EncoderBackend(_build_random(seed, spec), spec, source)
    if source == "identity" or source.startswith("identity:"):
        frame = int(source.split(":", 1)[1]) if ":" in source else 160
        return IdentityFrameBackend(frame)
    spec = conv or WAV2VEC_BASE
    net = _load_checkpoint(Path(source), spec)
    backend = EncoderBackend(net, spec, f"ckpt:{source}")
    if backend.channels != spec.channels:
        raise LoadError(f"checkpoint reports {backend.channels} channels")
    return backend


def encode(
    backend: EncoderBackend, w: Waveform | torch.Tensor, tap: str = "context"
) -> FeatureSequence:
    """Extract the (frames, channels) feature sequence for one waveform."""
    x = w.tensor() if isinstance(w, Waveform) else torch.as_tensor(w)
    if x.dim() != 1:
        raise InvalidInput("encode() takes a single waveform; use encode_tensor for batches")
    with torch.no_grad():
        values = backend.encode_tensor(x, tap=tap).numpy()
    return FeatureSequence(
        values=values, frame_stride=backend.frame_stride, source=backend.source
    )
