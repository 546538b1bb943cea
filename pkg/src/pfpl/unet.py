"""Complex-valued U-Net estimating a bounded complex ratio mask.

Complex ops follow the split-real convention: a complex conv is two real
convs combined as (Wr*xr - Wi*xi, Wr*xi + Wi*xr); leaky ReLU and instance
norm act on the real and imaginary parts independently. The mask is bounded
via magnitude-tanh, so |M| < 1 everywhere. Enhancement multiplies the mask
onto the noisy spectrogram pointwise and resynthesizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .dsp import ComplexSpectrogram, StftConfig, Waveform, istft_tensor, stft_tensor
from .exceptions import ConfigError, InvalidInput, ShapeError

LEAKY_SLOPE = 0.1
# keeps |mask| strictly below 1 after float32 rounding
_MASK_CAP = 1.0 - 1e-6


@dataclass(frozen=True)
class ModelConfig:
    """Mirrored encoder/decoder geometry; depth counts both halves."""

    name: str
    depth: int
    enc_channels: tuple[int, ...]
    dec_channels: tuple[int, ...]
    kernels: tuple[tuple[int, int], ...]
    strides: tuple[tuple[int, int], ...]
    norm: str = "instance"
    mask_bounding: str = "bounded_tanh"
    bins: int = 513

    def __post_init__(self):
        half = self.depth // 2
        if self.depth < 2 or self.depth % 2:
            raise ConfigError(f"depth must be even and >= 2, got {self.depth}")
        if self.bins < 1:
            raise ConfigError(f"bins must be positive, got {self.bins}")
        for label, seq in (
            ("enc_channels", self.enc_channels),
            ("dec_channels", self.dec_channels),
            ("kernels", self.kernels),
            ("strides", self.strides),
        ):
            if len(seq) != half:
                raise ConfigError(
                    f"{label} must list depth/2 = {half} layers, got {len(seq)}"
                )
        if self.norm != "instance":
            raise ConfigError(f"unsupported norm {self.norm!r}")
        if self.mask_bounding != "bounded_tanh":
            raise ConfigError(f"unsupported mask bounding {self.mask_bounding!r}")

    @property
    def half(self) -> int:
        return self.depth // 2

    def mirror_check(self):
        """Decoder must invert the encoder channel ladder; last layer emits 1."""
        enc_in = (1,) + self.enc_channels[:-1]
        expected = tuple(reversed(enc_in))
        if self.dec_channels != expected:
            raise ConfigError(
                f"decoder channels {self.dec_channels} do not mirror the encoder; "
                f"expected {expected}"
            )


def small10_config() -> ModelConfig:
    return ModelConfig(
        name="small10",
        depth=10,
        enc_channels=(16, 32, 32, 32, 64),
        dec_channels=(32, 32, 32, 16, 1),
        kernels=((7, 5), (7, 5), (5, 3), (5, 3), (5, 3)),
        strides=((2, 1), (2, 2), (2, 1), (2, 2), (2, 1)),
    )


def large20_config() -> ModelConfig:
    """Reference 20-layer geometry (best-effort replication, kept behind config)."""
    return ModelConfig(
        name="large20",
        depth=20,
        enc_channels=(45, 45, 90, 90, 90, 90, 90, 90, 90, 128),
        dec_channels=(90, 90, 90, 90, 90, 90, 90, 45, 45, 1),
        kernels=((7, 1), (1, 7), (7, 5), (7, 5), (5, 3), (5, 3), (5, 3), (5, 3), (5, 3), (5, 3)),
        strides=((1, 1), (1, 1), (2, 2), (2, 1), (2, 2), (2, 1), (2, 2), (2, 1), (2, 2), (2, 1)),
    )


MODEL_CONFIGS = {"small10": small10_config, "large20": large20_config}


@dataclass(frozen=True)
class ComplexRatioMask:
    """frames x bins complex mask with |values| < 1 everywhere."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2 or not np.iscomplexobj(values):
            raise InvalidInput("mask must be a 2-D complex matrix")
        if not np.all(np.isfinite(values.real)) or not np.all(np.isfinite(values.imag)):
            raise InvalidInput("mask contains non-finite values")
        if np.abs(values).max(initial=0.0) >= 1.0:
            raise InvalidInput("mask magnitude must stay strictly below 1")
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


class _ComplexConv(nn.Module):
    def __init__(self, c_in, c_out, kernel, stride, transposed=False):
        super().__init__()
        pad = ((kernel[0] - 1) // 2, (kernel[1] - 1) // 2)
        conv_cls = nn.ConvTranspose2d if transposed else nn.Conv2d
        self.re = conv_cls(c_in, c_out, kernel, stride=stride, padding=pad, bias=True)
        self.im = conv_cls(c_in, c_out, kernel, stride=stride, padding=pad, bias=True)

    def forward(self, xr, xi):
        return self.re(xr) - self.im(xi), self.re(xi) + self.im(xr)


class _Layer(nn.Module):
    """Complex conv + per-part instance norm + per-part leaky ReLU."""

    def __init__(self, c_in, c_out, kernel, stride, transposed=False, bare=False):
        super().__init__()
        self.conv = _ComplexConv(c_in, c_out, kernel, stride, transposed)
        self.bare = bare
        if not bare:
            self.norm_re = nn.InstanceNorm2d(c_out, affine=True, track_running_stats=False)
            self.norm_im = nn.InstanceNorm2d(c_out, affine=True, track_running_stats=False)

    def forward(self, xr, xi):
        xr, xi = self.conv(xr, xi)
        if self.bare:
            return xr, xi
        xr = nn.functional.leaky_relu(self.norm_re(xr), LEAKY_SLOPE)
        xi = nn.functional.leaky_relu(self.norm_im(xi), LEAKY_SLOPE)
        return xr, xi


def _fit(x: torch.Tensor, shape: tuple[int, int]) -> torch.Tensor:
    # crop/zero-pad trailing (F, T) dims to the mirrored encoder shape
    x = x[..., : shape[0], : shape[1]]
    pad_f, pad_t = shape[0] - x.shape[-2], shape[1] - x.shape[-1]
    if pad_f or pad_t:
        x = nn.functional.pad(x, (0, pad_t, 0, pad_f))
    return x


class MaskEstimator(nn.Module):
    """U-Net over (batch, channel, freq, time) split-complex tensors."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        config.mirror_check()
        self.config = config
        half = config.half
        enc_in = (1,) + config.enc_channels[:-1]
        self.encoders = nn.ModuleList(
            _Layer(enc_in[i], config.enc_channels[i], config.kernels[i], config.strides[i])
            for i in range(half)
        )
        dec_in = []
        for i in range(half):
            prev = config.enc_channels[-1] if i == 0 else config.dec_channels[i - 1]
            skip = 0 if i == 0 else config.enc_channels[half - 1 - i]
            dec_in.append(prev + skip)
        self.decoders = nn.ModuleList(
            _Layer(
                dec_in[i],
                config.dec_channels[i],
                config.kernels[half - 1 - i],
                config.strides[half - 1 - i],
                transposed=True,
                bare=(i == half - 1),
            )
            for i in range(half)
        )

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def forward(self, spec: torch.Tensor) -> torch.Tensor:
        """Complex (B, F, T) or (F, T) noisy spectrogram -> complex mask, same shape."""
        squeeze = spec.dim() == 2
        if squeeze:
            spec = spec.unsqueeze(0)
        param_dtype = next(self.parameters()).dtype
        want = torch.complex128 if param_dtype == torch.float64 else torch.complex64
        if spec.dtype != want:
            spec = spec.to(want)
        xr = spec.real.unsqueeze(1)
        xi = spec.imag.unsqueeze(1)

        shapes, skips = [], []
        for enc in self.encoders:
            shapes.append(xr.shape[-2:])
            skips.append((xr, xi))
            xr, xi = enc(xr, xi)

        half = self.config.half
        for i, dec in enumerate(self.decoders):
            if i > 0:
                sr, si = skips[half - i]
                xr, xi = torch.cat([xr, sr], dim=1), torch.cat([xi, si], dim=1)
            xr, xi = dec(xr, xi)
            target = shapes[half - 1 - i]
            xr, xi = _fit(xr, target), _fit(xi, target)

        mr, mi = _bounded_tanh(xr.squeeze(1), xi.squeeze(1))
        mask = torch.complex(mr, mi)
        return mask.squeeze(0) if squeeze else mask


def _bounded_tanh(o_re: torch.Tensor, o_im: torch.Tensor):
    # |out| = tanh(|o|) capped just under 1; exactly 0 where o = 0
    sq = o_re * o_re + o_im * o_im
    mag = torch.sqrt(sq + 1e-24)
    scale = torch.clamp(torch.tanh(mag), max=_MASK_CAP) / mag
    return o_re * scale, o_im * scale


def build_model(cfg: ModelConfig | str, seed: int = 0) -> MaskEstimator:
    """Construct a mask estimator with reproducible, seed-determined init."""
    if isinstance(cfg, str):
        try:
            cfg = MODEL_CONFIGS[cfg]()
        except KeyError:
            raise ConfigError(f"unknown model config {cfg!r}; choose from {sorted(MODEL_CONFIGS)}")
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        model = MaskEstimator(cfg)
    return model


def expected_parameter_count(cfg: ModelConfig) -> int:
    """Closed-form count: (kh*kw*Cin*Cout + Cout)*2 per conv, +4*Cout per normed layer."""
    half = cfg.half
    enc_in = (1,) + cfg.enc_channels[:-1]
    total = 0
    for i in range(half):
        kh, kw = cfg.kernels[i]
        total += (kh * kw * enc_in[i] * cfg.enc_channels[i] + cfg.enc_channels[i]) * 2
        total += 4 * cfg.enc_channels[i]
    for i in range(half):
        prev = cfg.enc_channels[-1] if i == 0 else cfg.dec_channels[i - 1]
        skip = 0 if i == 0 else cfg.enc_channels[half - 1 - i]
        kh, kw = cfg.kernels[half - 1 - i]
        total += (kh * kw * (prev + skip) * cfg.dec_channels[i] + cfg.dec_channels[i]) * 2
        if i != half - 1:
            total += 4 * cfg.dec_channels[i]
    return total


def estimate_mask(model: MaskEstimator, x: ComplexSpectrogram) -> ComplexRatioMask:
    """Run the network on one spectrogram; mask shape equals input shape."""
    if x.bins != model.config.bins:
        raise ShapeError(
            f"spectrogram has {x.bins} bins but config {model.config.name!r} "
            f"expects {model.config.bins}"
        )
    spec = torch.as_tensor(x.values.T)  # (bins, frames) = (F, T)
    if spec.dtype == torch.complex128:
        spec = spec.to(torch.complex64)
    with torch.no_grad():
        mask = model(spec)
    return ComplexRatioMask(values=mask.numpy().T)


def enhance_tensor(
    model: MaskEstimator,
    x: torch.Tensor,
    cfg: StftConfig,
    mask_hook=None,
) -> torch.Tensor:
    """Differentiable waveform-to-waveform enhancement for (B, N) or (N,) input."""
    length = x.shape[-1]
    if mask_hook is None and cfg.bins != model.config.bins:
        raise ShapeError(
            f"stft config produces {cfg.bins} bins but model config "
            f"{model.config.name!r} expects {model.config.bins}"
        )
    spec = stft_tensor(x, cfg)
    mask = mask_hook(spec) if mask_hook is not None else model(spec)
    if mask.shape != spec.shape:
        raise ShapeError(f"mask shape {tuple(mask.shape)} != spectrogram {tuple(spec.shape)}")
    return istft_tensor(mask * spec, cfg, length)


def enhance(
    model: MaskEstimator,
    x: Waveform,
    cfg: StftConfig | None = None,
    mask_hook=None,
) -> Waveform:
    """Enhance one waveform; output has the input's length.

    `mask_hook` is a test hook: a callable receiving the complex (F, T)
    spectrogram tensor and returning the mask to apply (e.g. identity or
    zero), bypassing the network and its magnitude bound.
    """
    cfg = cfg or StftConfig()
    with torch.no_grad():
        out = enhance_tensor(model, x.tensor(), cfg, mask_hook=mask_hook)
    return Waveform(samples=out.numpy(), sample_rate=x.sample_rate)


def identity_mask_hook(spec: torch.Tensor) -> torch.Tensor:
    return torch.ones_like(spec)


def zero_mask_hook(spec: torch.Tensor) -> torch.Tensor:
    return torch.zeros_like(spec)
