"""Training objectives behind one registry.

Elementary losses (MAE, MSE, wSDR, feature-L1) plus the perceptual family:
`pfpl` pairs waveform MAE with a per-channel Wasserstein distance over
phonetic features; `pfpl_w` swaps the Wasserstein term for feature-L1;
`pfpl_w_mae` keeps only the feature-L1 term. Everything returns torch
scalars so gradients flow to the enhanced waveform.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .dsp import Waveform
from .encoder import EncoderBackend
from .exceptions import ConfigError, InvalidInput
from .wasserstein import feature_w1

LOSS_NAMES = ("mae", "mse", "wsdr", "pfpl", "pfpl_w", "pfpl_w_mae")
_WSDR_EPS = 1e-8


def _as_wave_tensor(w, name: str) -> torch.Tensor:
    t = w.tensor() if isinstance(w, Waveform) else torch.as_tensor(w)
    if t.dim() == 1:
        t = t.unsqueeze(0)
    if t.dim() != 2:
        raise InvalidInput(f"{name} must be (samples,) or (batch, samples)")
    return t


def _pair(y, y_hat):
    ty = _as_wave_tensor(y, "y")
    th = _as_wave_tensor(y_hat, "y_hat")
    if ty.shape != th.shape:
        raise InvalidInput(f"length mismatch: {tuple(ty.shape)} vs {tuple(th.shape)}")
    return ty, th


def mae_loss(y, y_hat) -> torch.Tensor:
    """Mean absolute sample difference."""
    ty, th = _pair(y, y_hat)
    return (ty - th).abs().mean()


def mse_loss(y, y_hat) -> torch.Tensor:
    """Mean squared sample difference."""
    ty, th = _pair(y, y_hat)
    return ((ty - th) ** 2).mean()


def wsdr_loss(x, y, y_hat) -> torch.Tensor:
    """Weighted source-to-distortion ratio; -1 at perfect reconstruction.

    alpha * (-cos(y, y_hat)) + (1-alpha) * (-cos(x-y, x-y_hat)) with
    alpha = ||y||^2 / (||y||^2 + ||x-y||^2). Norms carry an epsilon guard.
    """
    tx = _as_wave_tensor(x, "x")
    ty, th = _pair(y, y_hat)
    if tx.shape != ty.shape:
        raise InvalidInput(f"length mismatch: {tuple(tx.shape)} vs {tuple(ty.shape)}")
    noise, noise_hat = tx - ty, tx - th

    def neg_cos(u, v):
        dot = (u * v).sum(dim=-1)
        return -dot / (u.norm(dim=-1) * v.norm(dim=-1) + _WSDR_EPS)

    p_speech = (ty**2).sum(dim=-1)
    p_noise = (noise**2).sum(dim=-1)
    alpha = p_speech / (p_speech + p_noise + _WSDR_EPS)
    per_item = alpha * neg_cos(ty, th) + (1 - alpha) * neg_cos(noise, noise_hat)
    return per_item.mean()


def _as_feature_tensor(c) -> torch.Tensor:
    from .encoder import FeatureSequence

    return torch.as_tensor(c.values if isinstance(c, FeatureSequence) else c)


def feature_l1(c, c_hat) -> torch.Tensor:
    """Mean absolute entrywise difference between feature sequences."""
    tc = _as_feature_tensor(c)
    th = _as_feature_tensor(c_hat)
    if tc.shape != th.shape:
        raise InvalidInput(f"feature shape mismatch: {tuple(tc.shape)} vs {tuple(th.shape)}")
    return (tc - th).abs().mean()


@dataclass(frozen=True)
class LossSpec:
    """Named objective plus per-term weights and (for pfpl*) the encoder."""

    name: str
    weights: dict = field(default_factory=dict)
    encoder: EncoderBackend | None = None

    def __post_init__(self):
        if self.name not in LOSS_NAMES:
            raise ConfigError(f"unknown loss {self.name!r}; choose from {LOSS_NAMES}")
        if self.name.startswith("pfpl") and self.encoder is None:
            raise ConfigError(f"loss {self.name!r} requires an encoder backend")
        unknown = set(self.weights) - set(self.term_names())
        if unknown:
            raise ConfigError(f"weights for unknown terms: {sorted(unknown)}")

    def term_names(self) -> tuple[str, ...]:
        return {
            "mae": ("mae_term",),
            "mse": ("mse_term",),
            "wsdr": ("wsdr_term",),
            "pfpl": ("mae_term", "wasserstein_term"),
            "pfpl_w": ("mae_term", "feature_l1_term"),
            "pfpl_w_mae": ("feature_l1_term",),
        }[self.name]

    def weight(self, term: str) -> float:
        return float(self.weights.get(term, 1.0))


@dataclass(frozen=True)
class LossValue:
    """Weighted total plus the named components it sums."""

    total: torch.Tensor
    components: dict

    def component(self, name: str) -> float:
        return float(self.components[name])

    def as_floats(self) -> dict:
        return {k: float(v) for k, v in self.components.items()} | {
            "total": float(self.total)
        }


def compute_loss(spec: LossSpec, x, y, y_hat) -> LossValue:
    """Evaluate the selected objective on one (noisy, clean, enhanced) triple.

    Accepts Waveforms, arrays, or (batched) tensors; the enhanced signal is
    trimmed/zero-padded to the clean length first. Differentiable w.r.t.
    `y_hat` when tensors carry gradients.
    """
    ty = _as_wave_tensor(y, "y")
    th = _as_wave_tensor(y_hat, "y_hat")
    if th.shape[-1] > ty.shape[-1]:
        th = th[..., : ty.shape[-1]]
    elif th.shape[-1] < ty.shape[-1]:
        th = torch.nn.functional.pad(th, (0, ty.shape[-1] - th.shape[-1]))

    components: dict[str, torch.Tensor] = {}
    if spec.name == "mae":
        components["mae_term"] = mae_loss(ty, th)
    elif spec.name == "mse":
        components["mse_term"] = mse_loss(ty, th)
    elif spec.name == "wsdr":
        components["wsdr_term"] = wsdr_loss(_as_wave_tensor(x, "x"), ty, th)
    else:
        enc = spec.encoder
        if spec.name != "pfpl_w_mae":
            components["mae_term"] = mae_loss(ty, th)
        c = enc.encode_tensor(ty)
        c_hat = enc.encode_tensor(th)
        if spec.name == "pfpl":
            components["wasserstein_term"] = feature_w1(c, c_hat)
        else:
            components["feature_l1_term"] = feature_l1(c, c_hat)

    total = sum(spec.weight(k) * v for k, v in components.items())
    return LossValue(total=total, components=components)
