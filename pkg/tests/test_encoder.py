import numpy as np
import pytest
import torch

from pfpl.dsp import Waveform
from pfpl.encoder import (
    ConvSpec,
    TINY_CONV_SPEC,
    WAV2VEC_BASE,
    encode,
    load_encoder,
)
from pfpl.exceptions import InvalidInput, LoadError


def _make_checkpoint(path, spec=WAV2VEC_BASE, extra=None, drop=None):
    """Synthetic state dict in the published weight layout."""
    rng = torch.Generator().manual_seed(11)
    state = {}
    c = spec.channels
    ins = [1] + [c] * (len(spec.kernels) - 1)
    for i, (cin, k) in enumerate(zip(ins, spec.kernels)):
        state[f"feature_extractor.conv_layers.{i}.0.weight"] = torch.randn(
            (c, cin, k), generator=rng
        )
        state[f"feature_extractor.conv_layers.{i}.2.weight"] = torch.ones(c)
        state[f"feature_extractor.conv_layers.{i}.2.bias"] = torch.zeros(c)
    for i in range(spec.context_layers):
        state[f"feature_aggregator.conv_layers.{i}.1.weight"] = torch.randn(
            (c, c, spec.context_kernel), generator=rng
        )
        state[f"feature_aggregator.conv_layers.{i}.1.bias"] = torch.zeros(c)
        state[f"feature_aggregator.conv_layers.{i}.2.weight"] = torch.ones(c)
        state[f"feature_aggregator.conv_layers.{i}.2.bias"] = torch.zeros(c)
    if drop:
        del state[drop]
    if extra:
        state[extra] = torch.zeros(3)
    torch.save(state, path)
    return path


class TestLoadEncoder:
    def test_random_backend_deterministic(self):
        w = Waveform(np.random.default_rng(0).standard_normal(2000).astype(np.float32))
        a = encode(load_encoder("random:7"), w)
        b = encode(load_encoder("random:7"), w)
        np.testing.assert_array_equal(a.values, b.values)

    def test_different_seeds_differ(self):
        w = Waveform(np.random.default_rng(0).standard_normal(2000).astype(np.float32))
        a = encode(load_encoder("random:7"), w)
        b = encode(load_encoder("random:8"), w)
        assert not np.array_equal(a.values, b.values)

    def test_missing_checkpoint(self):
        with pytest.raises(LoadError):
            load_encoder("/nonexistent/wav2vec.pt")

    def test_checkpoint_reports_512_channels(self, tmp_path):
        path = _make_checkpoint(tmp_path / "enc.pt")
        backend = load_encoder(str(path))
        assert backend.channels == 512
        assert backend.frozen

    def test_checkpoint_missing_tensor_fatal(self, tmp_path):
        path = _make_checkpoint(
            tmp_path / "bad.pt", drop="feature_extractor.conv_layers.2.0.weight"
        )
        with pytest.raises(LoadError, match="conv_layers.2.0.weight"):
            load_encoder(str(path))

    def test_checkpoint_extra_tensor_warns(self, tmp_path):
        path = _make_checkpoint(tmp_path / "extra.pt", extra="decoder.proj.weight")
        with pytest.warns(UserWarning, match="unrecognized"):
            load_encoder(str(path))

    def test_corrupt_file(self, tmp_path):
        path = tmp_path / "junk.pt"
        path.write_bytes(b"not a checkpoint at all")
        with pytest.raises(LoadError):
            load_encoder(str(path))

    def test_bad_random_source(self):
        with pytest.raises(InvalidInput):
            load_encoder("random:notanint")


class TestEncode:
    def test_frame_count_16000(self):
        backend = load_encoder("random:1")
        w = Waveform(np.random.default_rng(1).standard_normal(16000).astype(np.float32))
        feats = encode(backend, w)
        assert feats.values.shape == (98, 512)
        assert feats.frame_stride == 160

    def test_below_receptive_field(self):
        backend = load_encoder("random:1")
        with pytest.raises(InvalidInput, match="465"):
            encode(backend, Waveform(np.zeros(464, dtype=np.float32)))

    def test_receptive_field_boundary(self):
        backend = load_encoder("random:1")
        feats = encode(backend, Waveform(np.zeros(465, dtype=np.float32)))
        assert feats.frames == 1

    def test_deterministic_repeat(self):
        backend = load_encoder("random:2")
        w = Waveform(np.random.default_rng(2).standard_normal(3000).astype(np.float32))
        a = encode(backend, w)
        b = encode(backend, w)
        np.testing.assert_array_equal(a.values, b.values)

    def test_frame_count_law(self):
        backend = load_encoder("random:3")
        spec = backend.spec
        rng = np.random.default_rng(3)
        lengths = rng.integers(465, 48000, size=200)
        for n in lengths:
            expected = spec.frames_for(int(n))
            # closed-form recursion, layer by layer
            length = int(n)
            for k, s in zip(spec.kernels, spec.strides):
                length = (length - k) // s + 1
            assert expected == length
        # spot-check against the real forward on a few lengths
        for n in [465, 1201, 4999, 16000]:
            w = Waveform(rng.standard_normal(n).astype(np.float32))
            assert encode(backend, w).frames == spec.frames_for(n)

    def test_gradient_flows_to_input(self):
        backend = load_encoder("random:4", conv=TINY_CONV_SPEC).to_dtype(torch.float64)
        x = torch.tensor(
            np.random.default_rng(4).standard_normal(1000), requires_grad=True
        )
        out = backend.encode_tensor(x).mean()
        out.backward()
        assert x.grad is not None
        assert torch.any(x.grad != 0)

    def test_finite_difference_directional(self):
        backend = load_encoder("random:5", conv=TINY_CONV_SPEC).to_dtype(torch.float64)
        rng = np.random.default_rng(5)
        x_np = rng.standard_normal(1000)
        x = torch.tensor(x_np, requires_grad=True)
        backend.encode_tensor(x).mean().backward()
        grad = x.grad.numpy()
        h = 1e-6
        for _ in range(5):
            d = rng.standard_normal(1000)
            d /= np.linalg.norm(d)
            f = lambda v: float(backend.encode_tensor(torch.tensor(v)).mean())
            fd = (f(x_np + h * d) - f(x_np - h * d)) / (2 * h)
            analytic = float(grad @ d)
            assert analytic == pytest.approx(fd, rel=1e-3, abs=1e-10)

    def test_parameters_frozen(self):
        backend = load_encoder("random:6")
        assert all(not p.requires_grad for p in backend.parameters())

    def test_conv_tap_differs_from_context_tap(self):
        backend = load_encoder("random:6", conv=TINY_CONV_SPEC)
        w = Waveform(np.random.default_rng(6).standard_normal(2000).astype(np.float32))
        context = encode(backend, w)
        conv = encode(backend, w, tap="conv")
        assert conv.values.shape == context.values.shape  # context net preserves frames
        assert not np.array_equal(conv.values, context.values)

    def test_unknown_tap(self):
        backend = load_encoder("random:6", conv=TINY_CONV_SPEC)
        with pytest.raises(InvalidInput):
            backend.encode_tensor(torch.zeros(2000), tap="bottleneck")


class TestIdentityBackend:
    def test_emits_raw_frames(self):
        backend = load_encoder("identity:160")
        w = Waveform(np.arange(480, dtype=np.float32) / 480)
        feats = encode(backend, w)
        assert feats.values.shape == (3, 160)
        np.testing.assert_array_equal(feats.values[1], w.samples[160:320])

    def test_too_short(self):
        backend = load_encoder("identity:160")
        with pytest.raises(InvalidInput):
            encode(backend, Waveform(np.zeros(100, dtype=np.float32)))


class TestConvSpec:
    def test_receptive_field_and_stride(self):
        assert WAV2VEC_BASE.receptive_field == 465
        assert WAV2VEC_BASE.total_stride == 160
        assert TINY_CONV_SPEC.receptive_field == 20
        assert TINY_CONV_SPEC.total_stride == 8

    def test_invalid_spec(self):
        with pytest.raises(InvalidInput):
            ConvSpec(kernels=(4, 4), strides=(2,))
