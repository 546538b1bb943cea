import numpy as np
import pytest
import torch

from pfpl.encoder import TINY_CONV_SPEC, load_encoder
from pfpl.exceptions import ConfigError, InvalidInput
from pfpl.losses import (
    LossSpec,
    compute_loss,
    feature_l1,
    mae_loss,
    mse_loss,
    wsdr_loss,
)

# once-computed by the straight-line numpy re-implementation below
# (random:7 base encoder, fixed 1-second pair, float64 path)
GOLDEN_PFPL_MAE = 0.039601008355
GOLDEN_PFPL_W1 = 0.011980054682
GOLDEN_PFPL_TOTAL = 0.051581063038


def golden_pair():
    rng = np.random.default_rng(2024)
    y = (0.3 * rng.standard_normal(16000)).astype(np.float32)
    y_hat = (y + 0.05 * rng.standard_normal(16000)).astype(np.float32)
    return y, y_hat


def oracle_pfpl(backend, y, y_hat):
    """Straight-line numpy forward + sorted W1 + MAE; no torch in the math."""
    weights = {k: v.numpy().astype(np.float64) for k, v in backend.net.state_dict().items()}
    spec = backend.spec

    def conv1d(x, w, b, stride):
        cout, _, k = w.shape
        lout = (x.shape[1] - k) // stride + 1
        idx = stride * np.arange(lout)[:, None] + np.arange(k)[None, :]
        out = np.einsum("oik,ilk->ol", w, x[:, idx], optimize=True)
        return out if b is None else out + b[:, None]

    def groupnorm_all(x, gamma, beta, eps=1e-5):
        return (x - x.mean()) / np.sqrt(x.var() + eps) * gamma[:, None] + beta[:, None]

    def forward(x):
        h = x[None, :].astype(np.float64)
        for i in range(len(spec.kernels)):
            h = conv1d(h, weights[f"feature_layers.{i}.conv.weight"], None, spec.strides[i])
            h = groupnorm_all(h, weights[f"feature_layers.{i}.norm.weight"],
                              weights[f"feature_layers.{i}.norm.bias"])
            h = np.maximum(h, 0.0)
        for i in range(spec.context_layers):
            h = np.pad(h, ((0, 0), (spec.context_kernel - 1, 0)))
            h = conv1d(h, weights[f"context_layers.{i}.conv.weight"],
                       weights[f"context_layers.{i}.conv.bias"], 1)
            h = groupnorm_all(h, weights[f"context_layers.{i}.norm.weight"],
                              weights[f"context_layers.{i}.norm.bias"])
            h = np.maximum(h, 0.0)
        return h.T

    c, c_hat = forward(y), forward(y_hat)
    mae = np.abs(y.astype(np.float64) - y_hat.astype(np.float64)).mean()
    w1 = np.abs(np.sort(c, axis=0) - np.sort(c_hat, axis=0)).mean(axis=0).mean()
    return mae, w1


class TestMae:
    def test_example(self):
        assert float(mae_loss([1.0, 2.0], [1.0, 3.0])) == pytest.approx(0.5)

    def test_identity(self):
        y = np.random.default_rng(0).standard_normal(100)
        assert float(mae_loss(y, y)) == 0.0

    def test_signed_example(self):
        assert float(mae_loss([0.0, 0.0, 0.0, 0.0], [1.0, -1.0, 2.0, -2.0])) == pytest.approx(1.5)

    def test_length_mismatch(self):
        with pytest.raises(InvalidInput):
            mae_loss([1.0, 2.0], [1.0, 2.0, 3.0])


class TestMse:
    def test_example(self):
        assert float(mse_loss([1.0, 2.0], [1.0, 3.0])) == pytest.approx(0.5)

    def test_identity(self):
        y = np.random.default_rng(1).standard_normal(100)
        assert float(mse_loss(y, y)) == 0.0

    def test_pythagorean_example(self):
        assert float(mse_loss([0.0, 0.0], [3.0, 4.0])) == pytest.approx(12.5)


class TestWsdr:
    def test_perfect_reconstruction(self):
        x = torch.tensor([0.5, 1.0, -0.25])
        y = torch.tensor([0.4, 0.8, -0.1])
        assert float(wsdr_loss(x, y, y)) == pytest.approx(-1.0, abs=1e-6)

    def test_orthogonal_case(self):
        value = wsdr_loss(
            torch.tensor([1.0, 1.0]), torch.tensor([1.0, 0.0]), torch.tensor([0.0, 1.0])
        )
        assert float(value) == pytest.approx(0.0, abs=1e-7)

    def test_hand_derived_triple(self):
        value = wsdr_loss(
            torch.tensor([1.0, 1.0]), torch.tensor([1.0, 0.0]), torch.tensor([1.0, 0.5])
        )
        assert float(value) == pytest.approx(-0.9472, abs=1e-4)

    def test_bounded_on_random_triples(self):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            n = int(rng.integers(4, 64))
            x, y, y_hat = (rng.standard_normal(n) for _ in range(3))
            value = float(wsdr_loss(x, y, y_hat))
            assert -1.0 <= value <= 1.0


class TestFeatureL1:
    def test_identity(self):
        c = np.random.default_rng(3).standard_normal((10, 4))
        assert float(feature_l1(c, c)) == 0.0

    def test_constant_offset(self):
        c = np.random.default_rng(4).standard_normal((10, 4))
        assert float(feature_l1(c, c + 0.25)) == pytest.approx(0.25)

    def test_small_example(self):
        assert float(feature_l1(np.array([[0.0, 2.0]]), np.array([[1.0, 0.0]]))) == pytest.approx(1.5)

    def test_shape_mismatch(self):
        with pytest.raises(InvalidInput):
            feature_l1(np.zeros((2, 2)), np.zeros((2, 3)))


class TestLossSpec:
    def test_pfpl_requires_encoder(self):
        with pytest.raises(ConfigError):
            LossSpec("pfpl")

    def test_unknown_name(self):
        with pytest.raises(ConfigError):
            LossSpec("perceptual9000")

    def test_unknown_weight_key(self):
        with pytest.raises(ConfigError):
            LossSpec("mae", weights={"wasserstein_term": 2.0})


class TestComputeLoss:
    tiny = load_encoder("random:7", conv=TINY_CONV_SPEC)

    def test_pfpl_identity_is_zero(self):
        y = torch.tensor(np.random.default_rng(5).standard_normal(2000), dtype=torch.float32)
        value = compute_loss(LossSpec("pfpl", encoder=self.tiny), y, y, y)
        assert float(value.total) == 0.0
        assert all(float(v) == 0.0 for v in value.components.values())

    def test_pfpl_total_at_least_mae(self):
        rng = np.random.default_rng(6)
        spec = LossSpec("pfpl", encoder=self.tiny)
        for _ in range(25):
            y = rng.standard_normal(1500).astype(np.float32)
            y_hat = y + 0.1 * rng.standard_normal(1500).astype(np.float32)
            value = compute_loss(spec, y, y, y_hat)
            assert float(value.total) >= value.component("mae_term")

    def test_component_additivity_with_weights(self):
        rng = np.random.default_rng(7)
        y = rng.standard_normal(1500).astype(np.float32)
        y_hat = y + 0.2 * rng.standard_normal(1500).astype(np.float32)
        spec = LossSpec(
            "pfpl", weights={"mae_term": 0.5, "wasserstein_term": 2.0}, encoder=self.tiny
        )
        value = compute_loss(spec, y, y, y_hat)
        expected = 0.5 * value.component("mae_term") + 2.0 * value.component("wasserstein_term")
        assert float(value.total) == pytest.approx(expected, abs=1e-12)

    def test_pfpl_w_uses_feature_l1(self):
        rng = np.random.default_rng(8)
        y = rng.standard_normal(1500).astype(np.float32)
        y_hat = y + 0.2 * rng.standard_normal(1500).astype(np.float32)
        value = compute_loss(LossSpec("pfpl_w", encoder=self.tiny), y, y, y_hat)
        assert set(value.components) == {"mae_term", "feature_l1_term"}

    def test_pfpl_w_mae_is_feature_only(self):
        rng = np.random.default_rng(9)
        y = rng.standard_normal(1500).astype(np.float32)
        y_hat = y + 0.2 * rng.standard_normal(1500).astype(np.float32)
        value = compute_loss(LossSpec("pfpl_w_mae", encoder=self.tiny), y, y, y_hat)
        assert set(value.components) == {"feature_l1_term"}

    def test_enhanced_longer_is_trimmed(self):
        rng = np.random.default_rng(10)
        y = rng.standard_normal(1000).astype(np.float32)
        y_hat = np.concatenate([y, np.zeros(32, dtype=np.float32)])
        value = compute_loss(LossSpec("mae"), y, y, y_hat)
        assert float(value.total) == 0.0

    def test_golden_value_matches_oracle(self):
        backend = load_encoder("random:7")
        y, y_hat = golden_pair()
        mae, w1 = oracle_pfpl(backend, y, y_hat)
        # the straight-line route reproduces the frozen constants
        assert mae == pytest.approx(GOLDEN_PFPL_MAE, abs=1e-9)
        assert w1 == pytest.approx(GOLDEN_PFPL_W1, abs=1e-9)
        value = compute_loss(LossSpec("pfpl", encoder=backend), y, y, y_hat)
        assert float(value.total) == pytest.approx(GOLDEN_PFPL_TOTAL, rel=1e-4)


class TestGradients:
    def _fd_check(self, fn, y_hat0, trials=3, h=1e-6, seed=0):
        rng = np.random.default_rng(seed)
        y_hat = torch.tensor(y_hat0, dtype=torch.float64, requires_grad=True)
        fn(y_hat).backward()
        grad = y_hat.grad.numpy()
        for _ in range(trials):
            d = rng.standard_normal(y_hat0.shape[0])
            d /= np.linalg.norm(d)
            plus = float(fn(torch.tensor(y_hat0 + h * d, dtype=torch.float64)))
            minus = float(fn(torch.tensor(y_hat0 - h * d, dtype=torch.float64)))
            fd = (plus - minus) / (2 * h)
            analytic = float(grad @ d)
            assert analytic == pytest.approx(fd, rel=1e-3, abs=1e-8)

    def test_pfpl_gradient(self):
        backend = load_encoder("random:11", conv=TINY_CONV_SPEC).to_dtype(torch.float64)
        spec = LossSpec("pfpl", encoder=backend)
        rng = np.random.default_rng(11)
        y = torch.tensor(rng.standard_normal(256), dtype=torch.float64)
        y_hat0 = rng.standard_normal(256)
        self._fd_check(lambda v: compute_loss(spec, y, y, v).total, y_hat0, seed=1)

    def test_pfpl_w_gradient(self):
        backend = load_encoder("random:12", conv=TINY_CONV_SPEC).to_dtype(torch.float64)
        spec = LossSpec("pfpl_w", encoder=backend)
        rng = np.random.default_rng(12)
        y = torch.tensor(rng.standard_normal(256), dtype=torch.float64)
        y_hat0 = rng.standard_normal(256)
        self._fd_check(lambda v: compute_loss(spec, y, y, v).total, y_hat0, seed=2)

    def test_wsdr_gradient(self):
        rng = np.random.default_rng(13)
        x = torch.tensor(rng.standard_normal(256), dtype=torch.float64)
        y = torch.tensor(rng.standard_normal(256), dtype=torch.float64)
        y_hat0 = rng.standard_normal(256)
        spec = LossSpec("wsdr")
        self._fd_check(lambda v: compute_loss(spec, x, y, v).total, y_hat0, seed=3)
