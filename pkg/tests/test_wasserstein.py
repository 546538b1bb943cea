import numpy as np
import pytest
import torch

from pfpl.exceptions import InvalidInput
from pfpl.wasserstein import Coupling, feature_w1, w1_1d, w1_oracle


class TestW1Examples:
    def test_disjoint_pair(self):
        # brute force over both matchings: (2+2)/2 vs (3+1)/2, min = 2.0
        assert float(w1_1d([0.0, 1.0], [2.0, 3.0])) == pytest.approx(2.0)

    def test_interleaved_pair(self):
        # sorted matching (1+2)/2 beats crossed (2+3)/2
        assert float(w1_1d([0.0, 4.0], [1.0, 2.0])) == pytest.approx(1.5)

    def test_identity(self):
        a = np.random.default_rng(0).standard_normal(50)
        assert float(w1_1d(a, a)) == 0.0

    def test_size_mismatch(self):
        with pytest.raises(InvalidInput):
            w1_1d([1.0, 2.0], [1.0, 2.0, 3.0])

    def test_empty(self):
        with pytest.raises(InvalidInput):
            w1_1d([], [])


class TestOracle:
    def test_permutation_p1(self):
        assert w1_oracle([0, 1], [2, 3], 1) == pytest.approx(2.0)

    def test_permutation_p2(self):
        # W2 = sqrt(mean squared matched cost) = sqrt((4+4)/2)
        assert w1_oracle([0, 1], [2, 3], 2) == pytest.approx(2.0)

    def test_singleton(self):
        assert w1_oracle([5], [5], 1) == 0.0

    def test_cap(self):
        with pytest.raises(InvalidInput):
            w1_oracle(np.zeros(40), np.zeros(40), 1)

    def test_lp_matches_permutation_search(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            a = rng.normal(size=5)
            b = rng.normal(size=5)
            perm = w1_oracle(a, b, 1)
            lp, coupling = w1_oracle(np.concatenate([a, [a[0]] * 7]),
                                     np.concatenate([b, [b[0]] * 7]), 1,
                                     return_coupling=True)
            assert isinstance(coupling, Coupling)
            # same-size check through the LP path directly
            lp_equal = _lp_value(a, b)
            assert lp_equal == pytest.approx(perm, abs=1e-9)

    def test_coupling_marginals_enforced(self):
        with pytest.raises(InvalidInput):
            Coupling(np.array([[0.6, 0.0], [0.0, 0.4]]))


def _lp_value(a, b):
    from pfpl.wasserstein import _solve_lp

    cost = np.abs(np.asarray(a)[:, None] - np.asarray(b)[None, :])
    value, _ = _solve_lp(cost, len(a), len(b))
    return value


class TestSortingOptimality:
    def test_matches_oracle_on_random_pairs(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            n = int(rng.integers(1, 9))
            a = rng.normal(scale=rng.uniform(0.5, 3.0), size=n)
            b = rng.normal(loc=rng.uniform(-2, 2), size=n)
            assert float(w1_1d(a, b)) == pytest.approx(w1_oracle(a, b, 1), abs=1e-9)


class TestMetricAxioms:
    rng = np.random.default_rng(3)

    def test_symmetry_nonnegativity_triangle(self):
        for _ in range(200):
            n = int(self.rng.integers(2, 20))
            a, b, c = (self.rng.normal(size=n) for _ in range(3))
            dab = float(w1_1d(a, b))
            dba = float(w1_1d(b, a))
            dac = float(w1_1d(a, c))
            dbc = float(w1_1d(b, c))
            assert dab == dba
            assert dab >= 0.0
            assert dac <= dab + dbc + 1e-12

    def test_translation_equivariance(self):
        for _ in range(50):
            n = int(self.rng.integers(2, 20))
            a, b = self.rng.normal(size=n), self.rng.normal(size=n)
            kappa = float(self.rng.normal())
            assert float(w1_1d(a + kappa, b + kappa)) == pytest.approx(
                float(w1_1d(a, b)), abs=1e-12
            )

    def test_scaling_homogeneity(self):
        for _ in range(50):
            n = int(self.rng.integers(2, 20))
            a, b = self.rng.normal(size=n), self.rng.normal(size=n)
            lam = float(self.rng.uniform(0, 4))
            assert float(w1_1d(lam * a, lam * b)) == pytest.approx(
                lam * float(w1_1d(a, b)), rel=1e-12, abs=1e-12
            )


class TestSubgradient:
    def test_matches_finite_differences_at_tie_free_points(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            n = 12
            a = np.sort(rng.normal(size=n)) + np.arange(n) * 0.1  # well separated
            b = rng.normal(size=n)
            at = torch.tensor(a, requires_grad=True)
            bt = torch.tensor(b)
            loss = w1_1d(at, bt)
            loss.backward()
            grad = at.grad.numpy()
            h = 1e-7
            for i in range(0, n, 3):
                e = np.zeros(n)
                e[i] = h
                fd = (
                    float(w1_1d(a + e, b)) - float(w1_1d(a - e, b))
                ) / (2 * h)
                assert grad[i] == pytest.approx(fd, rel=1e-6, abs=1e-9)


class TestFeatureW1:
    def test_identity(self):
        c = np.random.default_rng(5).standard_normal((30, 8))
        assert float(feature_w1(c, c)) == 0.0

    def test_single_channel_reduces_to_w1_1d(self):
        a = np.array([0.0, 1.0])[:, None]
        b = np.array([2.0, 3.0])[:, None]
        assert float(feature_w1(a, b)) == pytest.approx(2.0)
        a2 = np.array([0.0, 4.0])[:, None]
        b2 = np.array([1.0, 2.0])[:, None]
        assert float(feature_w1(a2, b2)) == pytest.approx(1.5)

    def test_constant_offset_gives_offset(self):
        rng = np.random.default_rng(6)
        c = rng.standard_normal((40, 16))
        kappa = 0.73
        assert float(feature_w1(c, c + kappa)) == pytest.approx(kappa, rel=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(InvalidInput):
            feature_w1(np.zeros((10, 4)), np.zeros((10, 5)))

    def test_sum_reduction(self):
        rng = np.random.default_rng(7)
        c = rng.standard_normal((20, 4))
        d = rng.standard_normal((20, 4))
        mean_v = float(feature_w1(c, d, reduction="mean"))
        sum_v = float(feature_w1(c, d, reduction="sum"))
        assert sum_v == pytest.approx(4 * mean_v, rel=1e-6)

    def test_schedule_independence(self):
        # per-channel results identical whether batched or looped
        rng = np.random.default_rng(8)
        c = rng.standard_normal((25, 6))
        d = rng.standard_normal((25, 6))
        per_channel = [float(w1_1d(c[:, j], d[:, j])) for j in range(6)]
        assert float(feature_w1(c, d)) == pytest.approx(np.mean(per_channel), rel=1e-9)
