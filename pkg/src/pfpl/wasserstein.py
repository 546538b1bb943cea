"""Empirical Wasserstein distances.

`w1_1d` is the sorting solution for equal-size 1-D samples (differentiable
almost everywhere, used inside the training objective); `w1_oracle` minimizes
the coupling directly (factorial search or a small linear program) and exists
purely to verify `w1_1d`; `feature_w1` aggregates per-channel distances over a
feature sequence.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.optimize
import torch

from .exceptions import InvalidInput

ORACLE_PERMUTATION_CAP = 8
ORACLE_LP_CAP = 32


@lru_cache(maxsize=None)
def _all_permutations(n: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(n))), dtype=np.intp)


@dataclass(frozen=True)
class Coupling:
    """n x m transport plan with fixed marginals 1/n and 1/m."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2:
            raise InvalidInput("coupling must be a 2-D matrix")
        if np.any(m < -1e-12):
            raise InvalidInput("coupling has negative mass")
        n_rows, n_cols = m.shape
        if not np.allclose(m.sum(axis=1), 1.0 / n_rows, atol=1e-12):
            raise InvalidInput("coupling row sums must equal 1/n")
        if not np.allclose(m.sum(axis=0), 1.0 / n_cols, atol=1e-12):
            raise InvalidInput("coupling column sums must equal 1/m")
        object.__setattr__(self, "matrix", m)


def _as_1d(points, name: str) -> torch.Tensor:
    t = torch.as_tensor(points)
    if t.dim() != 1 or t.numel() == 0:
        raise InvalidInput(f"{name} must be a non-empty 1-D sample")
    if not torch.isfinite(t).all():
        raise InvalidInput(f"{name} contains non-finite values")
    return t


def w1_1d(a, b) -> torch.Tensor:
    """W1 between equal-size empirical samples: mean |sorted(a) - sorted(b)|.

    Accepts array-likes or tensors; returns a 0-dim tensor so gradients can
    flow through the sorted values (sort permutation fixed in backward).
    """
    ta, tb = _as_1d(a, "a"), _as_1d(b, "b")
    if ta.numel() != tb.numel():
        raise InvalidInput(
            f"sample sizes differ: {ta.numel()} vs {tb.numel()} (equal counts required)"
        )
    sa, _ = torch.sort(ta)
    sb, _ = torch.sort(tb)
    return (sa - sb).abs().mean()


def w1_oracle(a, b, p: int = 1, return_coupling: bool = False):
    """Exact W_p by direct minimization over couplings. Verification only.

    Equal sizes up to ORACLE_PERMUTATION_CAP use exhaustive permutation
    search; anything else up to ORACLE_LP_CAP points per side is solved as a
    linear program over the coupling polytope.
    """
    xa = np.asarray(a, dtype=np.float64).ravel()
    xb = np.asarray(b, dtype=np.float64).ravel()
    if xa.size == 0 or xb.size == 0:
        raise InvalidInput("samples must be non-empty")
    if p < 1:
        raise InvalidInput(f"order p must be >= 1, got {p}")
    cost = np.abs(xa[:, None] - xb[None, :]) ** p

    if xa.size == xb.size and xa.size <= ORACLE_PERMUTATION_CAP:
        n = xa.size
        perms = _all_permutations(n)
        costs = cost[np.arange(n)[None, :], perms].mean(axis=1)
        best_idx = int(costs.argmin())
        value = float(costs[best_idx]) ** (1.0 / p)
        if return_coupling:
            matrix = np.zeros((n, n))
            matrix[np.arange(n), perms[best_idx]] = 1.0 / n
            return value, Coupling(matrix)
        return value

    if xa.size > ORACLE_LP_CAP or xb.size > ORACLE_LP_CAP:
        raise InvalidInput(
            f"oracle caps at {ORACLE_LP_CAP} points per side, "
            f"got {xa.size} and {xb.size}"
        )
    value, matrix = _solve_lp(cost, xa.size, xb.size)
    value = value ** (1.0 / p)
    if return_coupling:
        return value, Coupling(matrix)
    return value


def _solve_lp(cost: np.ndarray, n: int, m: int):
    # min <cost, gamma> s.t. row sums 1/n, col sums 1/m, gamma >= 0
    a_eq = np.zeros((n + m, n * m))
    for i in range(n):
        a_eq[i, i * m : (i + 1) * m] = 1.0
    for j in range(m):
        a_eq[n + j, j::m] = 1.0
    b_eq = np.concatenate([np.full(n, 1.0 / n), np.full(m, 1.0 / m)])
    res = scipy.optimize.linprog(
        cost.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs"
    )
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun), res.x.reshape(n, m)


def feature_w1(c, c_hat, reduction: str = "mean") -> torch.Tensor:
    """Mean (or sum) over channels of per-channel W1 between frame sequences.

    Inputs are (frames, channels) or batched (batch, frames, channels); the
    batched form averages over the batch.
    """
    tc = torch.as_tensor(c)
    th = torch.as_tensor(c_hat)
    if tc.shape != th.shape:
        raise InvalidInput(f"feature shapes differ: {tuple(tc.shape)} vs {tuple(th.shape)}")
    if tc.dim() == 2:
        tc, th = tc.unsqueeze(0), th.unsqueeze(0)
    elif tc.dim() != 3:
        raise InvalidInput(f"features must be 2-D or 3-D, got {tc.dim()}-D")
    if tc.shape[1] == 0 or tc.shape[2] == 0:
        raise InvalidInput("features must have at least one frame and one channel")
    # sort along the frame axis per (batch, channel)
    sc, _ = torch.sort(tc.transpose(1, 2), dim=-1)
    sh, _ = torch.sort(th.transpose(1, 2), dim=-1)
    per_channel = (sc - sh).abs().mean(dim=-1)  # (batch, channels)
    if reduction == "mean":
        return per_channel.mean(dim=-1).mean()
    if reduction == "sum":
        return per_channel.sum(dim=-1).mean()
    raise InvalidInput(f"unknown reduction {reduction!r}; use 'mean' or 'sum'")
