"""Self-learned graph structure.

A packed vector of length N(N+1)/2 parameterizes a symmetric matrix; a
trainable soft threshold turns it into keep-probabilities; gumbel-argmax
with a straight-through backward pass yields a sparse binary adjacency.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .autodiff import Tensor, as_tensor, ops

PROB_EPS = 1e-6  # clamp for probabilities entering the log


def theta_length(n: int) -> int:
    return n * (n + 1) // 2


def theta_index(i: int, j: int) -> int:
    """1-based packed index for row i, col j (j <= i): i(i-1)/2 + j."""
    if not 1 <= j <= i:
        raise IndexError(f"need 1 <= j <= i, got ({i}, {j})")
    return i * (i - 1) // 2 + j


def symmetric_index_matrix(n: int) -> np.ndarray:
    """0-based N x N lookup into the packed vector, mirrored."""
    idx = np.empty((n, n), dtype=np.intp)
    for i in range(1, n + 1):
        for j in range(1, i + 1):
            idx[i - 1, j - 1] = idx[j - 1, i - 1] = theta_index(i, j) - 1
    return idx


@dataclass
class GraphParams:
    """Packed adjacency parameters, threshold, per-block edge weights."""
    theta: np.ndarray        # (N(N+1)/2,)
    alpha: np.ndarray        # scalar, shape ()
    per_layer_weights: List[np.ndarray]  # L matrices (N, N)

    @property
    def n_rois(self) -> int:
        length = self.theta.shape[0]
        n = int((np.sqrt(8 * length + 1) - 1) / 2)
        assert theta_length(n) == length
        return n


def init_graph_params(n: int, n_blocks: int,
                      rng: np.random.Generator,
                      theta_std: float = 0.5) -> GraphParams:
    theta = rng.normal(0.0, theta_std, size=theta_length(n))
    return GraphParams(
        theta=theta,
        alpha=np.zeros(()),
        per_layer_weights=[np.ones((n, n)) for _ in range(n_blocks)],
    )


def expand_symmetric(theta, n: Optional[int] = None):
    """Packed vector -> full symmetric matrix (Tensor in, Tensor out)."""
    theta = as_tensor(theta)
    length = theta.shape[0]
    if n is None:
        n = int((np.sqrt(8 * length + 1) - 1) / 2)
    if theta_length(n) != length:
        raise ValueError(f"theta length {length} is not triangular for N={n}")
    return ops.gather_symmetric(theta, symmetric_index_matrix(n))


def sparsify(a_full, alpha):
    """Soft threshold: ReLU(Sigmoid(A) - Sigmoid(alpha)), entries in [0,1)."""
    return ops.relu(ops.sigmoid(as_tensor(a_full)) - ops.sigmoid(as_tensor(alpha)))


def draw_gumbel_pair(n: int, rng: np.random.Generator):
    """One Gumbel(0,1) pair per unordered node pair, mirrored to N x N."""
    g1 = rng.gumbel(size=(n, n))
    g2 = rng.gumbel(size=(n, n))
    upper = np.triu_indices(n)
    for g in (g1, g2):
        g[(upper[1], upper[0])] = g[upper]
    return g1, g2


def gumbel_binarize(prob, tau: float, rng: Optional[np.random.Generator] = None,
                    mode: str = "train", noise=None, hard: bool = True,
                    break_st: bool = False) -> Tensor:
    """Sample a binary adjacency from keep-probabilities.

    train mode: exact Bernoulli sampling by gumbel-argmax, symmetric by
    sharing one draw per unordered pair; backward follows the softmax
    relaxation (straight-through). eval mode: deterministic, edge kept
    iff probability > 0.5, no noise and no gradient.
    """
    prob = as_tensor(prob)
    n = prob.shape[0]
    if mode == "eval":
        return Tensor((prob.value > 0.5).astype(float))
    if mode != "train":
        raise ValueError(f"unknown mode '{mode}'")
    if tau <= 0:
        raise ValueError("temperature must be positive")
    if noise is not None:
        g1, g2 = noise
    else:
        g1, g2 = draw_gumbel_pair(n, rng)
    clamped = ops.clamp(prob, PROB_EPS, 1.0 - PROB_EPS)
    return ops.gumbel_straight_through(clamped, g1, g2, tau,
                                       hard=hard, break_st=break_st)


def sparsity_loss(theta):
    """Mean sigmoid over the packed adjacency parameters."""
    return ops.mean(ops.sigmoid(as_tensor(theta)))
