"""Constrained inference for hierarchical histograms.

Two linear sweeps turn independent noisy node estimates into the least-squares
tree in which every internal node equals the sum of its children: a bottom-up
weighted average of each node with its children's averaged values, then a
top-down pass that shares each parent's residual equally among its children.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import brentq

from .errors import CapacityError, DomainError
from .freq_oracle import PrivacySpec, variance_formula
from .hierarchy import NodeEstimates, TreeLayout

# Consistency-enforced estimates share the node layout; ``consistent`` is set.
ConsistentEstimates = NodeEstimates

LSQ_NODE_LIMIT = 10_000


def weighted_average(est: NodeEstimates) -> NodeEstimates:
    """Bottom-up pass. A node i levels above the leaves (leaves are i = 1) becomes
    ((B^i - B^(i-1)) f + (B^(i-1) - 1) * sum of children) / (B^i - 1)."""
    layout = est.layout
    B, h = layout.b, layout.h
    fbar = [None] * (h + 1)
    fbar[h] = np.array(est.levels[h])
    for level in range(h - 1, -1, -1):
        i = h - level + 1
        denom = B**i - 1
        child_sum = fbar[level + 1].reshape(B**level, B).sum(axis=1)
        fbar[level] = ((B**i - B ** (i - 1)) * est.levels[level] + (B ** (i - 1) - 1) * child_sum) / denom
    return est.replace_values(fbar, consistent=False)


def mean_consistency(fbar: NodeEstimates) -> NodeEstimates:
    """Top-down pass: each child absorbs 1/B of the gap between its parent's final
    value and the sum of the parent's children."""
    B, h = fbar.layout.b, fbar.layout.h
    fhat = [np.array(fbar.levels[0])]
    for level in range(1, h + 1):
        vals = fbar.levels[level]
        gap = fhat[level - 1] - vals.reshape(B ** (level - 1), B).sum(axis=1)
        fhat.append(vals + np.repeat(gap, B) / B)
    return fbar.replace_values(fhat, consistent=True)


def enforce(est: NodeEstimates) -> NodeEstimates:
    return mean_consistency(weighted_average(est))


def hierarchy_matrix(layout: TreeLayout) -> np.ndarray:
    """Dense 0/1 matrix with one row per node (root first, level order) marking the leaves it covers."""
    rows = []
    for level in range(layout.h + 1):
        size = layout.level_size(level)
        rows.append(np.kron(np.eye(size), np.ones(layout.block(level))))
    return np.vstack(rows)


def least_squares_oracle(est: NodeEstimates) -> NodeEstimates:
    """Solve the normal equations (H^T H) c = H^T x for the leaves and read every node off H c."""
    layout = est.layout
    if layout.n_nodes > LSQ_NODE_LIMIT:
        raise CapacityError(f"dense least squares limited to {LSQ_NODE_LIMIT} nodes, "
                            f"tree has {layout.n_nodes}")
    H = hierarchy_matrix(layout)
    leaves = np.linalg.solve(H.T @ H, H.T @ est.flat())
    return NodeEstimates.from_flat(layout, H @ leaves, est.counts, consistent=True)


def consistency_violation(est: NodeEstimates) -> float:
    """Largest |parent - sum of children| over all internal nodes."""
    B = est.layout.b
    worst = 0.0
    for level in range(est.layout.h):
        kids = est.levels[level + 1].reshape(B**level, B).sum(axis=1)
        worst = max(worst, float(np.max(np.abs(est.levels[level] - kids))))
    return worst


def post_ci_variance_bound(b: int, r: int, d: int, priv: PrivacySpec, n: int) -> float:
    """(B + 1) V_F log_B r log_B D / 2 for a range of length r after constrained inference."""
    if r < 1 or d < 1:
        raise DomainError("range length and domain size must be positive")
    log_b = lambda x: math.log(x) / math.log(b)
    return (b + 1) * variance_formula("oue", priv, n) * log_b(r) * log_b(d) / 2


def post_ci_optimal_branching() -> float:
    """Root of B ln B - 2B - 2, the stationary point of (B + 1) log_B r log_B D."""
    return brentq(lambda x: x * math.log(x) - 2 * x - 2, 2.0, 50.0)
