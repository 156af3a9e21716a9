"""Evaluation metrics: clustering error, precision-matrix squared error, and
edge-recovery rates, all under a single label alignment."""

from __future__ import annotations

from itertools import permutations

import numpy as np
from scipy.optimize import linear_sum_assignment

from .exceptions import DimensionMismatchError, EmptyTruthError

_BRUTE_FORCE_MAX_K = 8


def _confusion(est: np.ndarray, true: np.ndarray, K: int) -> np.ndarray:
    cm = np.zeros((K, K), dtype=int)
    for a, b in zip(est, true):
        cm[a - 1, b - 1] += 1
    return cm


def best_label_permutation(est_labels, true_labels) -> tuple[int, ...]:
    """Permutation sigma maximizing agreement of sigma(est) with true.

    Labels are 1-based; the returned tuple maps est label a to sigma[a-1].
    Exhaustive search up to K = 8, Hungarian assignment (same optimum)
    above that.
    """
    est = np.asarray(est_labels, dtype=int)
    true = np.asarray(true_labels, dtype=int)
    if est.shape != true.shape:
        raise DimensionMismatchError("label vectors differ in length")
    K = int(max(est.max(), true.max()))
    cm = _confusion(est, true, K)
    if K <= _BRUTE_FORCE_MAX_K:
        best, best_hits = None, -1
        for perm in permutations(range(1, K + 1)):
            hits = sum(cm[a, perm[a] - 1] for a in range(K))
            if hits > best_hits:
                best, best_hits = perm, hits
        return best
    rows, cols = linear_sum_assignment(-cm)
    sigma = np.empty(K, dtype=int)
    sigma[rows] = cols + 1
    return tuple(sigma.tolist())


def clustering_error(est_labels, true_labels) -> float:
    """Smallest misclassified fraction over all label permutations."""
    est = np.asarray(est_labels, dtype=int)
    true = np.asarray(true_labels, dtype=int)
    sigma = best_label_permutation(est, true)
    mapped = np.asarray(sigma)[est - 1]
    return float(np.mean(mapped != true))


def apply_permutation_to_stack(stack: np.ndarray, sigma) -> np.ndarray:
    """Reindex a per-subgroup stack so entry sigma[a]-1 holds old entry a."""
    out = np.empty_like(stack)
    for a, target in enumerate(sigma):
        out[target - 1] = stack[a]
    return out


def precision_matrix_error(est, truth, sigma) -> float:
    """Sum over subgroups of squared Frobenius distance after aligning the
    estimated stack by the permutation ``sigma``."""
    est = np.asarray(est, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if est.shape != truth.shape:
        raise DimensionMismatchError(
            f"stack shapes differ: {est.shape} vs {truth.shape}"
        )
    aligned = apply_permutation_to_stack(est, sigma)
    return float(np.sum(np.square(aligned - truth)))


def support_rates(est_edges, true_adjacency, sigma) -> tuple[float, float]:
    """Pooled true/false positive rates of edge recovery.

    ``est_edges[k]`` lists 0-based (j, l) pairs with j < l for the k-th
    estimated subgroup; ``true_adjacency`` is a (K, p, p) boolean stack.
    Pools over subgroups and unordered pairs after aligning subgroups.
    """
    truth = np.asarray(true_adjacency, dtype=bool)
    K, p = truth.shape[0], truth.shape[1]
    if len(est_edges) != K:
        raise DimensionMismatchError("edge list count does not match truth stack")
    aligned = [None] * K
    for a, target in enumerate(sigma):
        aligned[target - 1] = est_edges[a]
    tp = fp = 0
    n_true = 0
    for k in range(K):
        iu = np.triu_indices(p, 1)
        n_true += int(truth[k][iu].sum())
        for j, l in aligned[k]:
            if truth[k, j, l]:
                tp += 1
            else:
                fp += 1
    if n_true == 0:
        raise EmptyTruthError("no true edges: TPR undefined")
    n_pairs = K * p * (p - 1) // 2
    tpr = tp / n_true
    fpr = fp / (n_pairs - n_true) if n_pairs > n_true else 0.0
    return float(tpr), float(fpr)
