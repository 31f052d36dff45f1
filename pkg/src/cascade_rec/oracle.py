"""Brute-force reference quantities for tests and acceptance runs.

These are deliberately written without scipy and without importing any
estimator code, so a bug in one path cannot hide in the other. Every function
is O(num_items) and refuses catalogs above ``MAX_CATALOG``.
"""

from __future__ import annotations

import numpy as np

MAX_CATALOG = 10_000


def _check(n):
    assert 1 <= n <= MAX_CATALOG, f"oracle catalog size {n} outside [1, {MAX_CATALOG}]"


def exact_log_normalizer(scores) -> float:
    s = np.asarray(scores, dtype=np.float64).ravel()
    _check(len(s))
    top = s.max()
    return float(top + np.log(np.exp(s - top).sum()))


def exact_softmax(scores, temperature: float = 1.0) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64).ravel() / temperature
    _check(len(s))
    w = np.exp(s - s.max())
    return w / w.sum()


def exact_log_softmax(scores, positive: int) -> float:
    s = np.asarray(scores, dtype=np.float64).ravel()
    return float(s[positive] - exact_log_normalizer(s))


def exact_kl(p_scores, q_scores) -> float:
    """KL(softmax(p_scores) || softmax(q_scores)) over the full catalog."""
    p_scores = np.asarray(p_scores, dtype=np.float64).ravel()
    q_scores = np.asarray(q_scores, dtype=np.float64).ravel()
    if p_scores.shape != q_scores.shape:
        raise ValueError("score vectors differ in length")
    p = exact_softmax(p_scores)
    log_ratio = (p_scores - exact_log_normalizer(p_scores)) - (q_scores - exact_log_normalizer(q_scores))
    return float(np.sum(p * log_ratio))


def rank_by_sort(scores, target: int) -> int:
    """1-based rank of ``target`` under a full sort (score desc, index asc)."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    order = sorted(range(len(s)), key=lambda i: (-s[i], i))
    return order.index(target) + 1


def empirical_marginal(stream, num_items: int, reference=None):
    """Normalized counts of ``stream``; with ``reference`` also the TV distance."""
    _check(num_items)
    stream = np.asarray(stream).ravel()
    if stream.size == 0:
        raise ValueError("empty sample stream")
    freq = np.bincount(stream, minlength=num_items) / stream.size
    if reference is None:
        return freq
    return freq, total_variation(freq, reference)


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p, float) - np.asarray(q, float)).sum())
