"""Static proposals and the two-step adaptive sampler.

Step one draws a pool of ``n`` items i.i.d. from a cheap static distribution
``Y``. Step two resamples ``L`` items from the pool with replacement, slot ``j``
weighted by ``exp(score_j / T - log Y(o_j))``. As ``n`` grows the resampled
marginal approaches ``softmax(score / T)`` over the whole catalog.

Pool duplicates keep separate softmax slots. The log-probability recorded for
a resampled element is the item-level probability, i.e. the slot masses summed
over every slot holding that item.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .dataset import Context
from .models import ContextBatch, stack_contexts

DEFAULT_POOL_SIZE = 100
DEFAULT_NUM_SAMPLES = 20
DEFAULT_TEMPERATURE = 1.0
DEFAULT_POPULARITY_EXPONENT = 0.75


@dataclass(frozen=True)
class StaticProposal:
    kind: str
    log_probs: np.ndarray

    @classmethod
    def uniform(cls, num_items: int) -> "StaticProposal":
        return cls("uniform", np.full(num_items, -np.log(num_items)))

    @classmethod
    def popularity(cls, counts, exponent: float = DEFAULT_POPULARITY_EXPONENT) -> "StaticProposal":
        counts = np.asarray(counts, dtype=float)
        if np.any(counts < 0) or counts.sum() <= 0:
            raise ValueError("popularity counts must be non-negative with a positive total")
        with np.errstate(divide="ignore"):
            logw = exponent * np.log(counts)
        return cls("popularity", logw - logsumexp(logw))

    @classmethod
    def from_config(cls, kind: str, popularity=None, exponent=DEFAULT_POPULARITY_EXPONENT):
        if kind == "uniform":
            return cls.uniform(len(popularity))
        if kind == "popularity":
            return cls.popularity(popularity, exponent)
        raise ValueError(f"unknown proposal kind {kind!r}")

    @property
    def num_items(self) -> int:
        return len(self.log_probs)

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)


@dataclass
class CandidatePool:
    items: np.ndarray
    static_log_y: np.ndarray
    retriever_scores: np.ndarray
    temperature: float


@dataclass
class SampleSet:
    items: np.ndarray
    log_q: np.ndarray
    slots: np.ndarray  # pool slot each element was drawn from
    positive_log_q: float | None = None


def draw_pool(proposal: StaticProposal, n: int, rng: np.random.Generator, size=()) -> np.ndarray:
    """Draw ``n`` i.i.d. items from the proposal; ``size`` prepends batch dims."""
    if n < 1:
        raise ValueError("pool size must be >= 1")
    shape = tuple(np.atleast_1d(size)) + (n,) if size != () else (n,)
    if proposal.kind == "uniform":
        return rng.integers(0, proposal.num_items, size=shape)
    return rng.choice(proposal.num_items, size=shape, p=proposal.probs)


def slot_log_probs(scores: np.ndarray, log_y: np.ndarray, temperature: float) -> np.ndarray:
    """Per-slot log-softmax of ``score / T - log Y`` along the last axis."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    scores = np.asarray(scores, dtype=float)
    if not np.all(np.isfinite(scores)):
        raise FloatingPointError("non-finite retriever score in candidate pool")
    logits = scores / temperature - log_y
    return logits - logsumexp(logits, axis=-1, keepdims=True)


def aggregate_duplicates(items: np.ndarray, slot_log_q: np.ndarray) -> np.ndarray:
    """Item-level log-probability seen from each slot (log-sum over equal-item slots).

    Works row-wise on (B, K) arrays via a grouped, max-shifted log-sum-exp.
    """
    items = np.atleast_2d(items)
    slot_log_q = np.atleast_2d(slot_log_q)
    B, K = items.shape
    key = items + (np.arange(B)[:, None] * (int(items.max()) + 1))
    _, inverse = np.unique(key.ravel(), return_inverse=True)
    flat = slot_log_q.ravel()
    gmax = np.full(inverse.max() + 1, -np.inf)
    np.maximum.at(gmax, inverse, flat)
    total = np.bincount(inverse, weights=np.exp(flat - gmax[inverse]))
    return (gmax + np.log(total))[inverse].reshape(B, K)


def resample_weights(pool: CandidatePool) -> tuple[np.ndarray, np.ndarray]:
    """Distinct pool items and their log Q_C(i|c), normalized over the pool."""
    slot_lq = slot_log_probs(pool.retriever_scores, pool.static_log_y, pool.temperature)
    distinct, inverse = np.unique(pool.items, return_inverse=True)
    log_q = np.full(len(distinct), -np.inf)
    for k in range(len(distinct)):
        log_q[k] = logsumexp(slot_lq[inverse == k])
    return distinct, log_q


def _categorical_rows(log_p: np.ndarray, num: int, rng: np.random.Generator) -> np.ndarray:
    """``num`` inverse-CDF draws per row of a (B, K) log-probability matrix."""
    u = rng.random((log_p.shape[0], num))
    out = np.empty(u.shape, dtype=np.int64)
    for b in range(log_p.shape[0]):
        cdf = np.cumsum(np.exp(log_p[b]))
        out[b] = np.searchsorted(cdf, u[b] * cdf[-1], side="right")
    return np.minimum(out, log_p.shape[1] - 1)


@dataclass
class BatchSamples:
    pool: np.ndarray  # (B, n[+1]) slot items, positive appended last when given
    pool_scores: np.ndarray  # (B, n[+1]) retriever scores, constants
    items: np.ndarray  # (B, L)
    log_q: np.ndarray  # (B, L)
    slots: np.ndarray  # (B, L)
    positive_log_q: np.ndarray | None  # (B,)


def two_step_sample_batch(
    proposal: StaticProposal,
    retriever,
    batch: ContextBatch,
    positives: np.ndarray | None,
    n: int,
    L: int,
    temperature: float,
    rng: np.random.Generator,
) -> BatchSamples:
    if L < 1:
        raise ValueError("number of samples must be >= 1")
    B = len(batch)
    pool = draw_pool(proposal, n, rng, size=B)
    if positives is not None:
        pool = np.concatenate([pool, np.asarray(positives).reshape(B, 1)], axis=1)
    # stop-gradient: scores are plain constants, no cache is kept
    scores, _ = retriever.forward(batch, pool, need_cache=False)
    log_y = proposal.log_probs[pool]
    if positives is not None:
        # an appended positive the proposal never draws is weighted as uniform
        log_y[:, -1] = np.where(np.isfinite(log_y[:, -1]), log_y[:, -1], -np.log(proposal.num_items))
    slot_lq = slot_log_probs(scores, log_y, temperature)
    item_lq = aggregate_duplicates(pool, slot_lq)
    slots = _categorical_rows(slot_lq, L, rng)
    rows = np.arange(B)[:, None]
    pos_lq = item_lq[:, -1] if positives is not None else None
    return BatchSamples(pool, scores, pool[rows, slots], item_lq[rows, slots], slots, pos_lq)


def two_step_sample(
    proposal: StaticProposal,
    retriever,
    ctx: Context,
    positive: int | None,
    n: int = DEFAULT_POOL_SIZE,
    L: int = DEFAULT_NUM_SAMPLES,
    temperature: float = DEFAULT_TEMPERATURE,
    rng: np.random.Generator | None = None,
) -> tuple[CandidatePool, SampleSet]:
    rng = np.random.default_rng() if rng is None else rng
    positives = None if positive is None else np.array([positive])
    out = two_step_sample_batch(proposal, retriever, stack_contexts([ctx]), positives,
                                n, L, temperature, rng)
    log_y = proposal.log_probs[out.pool[0]]
    if positive is not None and not np.isfinite(log_y[-1]):
        log_y[-1] = -np.log(proposal.num_items)
    pool = CandidatePool(out.pool[0], log_y, out.pool_scores[0], temperature)
    pos_lq = None if out.positive_log_q is None else float(out.positive_log_q[0])
    return pool, SampleSet(out.items[0], out.log_q[0], out.slots[0], pos_lq)
