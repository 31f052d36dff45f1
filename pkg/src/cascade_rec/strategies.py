"""Alternative item selections for ablations.

Ranker negatives (used with a plain, uncorrected log-softmax):

* ``gtop``      -- uniform 20 of the global top-500 uninteracted items
* ``gtoprand``  -- uniform 10 of the global top-500 + uniform 10 uninteracted
* ``ltop``      -- top 20 of a uniform 100-item uninteracted pool
* ``ltoprand``  -- top 10 of that pool + uniform 10 uninteracted

KL items (uninteracted items are *not* excluded here, the positive is):

* ``rand``      -- uniform 20 items, corrected by the uniform proposal
* ``top``       -- retriever top 20, uncorrected
* ``toprand``   -- retriever top 10 + uniform 10, uncorrected

Functions here take the retriever's catalog scores for one context. Uniform
picks within one selection are without replacement; the two halves of a
``*rand`` selection are drawn independently and may overlap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NEGATIVE_STRATEGIES = ("resample", "gtop", "gtoprand", "ltop", "ltoprand")
KL_STRATEGIES = ("resample", "rand", "top", "toprand")


@dataclass(frozen=True)
class StrategySpec:
    kind: str
    global_top: int = 500
    local_pool: int = 100
    top_count: int = 10
    rand_count: int = 10
    count: int = 20


def _allowed_items(num_items, exclude):
    mask = np.ones(num_items, dtype=bool)
    if isinstance(exclude, (set, frozenset)):
        exclude = sorted(exclude)
    mask[np.asarray(exclude, dtype=np.int64)] = False
    return np.flatnonzero(mask)


def _top(scores, candidates, k):
    """Top ``k`` of ``candidates`` by score, ties to the lower item index."""
    order = np.lexsort((candidates, -scores[candidates]))
    return candidates[order[:k]]


def _uniform(candidates, k, rng):
    if k > len(candidates):
        raise ValueError(f"need {k} candidates, only {len(candidates)} available")
    return rng.choice(candidates, size=k, replace=False)


def gtop(scores, exclude, rng, spec: StrategySpec = StrategySpec("gtop")):
    allowed = _allowed_items(len(scores), exclude)
    top = _top(scores, allowed, spec.global_top)
    return _uniform(top, min(spec.count, len(top)), rng)


def gtoprand(scores, exclude, rng, spec: StrategySpec = StrategySpec("gtoprand")):
    allowed = _allowed_items(len(scores), exclude)
    top = _top(scores, allowed, spec.global_top)
    return np.concatenate([_uniform(top, spec.top_count, rng),
                           _uniform(allowed, spec.rand_count, rng)])


def ltop(scores, exclude, rng, spec: StrategySpec = StrategySpec("ltop")):
    allowed = _allowed_items(len(scores), exclude)
    pool = _uniform(allowed, min(spec.local_pool, len(allowed)), rng)
    return _top(scores, pool, spec.count)


def ltoprand(scores, exclude, rng, spec: StrategySpec = StrategySpec("ltoprand")):
    allowed = _allowed_items(len(scores), exclude)
    pool = _uniform(allowed, min(spec.local_pool, len(allowed)), rng)
    return np.concatenate([_top(scores, pool, spec.top_count),
                           _uniform(allowed, spec.rand_count, rng)])


def kl_rand(scores, exclude, rng, spec: StrategySpec = StrategySpec("rand")):
    return _uniform(_allowed_items(len(scores), exclude), spec.count, rng)


def kl_top(scores, exclude, rng, spec: StrategySpec = StrategySpec("top")):
    return _top(scores, _allowed_items(len(scores), exclude), spec.count)


def kl_toprand(scores, exclude, rng, spec: StrategySpec = StrategySpec("toprand")):
    allowed = _allowed_items(len(scores), exclude)
    return np.concatenate([_top(scores, allowed, spec.top_count),
                           _uniform(allowed, spec.rand_count, rng)])


NEGATIVE_SELECTORS = {"gtop": gtop, "gtoprand": gtoprand, "ltop": ltop, "ltoprand": ltoprand}
KL_SELECTORS = {"rand": kl_rand, "top": kl_top, "toprand": kl_toprand}


def kl_log_correction(kind: str, num_items: int) -> float:
    """Log-proposal subtracted from KL logits: uniform for ``rand``, none otherwise."""
    return -np.log(num_items) if kind == "rand" else 0.0


def select_batch(kind, scores, excludes, rng, spec: StrategySpec | None = None) -> np.ndarray:
    """Run one strategy for every row of a (B, num_items) score matrix."""
    selector = NEGATIVE_SELECTORS.get(kind) or KL_SELECTORS.get(kind)
    if selector is None:
        raise ValueError(f"unknown strategy {kind!r}")
    spec = spec or StrategySpec(kind)
    return np.stack([selector(scores[b], excludes[b], rng, spec) for b in range(len(scores))])


# Convenience wrappers taking a retriever and context.

def _ctx_scores(retriever, ctx):
    return retriever.score_all(ctx)


def select_negatives(kind, retriever, ctx, interacted, positive, rng, spec=None):
    exclude = set(int(i) for i in interacted) | {int(positive)}
    return NEGATIVE_SELECTORS[kind](_ctx_scores(retriever, ctx), exclude, rng, spec or StrategySpec(kind))


def select_kl_items(kind, retriever, ctx, positive, rng, spec=None):
    return KL_SELECTORS[kind](_ctx_scores(retriever, ctx), {int(positive)}, rng, spec or StrategySpec(kind))
