"""Ranking metrics, brute-force retrieval and two-stage prediction.

Ties are always broken toward the smaller item index. Each test case has one
target, so the ideal DCG is 1 and NDCG@k is ``1 / log2(rank + 1)`` inside the
cutoff.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Iterable

import numpy as np

from .dataset import InteractionDataset, test_cases
from .models import stack_contexts

MODES = ("retriever_only", "ranker_only", "two_stage")


@dataclass
class MetricsReport:
    mode: str
    k: int
    ndcg: float
    recall: float
    mrr: float
    num_cases: int
    epoch: int = 0

    def to_json(self) -> str:
        d = asdict(self)
        return json.dumps({key: d[key] for key in
                           ("epoch", "mode", "k", "ndcg", "recall", "mrr", "num_cases")})

    @classmethod
    def from_json(cls, line: str) -> "MetricsReport":
        return cls(**json.loads(line))


def rank_of_target(scores, target: int, candidates=None) -> int:
    """1-based rank of ``target``: 1 + #strictly better + #tied with lower index."""
    scores = np.asarray(scores, dtype=float)
    ids = np.arange(len(scores)) if candidates is None else np.asarray(candidates)
    hit = np.flatnonzero(ids == target)
    if len(hit) == 0:
        raise ValueError(f"target {target} is not among the candidates")
    s = scores[hit[0]]
    return int(1 + np.sum(scores > s) + np.sum((scores == s) & (ids < target)))


def ranks_of_targets(scores: np.ndarray, targets: np.ndarray, excluded: np.ndarray | None = None):
    """Vectorized ``rank_of_target`` over rows of a (N, num_items) score matrix.

    ``excluded`` is a boolean mask of items removed from candidacy.
    """
    rows = np.arange(len(targets))
    s_t = scores[rows, targets][:, None]
    ids = np.arange(scores.shape[1])[None, :]
    better = (scores > s_t) | ((scores == s_t) & (ids < targets[:, None]))
    if excluded is not None:
        better &= ~excluded
    return 1 + better.sum(axis=1)


def metrics_at_k(rank, k: int):
    """(ndcg, recall, mrr) for 1-based ranks; zeros beyond the cutoff or for rank 0 (missed)."""
    rank = np.asarray(rank)
    hit = (rank >= 1) & (rank <= k)
    safe = np.where(hit, rank, 1)
    ndcg = np.where(hit, 1.0 / np.log2(safe + 1.0), 0.0)
    mrr = np.where(hit, 1.0 / safe, 0.0)
    recall = hit.astype(float)
    if rank.ndim == 0:
        return float(ndcg), float(recall), float(mrr)
    return ndcg, recall, mrr


def topk_order(scores: np.ndarray, k: int, excluded: np.ndarray | None = None) -> np.ndarray:
    """Row-wise top-k item indices, score-descending, ties by ascending index."""
    scores = np.atleast_2d(np.asarray(scores, dtype=float))
    if excluded is not None:
        scores = np.where(np.atleast_2d(excluded), -np.inf, scores)
    # stable argsort on -score keeps ascending index among ties
    return np.argsort(-scores, axis=1, kind="stable")[:, :k]


def retrieve_topk(retriever, ctx, k: int, exclude: Iterable[int] = ()):
    scores = retriever.score_all(ctx)
    excluded = np.zeros(len(scores), dtype=bool)
    excluded[list(exclude)] = True
    k = min(k, int((~excluded).sum()))
    return topk_order(scores, k, excluded)[0]


def two_stage_ranks(retriever_scores, ranker_scores, targets, retrieve_k, excluded=None):
    """Rank of each target after retrieve-then-rerank; 0 marks a missed retrieval."""
    cand = topk_order(retriever_scores, retrieve_k, excluded)
    rows = np.arange(len(targets))[:, None]
    cand_scores = ranker_scores[rows, cand]
    found = cand == targets[:, None]
    retrieved = found.any(axis=1)
    pos = found.argmax(axis=1)
    s_t = cand_scores[rows[:, 0], pos][:, None]
    better = (cand_scores > s_t) | ((cand_scores == s_t) & (cand < targets[:, None]))
    if excluded is not None:
        # excluded items can appear only when fewer than retrieve_k remain
        better &= ~np.take_along_axis(np.atleast_2d(excluded), cand, axis=1)
    return np.where(retrieved, 1 + better.sum(axis=1), 0)


def two_stage_predict(retriever, ranker, ctx, retrieve_k: int = 500, final_k: int = 20, exclude=()):
    if retrieve_k < final_k:
        raise ValueError("retrieve_k must be >= final_k")
    cand = retrieve_topk(retriever, ctx, retrieve_k, exclude)
    scores = ranker.score_all(ctx)[cand]
    order = np.lexsort((cand, -scores))
    return cand[order[:final_k]]


@dataclass
class EvalConfig:
    k: int = 20
    retrieve_k: int = 500
    exclude_interacted: bool = True
    chunk: int = 256


def exclusion_mask(ds: InteractionDataset, users, targets) -> np.ndarray:
    """Mask of each user's training items; the target itself is never excluded."""
    mask = np.zeros((len(users), ds.num_items), dtype=bool)
    for row, (u, t) in enumerate(zip(users, targets)):
        mask[row, ds.sequences[u][:-1]] = True
        mask[row, t] = False
    return mask


def evaluate_ranks(ds: InteractionDataset, retriever, ranker, config: EvalConfig = EvalConfig()):
    """Per-case ranks for each mode (0 = missed), over all test cases."""
    cases = list(test_cases(ds))
    ranks = {m: [] for m in MODES}
    for start in range(0, len(cases), config.chunk):
        chunk = cases[start:start + config.chunk]
        batch = stack_contexts([c for c, _ in chunk])
        targets = np.array([t for _, t in chunk])
        excluded = exclusion_mask(ds, batch.users, targets) if config.exclude_interacted else None
        r_scores = retriever.score_all_batch(batch)
        k_scores = ranker.score_all_batch(batch)
        ranks["retriever_only"].append(ranks_of_targets(r_scores, targets, excluded))
        ranks["ranker_only"].append(ranks_of_targets(k_scores, targets, excluded))
        retrieve_k = min(config.retrieve_k, ds.num_items)
        ranks["two_stage"].append(two_stage_ranks(r_scores, k_scores, targets, retrieve_k, excluded))
    return {m: np.concatenate(v) if v else np.zeros(0, dtype=np.int64) for m, v in ranks.items()}


def reports_from_ranks(ranks: dict, k: int, epoch: int = 0) -> list[MetricsReport]:
    out = []
    for mode in MODES:
        r = ranks[mode]
        ndcg, recall, mrr = metrics_at_k(r, k)
        out.append(MetricsReport(mode, k, float(np.mean(ndcg)), float(np.mean(recall)),
                                 float(np.mean(mrr)), int(len(r)), epoch))
    return out


def evaluate(ds: InteractionDataset, retriever, ranker, config: EvalConfig = EvalConfig(), epoch: int = 0):
    """Three reports (retriever-only, ranker-only, two-stage) at cutoff ``config.k``."""
    return reports_from_ranks(evaluate_ranks(ds, retriever, ranker, config), config.k, epoch)


def write_reports(reports: Iterable[MetricsReport], fh) -> None:
    for r in reports:
        fh.write(r.to_json() + "\n")
