"""Cooperative training of a retriever and a ranker.

Per training pair ``(c, k)``:

1. draw a pool of ``n`` items from the static proposal and append ``k``;
2. score the pool with the retriever (constants, no gradient);
3. resample ``L`` items ``S`` with weights ``softmax(M / T - log Y)``;
4. retriever descends ``-sampled_log_softmax(M) + kl_weight * KL(P_S || Q_S)``
   with the ranker's scores held constant;
5. ranker descends ``-sampled_log_softmax(R)`` with the sampler held constant;
6. both models take an SGD step computed from the same pre-update scores.

Losses are averaged over the batch. ``TrainConfig.adaptive=False`` skips the
resampling and draws ``S`` straight from the static proposal, which is how the
independently trained baselines are built.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import estimators as est
from .config import TrainConfig
from .dataset import InteractionDataset, training_pairs
from .evaluation import EvalConfig, MetricsReport, evaluate
from .models import ContextBatch, Ranker, Retriever, sgd_update, stack_contexts
from .sampler import StaticProposal, draw_pool, two_step_sample_batch
from .strategies import StrategySpec, kl_log_correction, select_batch

log = logging.getLogger(__name__)


class NumericalError(FloatingPointError):
    """A non-finite loss or gradient; ``dump`` holds the offending step's state."""

    def __init__(self, message, dump):
        super().__init__(message)
        self.dump = dump


@dataclass
class TrainState:
    retriever: Retriever
    ranker: Ranker
    proposal: StaticProposal
    rng: np.random.Generator
    epoch: int = 0
    step: int = 0
    losses: list = field(default_factory=list)


@dataclass
class StepSamples:
    items: np.ndarray  # resampled S, (B, L)
    log_q: np.ndarray
    positive_log_q: np.ndarray  # (B,)
    ranker_items: np.ndarray
    ranker_log_q: np.ndarray
    ranker_positive_log_q: np.ndarray
    kl_items: np.ndarray
    kl_log_q: np.ndarray


def _seeds(seed: int) -> tuple[int, int, int]:
    children = np.random.SeedSequence(seed).spawn(3)
    return tuple(int(c.generate_state(1, dtype=np.uint32)[0]) for c in children)


def init_state(config: TrainConfig, ds: InteractionDataset) -> TrainState:
    ret_seed, rank_seed, rng_seed = _seeds(config.seed)
    hidden = config.hidden or 2 * config.dim
    return TrainState(
        retriever=Retriever(ds.num_items, config.dim, ret_seed),
        ranker=Ranker(ds.num_items, config.dim, rank_seed, hidden, config.activation),
        proposal=StaticProposal.from_config(config.proposal, ds.popularity, config.popularity_exponent),
        rng=np.random.default_rng(rng_seed),
    )


def _interacted_excludes(ds, users, positives):
    return [set(ds.sequences[u][:-1].tolist()) | {int(p)} for u, p in zip(users, positives)]


def draw_samples(state: TrainState, config: TrainConfig, ds: InteractionDataset,
                 batch: ContextBatch, positives: np.ndarray) -> StepSamples:
    rng, proposal = state.rng, state.proposal
    B = len(batch)
    if config.adaptive:
        out = two_step_sample_batch(proposal, state.retriever, batch, positives,
                                    config.pool_size, config.num_samples, config.temperature, rng)
        items, log_q, pos_lq = out.items, out.log_q, out.positive_log_q
    else:
        items = draw_pool(proposal, config.num_samples, rng, size=B)
        log_q = proposal.log_probs[items]
        pos_lq = proposal.log_probs[positives]

    rank_items, rank_lq, rank_pos_lq = items, log_q, pos_lq
    kl_items, kl_lq = items, log_q
    needs_scores = config.ranker_negative_strategy != "resample" or config.kl_item_strategy != "resample"
    if needs_scores:
        catalog_scores = state.retriever.score_all_batch(batch)
    if config.ranker_negative_strategy != "resample":
        kind = config.ranker_negative_strategy
        spec = StrategySpec(kind, global_top=config.global_top, local_pool=config.local_pool)
        excludes = _interacted_excludes(ds, batch.users, positives)
        rank_items = select_batch(kind, catalog_scores, excludes, rng, spec)
        # top-k style selections carry no sampling probability
        rank_lq = np.zeros(rank_items.shape)
        rank_pos_lq = np.zeros(B)
    if config.kl_item_strategy != "resample":
        kind = config.kl_item_strategy
        excludes = [{int(p)} for p in positives]
        kl_items = select_batch(kind, catalog_scores, excludes, rng, StrategySpec(kind))
        kl_lq = np.full(kl_items.shape, kl_log_correction(kind, ds.num_items))
    return StepSamples(items, log_q, pos_lq, rank_items, rank_lq, rank_pos_lq, kl_items, kl_lq)


def step_objectives(retriever, ranker, batch: ContextBatch, positives: np.ndarray,
                    samples: StepSamples, config: TrainConfig):
    """Batch-mean losses and descent gradients for both models with samples fixed.

    Returns ``(losses, retriever_grad, ranker_grad)`` where the retriever
    gradient is of ``-l_theta + kl_weight * KL`` and the ranker gradient of
    ``-l_phi``.
    """
    B = len(batch)
    pos = positives.reshape(B, 1)
    L = samples.items.shape[1]
    kl_shared = samples.kl_items is samples.items
    rank_shared = samples.ranker_items is samples.items

    r_grid = [pos, samples.items] + ([] if kl_shared else [samples.kl_items])
    m_scores, m_cache = retriever.forward(batch, np.concatenate(r_grid, axis=1))
    k_grid = [pos, samples.ranker_items]
    if not (kl_shared and rank_shared):
        k_grid.append(samples.kl_items)
    k_scores, k_cache = ranker.forward(batch, np.concatenate(k_grid, axis=1))

    # retriever supervision
    m_pos = m_scores[:, 0] - samples.positive_log_q
    m_s = m_scores[:, 1:L + 1] - samples.log_q
    sup = est.sampled_log_softmax(m_pos, m_s)
    m_coef = np.zeros_like(m_scores)
    m_coef[:, :L + 1] = est.sampled_log_softmax_coef(m_pos, m_s)

    # distillation: teacher scores are plain arrays here
    Lr = samples.ranker_items.shape[1]
    kl_cols_m = slice(1, L + 1) if kl_shared else slice(L + 1, None)
    kl_cols_k = slice(1, Lr + 1) if (kl_shared and rank_shared) else slice(Lr + 1, None)
    m_kl = m_scores[:, kl_cols_m] - samples.kl_log_q
    r_kl = k_scores[:, kl_cols_k] - samples.kl_log_q
    kl = est.sampled_kl(r_kl, m_kl)
    if config.kl_weight:
        m_coef[:, kl_cols_m] += config.kl_weight * est.sampled_kl_retriever_coef(r_kl, m_kl)

    # ranker supervision
    k_pos = k_scores[:, 0] - samples.ranker_positive_log_q
    k_s = k_scores[:, 1:Lr + 1] - samples.ranker_log_q
    rank_obj = est.sampled_log_softmax(k_pos, k_s)
    k_coef = np.zeros_like(k_scores)
    k_coef[:, :Lr + 1] = est.sampled_log_softmax_coef(k_pos, k_s)

    m_grad = retriever.backward(m_cache, m_coef / B)
    k_grad = ranker.backward(k_cache, k_coef / B)
    losses = {
        "retriever_loss": float(-sup.mean()),
        "kl": float(kl.mean()),
        "ranker_loss": float(-rank_obj.mean()),
    }
    return losses, m_grad, k_grad


def _check_finite(state, losses, grads, batch, positives, samples):
    ok = all(np.isfinite(v) for v in losses.values()) and all(g.is_finite() for g in grads)
    if ok:
        return
    dump = {
        "step": state.step,
        "epoch": state.epoch,
        "losses": losses,
        "users": batch.users.tolist(),
        "positives": positives.tolist(),
        "sample_items": samples.items.tolist(),
        "sample_log_q": samples.log_q.tolist(),
    }
    raise NumericalError(f"non-finite loss or gradient at step {state.step}: {losses}", dump)


def train_batch(state: TrainState, config: TrainConfig, ds: InteractionDataset,
                batch: ContextBatch, positives: np.ndarray) -> dict:
    try:
        with np.errstate(invalid="ignore", over="ignore"):
            samples = draw_samples(state, config, ds, batch, positives)
            losses, m_grad, k_grad = step_objectives(state.retriever, state.ranker, batch,
                                                     positives, samples, config)
    except NumericalError:
        raise
    except FloatingPointError as exc:
        dump = {"step": state.step, "epoch": state.epoch, "users": batch.users.tolist(),
                "positives": positives.tolist(), "error": str(exc)}
        raise NumericalError(f"non-finite value at step {state.step}: {exc}", dump) from exc
    _check_finite(state, losses, (m_grad, k_grad), batch, positives, samples)
    # both gradients were taken at pre-update parameters
    if config.update_retriever:
        sgd_update(state.retriever.params, m_grad, config.learning_rate, config.weight_decay,
                   config.embedding_lr_scale)
    if config.update_ranker:
        sgd_update(state.ranker.params, k_grad, config.learning_rate, config.weight_decay,
                   config.embedding_lr_scale)
    state.step += 1
    return losses


def train_step(state: TrainState, config: TrainConfig, ds: InteractionDataset, pairs) -> dict:
    """One update from a list of ``(Context, positive)`` pairs."""
    pairs = list(pairs)
    batch = stack_contexts([c for c, _ in pairs])
    positives = np.array([k for _, k in pairs], dtype=np.int64)
    return train_batch(state, config, ds, batch, positives)


@dataclass
class PairArrays:
    batch: ContextBatch
    positives: np.ndarray

    @classmethod
    def from_dataset(cls, ds: InteractionDataset) -> "PairArrays":
        pairs = list(training_pairs(ds))
        if not pairs:
            return cls(ContextBatch(*(np.zeros((0,) + s) for s in ((), (1,), (1,), ()))),
                       np.zeros(0, dtype=np.int64))
        return cls(stack_contexts([c for c, _ in pairs]), np.array([k for _, k in pairs]))

    def take(self, idx):
        b = self.batch
        return ContextBatch(b.users[idx], b.history[idx], b.mask[idx], b.lengths[idx]), self.positives[idx]

    def __len__(self):
        return len(self.positives)


@dataclass
class TrainResult:
    retriever: Retriever
    ranker: Ranker
    reports: list[MetricsReport]
    losses: list[dict]


def train(config: TrainConfig, ds: InteractionDataset, eval_config: EvalConfig | None = None,
          evaluate_each_epoch: bool = True, on_epoch=None) -> TrainResult:
    if ds.num_items == 0 or ds.num_users == 0:
        raise ValueError("empty dataset")
    eval_config = eval_config or EvalConfig()
    state = init_state(config, ds)
    pairs = PairArrays.from_dataset(ds)
    reports: list[MetricsReport] = []
    for epoch in range(1, config.epochs + 1):
        state.epoch = epoch
        order = state.rng.permutation(len(pairs))
        totals: dict[str, float] = {}
        num_batches = 0
        for start in range(0, len(order), config.batch_size):
            batch, positives = pairs.take(order[start:start + config.batch_size])
            losses = train_batch(state, config, ds, batch, positives)
            for key, value in losses.items():
                totals[key] = totals.get(key, 0.0) + value
            num_batches += 1
        epoch_losses = {"epoch": epoch, **{k: v / max(num_batches, 1) for k, v in totals.items()}}
        state.losses.append(epoch_losses)
        log.info("epoch %d %s", epoch, epoch_losses)
        if evaluate_each_epoch:
            epoch_reports = evaluate(ds, state.retriever, state.ranker, eval_config, epoch)
            reports.extend(epoch_reports)
            if on_epoch is not None:
                on_epoch(epoch, epoch_reports, epoch_losses)
    return TrainResult(state.retriever, state.ranker, reports, state.losses)


def independent_config(config: TrainConfig, which: str = "both") -> TrainConfig:
    """Baseline setting: uniform static samples, no distillation, no cross-model signal."""
    if which not in ("retriever", "ranker", "both"):
        raise ValueError(f"which must be retriever, ranker or both, not {which!r}")
    return replace(
        config,
        kl_weight=0.0,
        adaptive=False,
        proposal="uniform",
        ranker_negative_strategy="resample",
        kl_item_strategy="resample",
        update_retriever=which in ("retriever", "both"),
        update_ranker=which in ("ranker", "both"),
    )


def train_independent(config: TrainConfig, ds: InteractionDataset, which: str = "both",
                      eval_config: EvalConfig | None = None, **kwargs) -> TrainResult:
    return train(independent_config(config, which), ds, eval_config, **kwargs)
