from dataclasses import replace

import numpy as np
import pytest

from cascade_rec import checkpoint
from cascade_rec.config import ConfigError, TrainConfig
from cascade_rec.dataset import training_pairs
from cascade_rec.estimators import sampled_kl, sampled_log_softmax
from cascade_rec.evaluation import EvalConfig
from cascade_rec.models import stack_contexts
from cascade_rec.trainer import (
    NumericalError,
    PairArrays,
    StepSamples,
    draw_samples,
    independent_config,
    init_state,
    step_objectives,
    train,
    train_batch,
    train_independent,
    train_step,
)

from conftest import analytic_flat, numeric_grad, random_model, rel_err

CFG = TrainConfig(epochs=1, batch_size=16, dim=4, pool_size=20, num_samples=5)


def _pairs(ds, n=16):
    return list(training_pairs(ds))[:n]


def _blob(model):
    return checkpoint.to_bytes(model)


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(num_samples=200, pool_size=100)
    with pytest.raises(ConfigError):
        TrainConfig(temperature=0)
    with pytest.raises(ConfigError):
        TrainConfig(ranker_negative_strategy="hardest")


def test_one_step_bit_reproducible(small_ds):
    blobs = []
    for _ in range(2):
        state = init_state(CFG, small_ds)
        train_step(state, CFG, small_ds, _pairs(small_ds))
        blobs.append((_blob(state.retriever), _blob(state.ranker)))
    assert blobs[0] == blobs[1]


def test_zero_learning_rate_changes_nothing(small_ds):
    cfg = replace(CFG, learning_rate=0.0, weight_decay=0.5)
    state = init_state(cfg, small_ds)
    before = (_blob(state.retriever), _blob(state.ranker))
    train_step(state, cfg, small_ds, _pairs(small_ds))
    assert (_blob(state.retriever), _blob(state.ranker)) == before


def test_kl_never_touches_ranker(small_ds):
    cfg = replace(CFG, update_ranker=False, kl_weight=5.0)
    state = init_state(cfg, small_ds)
    before = _blob(state.ranker)
    for _ in range(3):
        train_step(state, cfg, small_ds, _pairs(small_ds))
    assert _blob(state.ranker) == before


def test_ranker_loss_never_touches_retriever(small_ds):
    cfg = replace(CFG, update_retriever=False)
    state = init_state(cfg, small_ds)
    before = _blob(state.retriever)
    for _ in range(3):
        train_step(state, cfg, small_ds, _pairs(small_ds))
    assert _blob(state.retriever) == before


def test_ranker_gradient_independent_of_kl_weight(small_ds):
    state = init_state(CFG, small_ds)
    pairs = _pairs(small_ds)
    batch = stack_contexts([c for c, _ in pairs])
    pos = np.array([k for _, k in pairs])
    samples = draw_samples(state, CFG, small_ds, batch, pos)
    _, _, g0 = step_objectives(state.retriever, state.ranker, batch, pos, samples, replace(CFG, kl_weight=0))
    _, _, g1 = step_objectives(state.retriever, state.ranker, batch, pos, samples, replace(CFG, kl_weight=9))
    a, b = analytic_flat(state.ranker, g0), analytic_flat(state.ranker, g1)
    assert np.array_equal(a, b)


def test_simultaneous_updates_use_pre_update_scores(small_ds):
    # a joint step equals two separate steps taken from the same starting point
    pairs = _pairs(small_ds)
    joint = init_state(CFG, small_ds)
    train_step(joint, CFG, small_ds, pairs)
    only_r = init_state(replace(CFG, update_ranker=False), small_ds)
    train_step(only_r, replace(CFG, update_ranker=False), small_ds, pairs)
    only_k = init_state(replace(CFG, update_retriever=False), small_ds)
    train_step(only_k, replace(CFG, update_retriever=False), small_ds, pairs)
    assert _blob(joint.retriever) == _blob(only_r.retriever)
    assert _blob(joint.ranker) == _blob(only_k.ranker)


def test_kl_zero_frozen_ranker_matches_standalone(small_ds):
    cfg = replace(CFG, epochs=2, kl_weight=0.0, update_ranker=False)
    a = train(cfg, small_ds, evaluate_each_epoch=False)
    # a ranker with other weights leaves the retriever trajectory alone
    b_state_cfg = replace(cfg, hidden=3)
    b = train(b_state_cfg, small_ds, evaluate_each_epoch=False)
    assert _blob(a.retriever) == _blob(b.retriever)


def test_independent_retriever_is_configuration_identity(small_ds):
    cfg = replace(CFG, epochs=2)
    a = train_independent(cfg, small_ds, which="retriever", evaluate_each_epoch=False)
    b = train(replace(cfg, kl_weight=0.0, update_ranker=False, adaptive=False,
                      proposal="uniform"), small_ds, evaluate_each_epoch=False)
    assert _blob(a.retriever) == _blob(b.retriever)
    with pytest.raises(ValueError):
        independent_config(cfg, "neither")


def _combined(retriever, ranker, batch, pos, samples, kl_weight):
    m_scores, _ = retriever.forward(batch, np.concatenate([pos[:, None], samples.items], 1), need_cache=False)
    k_scores, _ = ranker.forward(batch, samples.items, need_cache=False)
    sup = sampled_log_softmax(m_scores[:, 0] - samples.positive_log_q, m_scores[:, 1:] - samples.log_q)
    kl = sampled_kl(k_scores - samples.log_q, m_scores[:, 1:] - samples.log_q)
    return float(np.mean(-sup + kl_weight * kl))


def test_combined_retriever_objective_finite_differences(small_ds):
    rng = np.random.default_rng(0)
    pairs = list(training_pairs(small_ds))
    for trial in range(100):
        ret = random_model("retriever", rng, num_items=small_ds.num_items, scale=0.5)
        rank = random_model("ranker", rng, num_items=small_ds.num_items, scale=0.5)
        idx = rng.choice(len(pairs), size=2, replace=False)
        batch = stack_contexts([pairs[i][0] for i in idx])
        pos = np.array([pairs[i][1] for i in idx])
        items = rng.integers(0, small_ds.num_items, size=(2, 4))
        lq = np.log(rng.uniform(0.05, 1, size=(2, 4)))
        plq = np.log(rng.uniform(0.05, 1, size=2))
        samples = StepSamples(items, lq, plq, items, lq, plq, items, lq)
        kw = float(rng.uniform(0, 3))
        cfg = replace(CFG, kl_weight=kw)
        _, m_grad, _ = step_objectives(ret, rank, batch, pos, samples, cfg)
        num = numeric_grad(ret, lambda mm: _combined(mm, rank, batch, pos, samples, kw))
        assert rel_err(analytic_flat(ret, m_grad), num) < 1e-4


def test_nonfinite_loss_aborts_with_dump(small_ds):
    state = init_state(CFG, small_ds)
    state.retriever.params["item_embeddings"][:] = np.nan
    pairs = _pairs(small_ds)
    with pytest.raises(NumericalError) as info:
        train_step(state, CFG, small_ds, pairs)
    assert info.value.dump["positives"] == [k for _, k in pairs]
    state = init_state(CFG, small_ds)
    state.ranker.params["output_bias"] = np.array(np.inf)
    with pytest.raises(NumericalError) as info:
        train_step(state, CFG, small_ds, pairs)
    assert "step" in info.value.dump and "users" in info.value.dump


@pytest.mark.parametrize("neg", ["gtop", "gtoprand", "ltop", "ltoprand"])
def test_negative_strategies_run(small_ds, neg):
    cfg = replace(CFG, ranker_negative_strategy=neg, global_top=30, local_pool=40)
    state = init_state(cfg, small_ds)
    losses = train_step(state, cfg, small_ds, _pairs(small_ds))
    assert all(np.isfinite(v) for v in losses.values())


@pytest.mark.parametrize("kl", ["rand", "top", "toprand"])
def test_kl_strategies_run(small_ds, kl):
    cfg = replace(CFG, kl_item_strategy=kl)
    state = init_state(cfg, small_ds)
    losses = train_step(state, cfg, small_ds, _pairs(small_ds))
    assert all(np.isfinite(v) for v in losses.values())


def test_train_reports_and_determinism(small_ds):
    cfg = replace(CFG, epochs=2)
    ev = EvalConfig(retrieve_k=20)
    a = train(cfg, small_ds, ev)
    b = train(cfg, small_ds, ev)
    assert len(a.reports) == 6 and [r.epoch for r in a.reports] == [1, 1, 1, 2, 2, 2]
    assert [r.to_json() for r in a.reports] == [r.to_json() for r in b.reports]
    assert _blob(a.ranker) == _blob(b.ranker)
    assert len(a.losses) == 2


def test_training_beats_untrained_models():
    from cascade_rec.dataset import synthesize
    from cascade_rec.evaluation import evaluate
    ds = synthesize(num_users=600, num_items=200, seed=3)
    cfg = TrainConfig(epochs=0, dim=8, pool_size=50, num_samples=10)
    ev = EvalConfig(retrieve_k=50)
    untrained = train(cfg, ds, evaluate_each_epoch=False)
    trained = train(replace(cfg, epochs=4), ds, evaluate_each_epoch=False)
    before = evaluate(ds, untrained.retriever, untrained.ranker, ev)
    after = evaluate(ds, trained.retriever, trained.ranker, ev)
    assert after[0].ndcg > before[0].ndcg + 0.02


def test_pair_arrays_cover_all_pairs(small_ds):
    arr = PairArrays.from_dataset(small_ds)
    assert len(arr.positives) == len(list(training_pairs(small_ds)))
    batch, pos = arr.take(np.array([0, 3]))
    assert len(batch) == 2 and len(pos) == 2


def test_train_batch_counts_steps(small_ds):
    state = init_state(CFG, small_ds)
    arr = PairArrays.from_dataset(small_ds)
    batch, pos = arr.take(np.arange(8))
    train_batch(state, CFG, small_ds, batch, pos)
    assert state.step == 1
