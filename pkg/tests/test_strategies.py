import numpy as np
import pytest

from cascade_rec.dataset import Context
from cascade_rec.models import Retriever
from cascade_rec.strategies import (
    KL_STRATEGIES,
    NEGATIVE_STRATEGIES,
    StrategySpec,
    gtop,
    gtoprand,
    kl_log_correction,
    kl_rand,
    kl_top,
    kl_toprand,
    ltop,
    ltoprand,
    select_batch,
    select_kl_items,
    select_negatives,
)

M = 1000
SCORES = -np.arange(M, dtype=float)  # item i is ranked i + 1


def rng():
    return np.random.default_rng(0)


def test_gtop_draws_from_global_top():
    out = gtop(SCORES, set(), rng())
    assert len(out) == 20 and len(set(out.tolist())) == 20
    assert out.max() < 500


def test_gtop_skips_excluded():
    exclude = set(range(0, 500, 2))
    out = gtop(SCORES, exclude, rng(), StrategySpec("gtop", global_top=10, count=10))
    assert sorted(out.tolist()) == list(range(1, 20, 2))


def test_gtoprand_halves():
    out = gtoprand(SCORES, set(), rng())
    assert len(out) == 20 and out[:10].max() < 500


def test_ltop_is_top_of_local_pool():
    out = ltop(SCORES, set(), rng())
    assert len(out) == 20
    assert np.all(np.diff(out) > 0)  # score order equals index order here


def test_ltoprand_halves():
    out = ltoprand(SCORES, {0, 1}, rng())
    assert len(out) == 20 and not {0, 1} & set(out.tolist())


def test_kl_top_example():
    assert kl_top(SCORES, {5}, rng()).tolist() == [i for i in range(21) if i != 5]


def test_kl_top_tie_break():
    scores = np.zeros(30)
    assert kl_top(scores, set(), rng(), StrategySpec("top", count=3)).tolist() == [0, 1, 2]


def test_kl_toprand_and_rand():
    out = kl_toprand(SCORES, {0}, rng())
    assert out[:10].tolist() == list(range(1, 11)) and len(out) == 20
    r = kl_rand(SCORES, {3}, rng())
    assert len(set(r.tolist())) == 20 and 3 not in r


def test_kl_corrections():
    assert kl_log_correction("rand", 500) == pytest.approx(-np.log(500))
    assert kl_log_correction("top", 500) == 0.0
    assert kl_log_correction("toprand", 500) == 0.0


def test_too_few_candidates():
    with pytest.raises(ValueError):
        kl_rand(np.zeros(10), set(range(5)), rng())


def test_select_batch_rows_and_unknown():
    scores = np.stack([SCORES, SCORES[::-1]])
    out = select_batch("top", scores, [set(), set()], rng())
    assert out.shape == (2, 20)
    assert out[0, 0] == 0 and out[1, 0] == M - 1
    with pytest.raises(ValueError):
        select_batch("bottom", scores, [set(), set()], rng())


def test_wrappers_exclude_interacted_and_positive():
    ret = Retriever(200, 4, seed=0)
    ctx = Context(0, (3, 4))
    neg = select_negatives("gtop", ret, ctx, interacted=[3, 4], positive=9, rng=rng())
    assert not {3, 4, 9} & set(neg.tolist())
    kl = select_kl_items("top", ret, ctx, positive=9, rng=rng())
    assert 9 not in kl


def test_strategy_names():
    assert set(NEGATIVE_STRATEGIES) == {"resample", "gtop", "gtoprand", "ltop", "ltoprand"}
    assert set(KL_STRATEGIES) == {"resample", "rand", "top", "toprand"}
