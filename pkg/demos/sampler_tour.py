"""A short walk through the two-step sampler.

Draw a pool from a static proposal, reweight it by the retriever, resample.
As the pool grows the item frequencies approach the retriever softmax.
"""

import numpy as np

from cascade_rec.dataset import Context
from cascade_rec.models import FixedScorer, stack_contexts
from cascade_rec.oracle import empirical_marginal, exact_softmax
from cascade_rec.sampler import StaticProposal, two_step_sample, two_step_sample_batch

rng = np.random.default_rng(0)
scores = rng.normal(size=20)  # a frozen retriever over a 20-item catalog
target = exact_softmax(scores)
print("target softmax, top 5 items:", np.argsort(-target)[:5], np.round(np.sort(target)[::-1][:5], 3))

# one draw, with the positive appended to the pool
pool, samples = two_step_sample(StaticProposal.uniform(20), FixedScorer(scores), Context(0, (0,)),
                                positive=3, n=50, L=8, rng=rng)
print("pool size incl. positive:", len(pool.items))
print("samples:", samples.items, "log q:", np.round(samples.log_q, 2))
print("positive log q:", round(samples.positive_log_q, 3))

# frequency check across pool sizes
ctx = stack_contexts([Context(0, (0,))] * 500)
for n in (5, 50, 500, 5000):
    out = two_step_sample_batch(StaticProposal.uniform(20), FixedScorer(scores), ctx, None, n, 100, 1.0, rng)
    _, tv = empirical_marginal(out.items, 20, target)
    print(f"n={n:5d}  TV to softmax = {tv:.4f}")
