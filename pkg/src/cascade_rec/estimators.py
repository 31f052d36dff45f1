"""Sampled objectives: log-softmax, KL distillation, entropy form, BCE.

All functions take *corrected* logits where relevant, i.e. a raw model score
minus the log of the proposal probability the item was drawn with. Every
function accepts a trailing sample axis and broadcasts over leading axes.

Sign conventions follow the objectives themselves: the sampled log-softmax is
maximized (always <= 0) and the KL terms are minimized (always >= 0).
"""

from __future__ import annotations

import numpy as np
from scipy.special import log_softmax, logsumexp, softmax


KL_CLAMP = -1e-12


def corrected_logits(raw, log_proposal):
    corrected = np.asarray(raw, dtype=float) - np.asarray(log_proposal, dtype=float)
    if not np.all(np.isfinite(corrected)):
        raise FloatingPointError("non-finite corrected logit")
    return corrected


def _with_positive(positive_corrected, sample_corrected):
    pos = np.asarray(positive_corrected, dtype=float)
    samples = np.asarray(sample_corrected, dtype=float)
    return np.concatenate([pos[..., None], samples.reshape(pos.shape + (-1,))], axis=-1)


def sampled_log_softmax(positive_corrected, sample_corrected):
    """log-softmax of the positive over ``{positive} + samples``.

    The positive always occupies its own slot, even if it was also drawn.
    """
    z = _with_positive(positive_corrected, sample_corrected)
    return z[..., 0] - logsumexp(z, axis=-1)


def sampled_log_softmax_weights(positive_corrected, sample_corrected):
    """Softmax weights over ``{positive} + samples``; slot 0 is the positive."""
    return softmax(_with_positive(positive_corrected, sample_corrected), axis=-1)


def sampled_log_softmax_coef(positive_corrected, sample_corrected):
    """d(-sampled_log_softmax)/d(raw scores) for the slots ``{positive} + samples``."""
    coef = sampled_log_softmax_weights(positive_corrected, sample_corrected)
    coef[..., 0] -= 1.0
    return coef


def sampled_log_softmax_grad(model, batch, positives, items, log_q, positive_log_q):
    """Gradient of the batch-summed sampled log-softmax w.r.t. ``model`` params.

    ``log_q``/``positive_log_q`` are treated as constants. Returns
    ``(objective values, Gradient)``; the gradient is of the objective itself
    (ascent direction), not of its negation.
    """
    positives = np.asarray(positives).reshape(-1, 1)
    grid = np.concatenate([positives, np.asarray(items)], axis=1)
    scores, cache = model.forward(batch, grid)
    z_pos = scores[:, 0] - np.asarray(positive_log_q)
    z_s = scores[:, 1:] - np.asarray(log_q)
    value = sampled_log_softmax(z_pos, z_s)
    grad = model.backward(cache, -sampled_log_softmax_coef(z_pos, z_s))
    return value, grad


def sampled_kl(ranker_corrected, retriever_corrected):
    """KL(P_S || Q_S) with P_S = softmax(ranker), Q_S = softmax(retriever) over the sample."""
    r = np.asarray(ranker_corrected, dtype=float)
    m = np.asarray(retriever_corrected, dtype=float)
    if r.shape != m.shape:
        raise ValueError(f"length mismatch: {r.shape} vs {m.shape}")
    log_p = log_softmax(r, axis=-1)
    log_q = log_softmax(m, axis=-1)
    kl = np.sum(np.exp(log_p) * (log_p - log_q), axis=-1)
    if np.any(kl < KL_CLAMP):
        raise FloatingPointError(f"sampled KL below rounding tolerance: {kl}")
    return np.maximum(kl, 0.0)


def sampled_kl_retriever_coef(ranker_corrected, retriever_corrected):
    """d KL(P_S || Q_S) / d(retriever raw scores) = Q_S - P_S; ranker is a constant."""
    return softmax(np.asarray(retriever_corrected, float), axis=-1) - softmax(
        np.asarray(ranker_corrected, float), axis=-1)


def sampled_kl_grad_retriever(retriever, batch, items, log_q, ranker_scores):
    """KL value and its gradient w.r.t. retriever params only.

    ``ranker_scores`` are the teacher's raw scores on ``items``; they enter as
    constants, so nothing here can reach ranker parameters.
    """
    scores, cache = retriever.forward(batch, np.asarray(items))
    m_corr = scores - log_q
    r_corr = np.asarray(ranker_scores, dtype=float) - log_q
    value = sampled_kl(r_corr, m_corr)
    return value, retriever.backward(cache, sampled_kl_retriever_coef(r_corr, m_corr))


def entropy_form_kl(delta):
    """``log L - H(softmax(delta))``, the KL estimate when samples come from the retriever softmax."""
    delta = np.asarray(delta, dtype=float)
    L = delta.shape[-1]
    log_p = log_softmax(delta, axis=-1)
    p = np.exp(log_p)
    entropy = -np.sum(np.where(p > 0, p * log_p, 0.0), axis=-1)
    return np.clip(np.log(L) - entropy, 0.0, np.log(L))


def bce_loss(positive_score, negative_scores):
    """-log sigmoid(pos) - sum log(1 - sigmoid(neg)), via softplus."""
    pos = np.asarray(positive_score, dtype=float)
    neg = np.asarray(negative_scores, dtype=float)
    return np.logaddexp(0.0, -pos) + np.sum(np.logaddexp(0.0, neg), axis=-1)


def catalog_sampled_log_softmax(scores, positive: int, log_proposal):
    """Sampled log-softmax with the whole catalog as the sample set.

    Each item appears once in the sample plus the positive's own slot, so the
    positive is counted twice: with equal scores over ``m`` items and a uniform
    proposal this gives ``-log(m + 1)`` where the exact value is ``-log m``.
    """
    z = corrected_logits(scores, log_proposal)
    return float(sampled_log_softmax(z[positive], z))
