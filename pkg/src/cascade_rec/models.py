"""Scorers with analytic gradients.

Both models read a context as the mean of its history item embeddings.

* ``Retriever``: inner product between the item embedding and the context
  embedding (a two-tower model with a tied item table).
* ``Ranker``: a one-hidden-layer network over ``[ctx; item; ctx * item]`` with a
  logistic (default) or tanh hidden activation. It stands in for a heavier joint ranker and
  cannot be factorized into separate towers.

Each model owns its item table; the two never share parameters.

Work is batched: ``forward(batch, items)`` scores a ``(B, S)`` grid of items
against ``B`` contexts, and ``backward(cache, coef)`` returns the gradient of
``sum(coef * scores)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

from .dataset import Context


@dataclass
class ContextBatch:
    users: np.ndarray  # (B,)
    history: np.ndarray  # (B, H) padded with 0
    mask: np.ndarray  # (B, H) 1.0 on real entries
    lengths: np.ndarray  # (B,)

    def __len__(self):
        return len(self.users)


def stack_contexts(contexts: Sequence[Context]) -> ContextBatch:
    width = max(len(c.history) for c in contexts)
    B = len(contexts)
    history = np.zeros((B, width), dtype=np.int64)
    mask = np.zeros((B, width))
    for b, c in enumerate(contexts):
        history[b, : len(c.history)] = c.history
        mask[b, : len(c.history)] = 1.0
    lengths = np.array([len(c.history) for c in contexts], dtype=np.int64)
    users = np.array([c.user for c in contexts], dtype=np.int64)
    return ContextBatch(users, history, mask, lengths)


class Gradient:
    """Gradient holder: dense arrays plus row-sparse updates for embedding tables."""

    def __init__(self):
        self.dense: dict[str, np.ndarray] = {}
        self.rows: dict[str, list[tuple[np.ndarray, np.ndarray]]] = {}

    def add_dense(self, name, value):
        if name in self.dense:
            self.dense[name] = self.dense[name] + value
        else:
            self.dense[name] = np.array(value, dtype=float)

    def add_rows(self, name, index, values):
        index = np.asarray(index).reshape(-1)
        values = np.asarray(values).reshape(len(index), -1)
        self.rows.setdefault(name, []).append((index, values))

    def touched_rows(self, name) -> np.ndarray:
        parts = self.rows.get(name, [])
        if not parts:
            return np.zeros(0, dtype=np.int64)
        return np.unique(np.concatenate([idx for idx, _ in parts]))

    def to_dense(self, params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        out = {name: np.zeros_like(p) for name, p in params.items()}
        for name, value in self.dense.items():
            out[name] += value
        for name, parts in self.rows.items():
            for idx, vals in parts:
                np.add.at(out[name], idx, vals)
        return out

    def is_finite(self) -> bool:
        if not all(np.all(np.isfinite(v)) for v in self.dense.values()):
            return False
        return all(np.all(np.isfinite(v)) for parts in self.rows.values() for _, v in parts)


def sgd_update(params: dict[str, np.ndarray], grad: Gradient, lr: float, weight_decay: float,
               row_lr_scale: float = 1.0):
    """In-place SGD step with L2 decay.

    Decay is folded into the gradient, so dense tensors decay every step while
    embedding tables decay only on the rows the gradient touches. Row-sparse
    tables step with ``lr * row_lr_scale``: each row sees only a handful of
    the batch's terms, dense weights see all of them.
    """
    if lr == 0.0:
        return
    decay = {}
    for name in grad.dense:
        decay[name] = weight_decay * params[name]
    for name in grad.rows:
        rows = grad.touched_rows(name)
        decay[name] = (rows, weight_decay * params[name][rows])
    for name, value in grad.dense.items():
        params[name] -= lr * (value + decay[name])
    row_lr = lr * row_lr_scale
    for name, parts in grad.rows.items():
        table = params[name]
        for idx, vals in parts:
            np.add.at(table, idx, -row_lr * vals)
        rows, dec = decay[name]
        table[rows] -= row_lr * dec


def _init_uniform(rng, shape, dim):
    bound = 1.0 / np.sqrt(dim)
    return rng.uniform(-bound, bound, size=shape)


class _Scorer:
    kind = ""

    def __init__(self, num_items: int, dim: int = 16, seed: int = 0):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.num_items = num_items
        self.dim = dim
        self.seed = seed
        self.params: dict[str, np.ndarray] = {}

    def context_embedding(self, batch: ContextBatch) -> np.ndarray:
        table = self.params["item_embeddings"]
        summed = np.einsum("bh,bhd->bd", batch.mask, table[batch.history])
        return summed / batch.lengths[:, None]

    def _scatter_context(self, grad: Gradient, batch: ContextBatch, d_ctx: np.ndarray):
        # mean pooling: each real history slot receives d_ctx / length
        per_slot = (batch.mask / batch.lengths[:, None])[:, :, None] * d_ctx[:, None, :]
        real = batch.mask.astype(bool)
        grad.add_rows("item_embeddings", batch.history[real], per_slot[real])

    # single-pair conveniences -------------------------------------------------

    def score(self, item: int, ctx: Context) -> float:
        scores, _ = self.forward(stack_contexts([ctx]), np.array([[item]]))
        return float(scores[0, 0])

    def score_with_grad(self, item: int, ctx: Context) -> tuple[float, Gradient]:
        scores, cache = self.forward(stack_contexts([ctx]), np.array([[item]]))
        return float(scores[0, 0]), self.backward(cache, np.ones((1, 1)))

    def score_all(self, ctx: Context) -> np.ndarray:
        return self.score_all_batch(stack_contexts([ctx]))[0]

    def score_all_batch(self, batch: ContextBatch, chunk: int = 64) -> np.ndarray:
        out = np.empty((len(batch), self.num_items))
        items = np.arange(self.num_items)
        for start in range(0, len(batch), chunk):
            sub = ContextBatch(*(a[start:start + chunk] for a in
                                 (batch.users, batch.history, batch.mask, batch.lengths)))
            grid = np.broadcast_to(items, (len(sub), self.num_items))
            out[start:start + chunk], _ = self.forward(sub, grid, need_cache=False)
        return out

    def copy(self):
        other = self.__class__.__new__(self.__class__)
        other.__dict__.update(self.__dict__)
        other.params = {k: v.copy() for k, v in self.params.items()}
        return other


class Retriever(_Scorer):
    kind = "retriever"

    def __init__(self, num_items: int, dim: int = 16, seed: int = 0):
        super().__init__(num_items, dim, seed)
        rng = np.random.default_rng(seed)
        self.params["item_embeddings"] = _init_uniform(rng, (num_items, dim), dim)

    def forward(self, batch: ContextBatch, items: np.ndarray, need_cache: bool = True):
        ctx = self.context_embedding(batch)
        item_vecs = self.params["item_embeddings"][items]
        scores = (item_vecs * ctx[:, None, :]).sum(axis=-1)
        cache = (batch, items, ctx, item_vecs) if need_cache else None
        return scores, cache

    def backward(self, cache, coef: np.ndarray) -> Gradient:
        batch, items, ctx, item_vecs = cache
        grad = Gradient()
        grad.add_rows("item_embeddings", items, coef[:, :, None] * ctx[:, None, :])
        d_ctx = np.einsum("bs,bsd->bd", coef, item_vecs)
        self._scatter_context(grad, batch, d_ctx)
        return grad


# activation and its derivative written in terms of the activation output
ACTIVATIONS = {
    "logistic": (expit, lambda h: h * (1.0 - h)),
    "tanh": (np.tanh, lambda h: 1.0 - h * h),
}


class Ranker(_Scorer):
    kind = "ranker"

    def __init__(self, num_items: int, dim: int = 16, seed: int = 0, hidden: int | None = None,
                 activation: str = "logistic"):
        super().__init__(num_items, dim, seed)
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.hidden = 2 * dim if hidden is None else hidden
        self.activation = activation
        rng = np.random.default_rng(seed)
        self.params["item_embeddings"] = _init_uniform(rng, (num_items, dim), dim)
        self.params["hidden_weights"] = _init_uniform(rng, (self.hidden, 3 * dim), 3 * dim)
        self.params["hidden_bias"] = np.zeros(self.hidden)
        self.params["output_weights"] = _init_uniform(rng, (self.hidden,), self.hidden)
        self.params["output_bias"] = np.zeros(())

    def forward(self, batch: ContextBatch, items: np.ndarray, need_cache: bool = True):
        p = self.params
        ctx = self.context_embedding(batch)
        item_vecs = p["item_embeddings"][items]
        ctx_b = np.broadcast_to(ctx[:, None, :], item_vecs.shape)
        x = np.concatenate([ctx_b, item_vecs, ctx_b * item_vecs], axis=-1)
        # einsum keeps per-element summation order independent of batch shape,
        # so grid scoring reproduces single-item scoring bit for bit
        act, _ = ACTIVATIONS[self.activation]
        h = act(np.einsum("bsk,hk->bsh", x, p["hidden_weights"]) + p["hidden_bias"])
        scores = np.einsum("bsh,h->bs", h, p["output_weights"]) + p["output_bias"]
        cache = (batch, items, ctx_b, item_vecs, x, h) if need_cache else None
        return scores, cache

    def backward(self, cache, coef: np.ndarray) -> Gradient:
        batch, items, ctx_b, item_vecs, x, h = cache
        p = self.params
        d = self.dim
        grad = Gradient()
        grad.add_dense("output_bias", coef.sum())
        grad.add_dense("output_weights", np.einsum("bs,bsh->h", coef, h))
        _, slope = ACTIVATIONS[self.activation]
        dz = coef[:, :, None] * p["output_weights"] * slope(h)
        grad.add_dense("hidden_bias", dz.sum(axis=(0, 1)))
        grad.add_dense("hidden_weights", np.einsum("bsh,bsk->hk", dz, x))
        dx = dz @ p["hidden_weights"]
        d_ctx_part, d_item_part, d_prod = dx[..., :d], dx[..., d:2 * d], dx[..., 2 * d:]
        d_item = d_item_part + d_prod * ctx_b
        d_ctx = (d_ctx_part + d_prod * item_vecs).sum(axis=1)
        grad.add_rows("item_embeddings", items, d_item)
        self._scatter_context(grad, batch, d_ctx)
        return grad


class FixedScorer:
    """Context-free scores from a fixed per-item table; used by samplers in tests."""

    kind = "fixed"

    def __init__(self, scores):
        self.table = np.asarray(scores, dtype=float)
        self.num_items = len(self.table)

    def forward(self, batch, items, need_cache=False):
        return self.table[np.asarray(items)], None

    def score_all_batch(self, batch, chunk=0):
        return np.broadcast_to(self.table, (len(batch), self.num_items)).copy()


def make_model(kind: str, num_items: int, dim: int = 16, seed: int = 0, hidden: int | None = None,
               activation: str = "logistic"):
    if kind == "retriever":
        return Retriever(num_items, dim, seed)
    if kind == "ranker":
        return Ranker(num_items, dim, seed, hidden, activation)
    raise ValueError(f"unknown model kind {kind!r}")


def score_with_grad(model: _Scorer, item: int, ctx: Context) -> tuple[float, Gradient]:
    return model.score_with_grad(item, ctx)


def score_all(model: _Scorer, ctx: Context) -> np.ndarray:
    return model.score_all(ctx)
