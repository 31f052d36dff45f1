"""Interaction logs: ingestion, min-count filtering, chronological splits.

Input files are UTF-8, one interaction per line::

    user<TAB>item<TAB>timestamp

Lines starting with ``#`` and blank lines are skipped.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy.special import logsumexp

DEFAULT_MAX_SEQ_LEN = 20
DEFAULT_MIN_INTERACTIONS = 5


class DataError(ValueError):
    """Raised for malformed input files or datasets emptied by filtering."""


@dataclass(frozen=True)
class RawInteraction:
    user_id: str
    item_id: str
    timestamp: int


@dataclass(frozen=True)
class Context:
    """A prediction context: the user and their most recent history items."""

    user: int
    history: tuple[int, ...]

    def __post_init__(self):
        if len(self.history) == 0:
            raise ValueError("context history must be non-empty")


@dataclass
class InteractionDataset:
    num_users: int
    num_items: int
    sequences: list[np.ndarray]
    max_seq_len: int = DEFAULT_MAX_SEQ_LEN
    popularity: np.ndarray = field(default=None)
    user_ids: list[str] = field(default_factory=list)
    item_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.popularity is None:
            pop = np.zeros(self.num_items, dtype=np.int64)
            for seq in self.sequences:
                np.add.at(pop, seq, 1)
            self.popularity = pop

    @property
    def num_interactions(self) -> int:
        return int(sum(len(s) for s in self.sequences))

    def interacted(self, user: int) -> np.ndarray:
        """Items in the user's training sequence (everything but the held-out last item)."""
        return np.unique(self.sequences[user][:-1])


def parse_lines(lines: Iterable[str]) -> list[RawInteraction]:
    records = []
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\r\n")
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(f"line {lineno}: expected 3 tab-separated fields, got {len(parts)}")
        user, item, ts = parts
        try:
            timestamp = int(ts)
        except ValueError:
            raise DataError(f"line {lineno}: timestamp {ts!r} is not an integer") from None
        records.append(RawInteraction(user, item, timestamp))
    return records


def filter_min_interactions(
    records: Sequence[RawInteraction], min_interactions: int
) -> list[RawInteraction]:
    """Drop users and items below ``min_interactions`` until nothing changes."""
    kept = list(records)
    while True:
        users = Counter(r.user_id for r in kept)
        items = Counter(r.item_id for r in kept)
        nxt = [
            r for r in kept
            if users[r.user_id] >= min_interactions and items[r.item_id] >= min_interactions
        ]
        if len(nxt) == len(kept):
            return nxt
        kept = nxt


def build_dataset(
    records: Sequence[RawInteraction],
    min_interactions: int = DEFAULT_MIN_INTERACTIONS,
    max_seq_len: int = DEFAULT_MAX_SEQ_LEN,
) -> InteractionDataset:
    kept = filter_min_interactions(records, min_interactions)
    if not kept:
        raise DataError("no interactions left after filtering")

    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    per_user: dict[int, list[tuple[int, int, int]]] = {}
    for order, r in enumerate(kept):
        u = user_index.setdefault(r.user_id, len(user_index))
        i = item_index.setdefault(r.item_id, len(item_index))
        per_user.setdefault(u, []).append((r.timestamp, order, i))

    sequences = []
    for u in range(len(user_index)):
        # (timestamp, file order) gives a stable chronological sort
        events = sorted(per_user[u])
        sequences.append(np.array([i for _, _, i in events], dtype=np.int64))

    return InteractionDataset(
        num_users=len(user_index),
        num_items=len(item_index),
        sequences=sequences,
        max_seq_len=max_seq_len,
        user_ids=list(user_index),
        item_ids=list(item_index),
    )


def ingest(
    path: str | Path,
    min_interactions: int = DEFAULT_MIN_INTERACTIONS,
    max_seq_len: int = DEFAULT_MAX_SEQ_LEN,
) -> InteractionDataset:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    with path.open(encoding="utf-8") as fh:
        records = parse_lines(fh)
    return build_dataset(records, min_interactions, max_seq_len)


def write_interactions(records: Iterable[RawInteraction], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(f"{r.user_id}\t{r.item_id}\t{r.timestamp}\n")


def _truncate(items: np.ndarray, max_seq_len: int) -> tuple[int, ...]:
    return tuple(int(i) for i in items[-max_seq_len:])


def training_pairs(ds: InteractionDataset) -> Iterator[tuple[Context, int]]:
    """Yield (context, next item) for prefixes of length 1..n-2 of every sequence."""
    for u, seq in enumerate(ds.sequences):
        for k in range(1, len(seq) - 1):
            yield Context(u, _truncate(seq[:k], ds.max_seq_len)), int(seq[k])


def test_cases(ds: InteractionDataset) -> Iterator[tuple[Context, int]]:
    """Yield one (context, last item) case per user."""
    for u, seq in enumerate(ds.sequences):
        if len(seq) < 2:
            continue
        yield Context(u, _truncate(seq[:-1], ds.max_seq_len)), int(seq[-1])


# not a pytest test despite the name
test_cases.__test__ = False


def synthesize_records(
    num_users: int = 2000,
    num_items: int = 500,
    latent_dim: int = 16,
    min_len: int = 8,
    max_len: int = 20,
    sharpness: float = 3.0,
    seed: int = 0,
    curvature: float = 0.0,
    interests: int = 1,
) -> list[RawInteraction]:
    """Latent-factor interaction log.

    With affinity ``a = u.v`` each user draws a sequence without replacement
    from ``softmax(sharpness * a - curvature * a**2 + bias)`` (Plackett-Luce
    order via Gumbel perturbation), so earlier items are the user's strongest
    preferences and the history carries the taste signal. ``curvature > 0``
    makes preference peak at moderate affinity, which no inner-product scorer
    can express. With ``interests > 1`` each user holds that many taste vectors
    and the affinity term is their log-mean-exp, a mixture of tastes.
    """
    if interests < 1:
        raise ValueError("interests must be >= 1")
    rng = np.random.default_rng(seed)
    users = rng.normal(size=(num_users, latent_dim)) / np.sqrt(latent_dim)
    items = rng.normal(size=(num_items, latent_dim))
    # mild popularity skew
    item_bias = rng.normal(scale=0.5, size=num_items)
    lengths = rng.integers(min_len, max_len + 1, size=num_users)
    affinity = users @ items.T
    logits = sharpness * affinity - curvature * affinity ** 2
    if interests > 1:
        extra = rng.normal(size=(interests - 1, num_users, latent_dim)) / np.sqrt(latent_dim)
        per_interest = [logits] + [sharpness * a - curvature * a ** 2 for a in extra @ items.T]
        logits = logsumexp(np.stack(per_interest), axis=0) - np.log(interests)
    logits = logits + item_bias
    records = []
    for u in range(num_users):
        perturbed = logits[u] + rng.gumbel(size=num_items)
        order = np.argsort(-perturbed, kind="stable")[: lengths[u]]
        for t, i in enumerate(order):
            records.append(RawInteraction(f"u{u}", f"i{int(i)}", t))
    return records


def synthesize(
    num_users: int = 2000,
    num_items: int = 500,
    latent_dim: int = 16,
    min_len: int = 8,
    max_len: int = 20,
    sharpness: float = 3.0,
    seed: int = 0,
    min_interactions: int = DEFAULT_MIN_INTERACTIONS,
    max_seq_len: int = DEFAULT_MAX_SEQ_LEN,
    curvature: float = 0.0,
    interests: int = 1,
) -> InteractionDataset:
    records = synthesize_records(num_users, num_items, latent_dim, min_len, max_len, sharpness, seed,
                                 curvature, interests)
    return build_dataset(records, min_interactions, max_seq_len)
