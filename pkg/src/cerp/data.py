"""Implicit-feedback interaction ingestion, splitting, and triplet sampling.

Input files are plain text, one interaction per line: a user token and an
item token separated by whitespace ('#'-prefixed comment lines and extra
columns such as ratings or timestamps are ignored). Tokens are re-indexed
contiguously in first-appearance order and duplicate pairs dropped.

The split is a global Fisher-Yates shuffle of the deduplicated pairs driven
by a PCG64 generator (swap index j = integers(0, i + 1) for i = n-1 .. 1),
so it is reproducible from the seed alone: the first 80% of the shuffled
order forms the train pool, the first 10% of that pool is validation, and
the remainder of the shuffle is the test set.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "BprTriplet",
    "InteractionDataset",
    "InteractionParseError",
    "DegenerateUserError",
    "load_interactions",
    "split",
    "fisher_yates_order",
    "sample_negatives",
    "sample_triplets",
    "epoch_triplets",
    "save_split",
    "load_split",
]

logger = logging.getLogger(__name__)


class InteractionParseError(ValueError):
    """Malformed interaction file."""


class DegenerateUserError(ValueError):
    """A user's positives cover the whole catalogue; negatives cannot exist."""


@dataclass(frozen=True)
class BprTriplet:
    user: int
    pos_item: int
    neg_item: int


class _UserIndex:
    """Per-user sorted item sets over a pair array, CSR-style."""

    def __init__(self, pairs: np.ndarray, num_users: int, num_items: int):
        self.num_users = num_users
        self.num_items = num_items
        if pairs.size:
            order = np.lexsort((pairs[:, 1], pairs[:, 0]))
            sorted_pairs = pairs[order]
            self.items = np.ascontiguousarray(sorted_pairs[:, 1])
            counts = np.bincount(sorted_pairs[:, 0], minlength=num_users)
        else:
            self.items = np.empty(0, dtype=np.int64)
            counts = np.zeros(num_users, dtype=np.int64)
        self.indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        # global sort keys for vectorized membership tests
        self.keys = (sorted_pairs[:, 0] * num_items + sorted_pairs[:, 1]) if pairs.size else self.items

    def items_of(self, user: int) -> np.ndarray:
        return self.items[self.indptr[user]: self.indptr[user + 1]]

    def count(self, user: int) -> int:
        return int(self.indptr[user + 1] - self.indptr[user])

    def counts(self) -> np.ndarray:
        return np.diff(self.indptr)

    def contains(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        """Vectorized membership of (user, item) pairs."""
        probe = users.astype(np.int64) * self.num_items + items
        pos = np.searchsorted(self.keys, probe)
        pos = np.minimum(pos, max(len(self.keys) - 1, 0))
        return (self.keys[pos] == probe) if len(self.keys) else np.zeros(len(probe), dtype=bool)


@dataclass
class InteractionDataset:
    """User-item interactions, optionally partitioned into train/validation/test."""

    num_users: int
    num_items: int
    pairs: np.ndarray  # all deduplicated pairs (unsplit view)
    user_tokens: list[str]
    item_tokens: list[str]
    train: np.ndarray | None = None
    validation: np.ndarray | None = None
    test: np.ndarray | None = None
    split_seed: int | None = None
    _indexes: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for arr in (self.pairs, self.train, self.validation, self.test):
            if arr is not None:
                arr.flags.writeable = False

    @property
    def is_split(self) -> bool:
        return self.train is not None

    @property
    def num_entities(self) -> int:
        return self.num_users + self.num_items

    def _index(self, name: str) -> _UserIndex:
        if name not in self._indexes:
            arr = getattr(self, name)
            if arr is None:
                raise ValueError(f"dataset has no {name} partition")
            self._indexes[name] = _UserIndex(arr, self.num_users, self.num_items)
        return self._indexes[name]

    def train_items_of(self, user: int) -> np.ndarray:
        return self._index("train").items_of(user)

    def trainable_users(self) -> np.ndarray:
        """Users with at least one train positive (the only ones sampled/evaluated)."""
        return np.flatnonzero(self._index("train").counts() > 0)


def load_interactions(path) -> InteractionDataset:
    """Parse an interaction file into an unsplit, re-indexed dataset."""
    path = Path(path)
    user_ids: dict[str, int] = {}
    item_ids: dict[str, int] = {}
    seen: set[tuple[int, int]] = set()
    pairs: list[tuple[int, int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            tokens = stripped.split()
            if len(tokens) < 2:
                raise InteractionParseError(
                    f"{path}:{line_no}: expected 'user item', got {stripped!r}"
                )
            u = user_ids.setdefault(tokens[0], len(user_ids))
            i = item_ids.setdefault(tokens[1], len(item_ids))
            if (u, i) not in seen:
                seen.add((u, i))
                pairs.append((u, i))
    if not pairs:
        raise InteractionParseError(f"{path}: no interactions found")
    return InteractionDataset(
        num_users=len(user_ids),
        num_items=len(item_ids),
        pairs=np.array(pairs, dtype=np.int64),
        user_tokens=list(user_ids),
        item_tokens=list(item_ids),
    )


def fisher_yates_order(n: int, rng: np.random.Generator) -> np.ndarray:
    """Shuffled index order via explicit Fisher-Yates draws (documented PRNG use)."""
    order = np.arange(n, dtype=np.int64)
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        order[i], order[j] = order[j], order[i]
    return order


def split(dataset: InteractionDataset, seed: int, train_frac: float = 0.8, val_frac_of_train: float = 0.1) -> InteractionDataset:
    """Deterministic global shuffled split into train/validation/test."""
    if dataset.is_split:
        raise ValueError("dataset is already split")
    n = len(dataset.pairs)
    rng = np.random.Generator(np.random.PCG64(seed))
    shuffled = dataset.pairs[fisher_yates_order(n, rng)]
    n_pool = int(train_frac * n)
    n_val = int(val_frac_of_train * n_pool)
    out = InteractionDataset(
        num_users=dataset.num_users,
        num_items=dataset.num_items,
        pairs=dataset.pairs,
        user_tokens=dataset.user_tokens,
        item_tokens=dataset.item_tokens,
        train=shuffled[n_val:n_pool].copy(),
        validation=shuffled[:n_val].copy(),
        test=shuffled[n_pool:].copy(),
        split_seed=seed,
    )
    n_empty = dataset.num_users - len(out.trainable_users())
    if n_empty:
        logger.info("split seed=%d left %d user(s) without train positives; "
                    "they are excluded from sampling and evaluation", seed, n_empty)
    return out


def sample_negatives(dataset: InteractionDataset, user: int, k: int, rng: np.random.Generator) -> list[int]:
    """k uniform draws from the items outside the user's train-positive set."""
    positives = set(dataset.train_items_of(user).tolist())
    if len(positives) >= dataset.num_items:
        raise DegenerateUserError(f"user {user} has interacted with every item")
    out = []
    while len(out) < k:
        cand = int(rng.integers(0, dataset.num_items))
        if cand not in positives:
            out.append(cand)
    return out


def sample_triplets(dataset: InteractionDataset, user: int, pos_item: int, negatives_per_positive: int = 5, rng: np.random.Generator | None = None) -> list[BprTriplet]:
    """BPR triplets for one (user, positive) pair with rejection-sampled negatives."""
    if rng is None:
        raise ValueError("an explicit rng is required for reproducibility")
    if dataset.train_items_of(user).size == 0:
        raise ValueError(f"user {user} has no train positives")
    negs = sample_negatives(dataset, user, negatives_per_positive, rng)
    return [BprTriplet(user, pos_item, n) for n in negs]


def epoch_triplets(dataset: InteractionDataset, rng: np.random.Generator, negatives_per_positive: int = 5):
    """Vectorized triplet arrays for one epoch: every train pair in a fresh
    shuffled order, each expanded with rejection-sampled negatives.

    Returns (users, pos_items, neg_items) int64 arrays of equal length.
    """
    train = dataset.train
    index = dataset._index("train")
    if index.counts().max(initial=0) >= dataset.num_items:
        raise DegenerateUserError("a user has interacted with every item")
    order = rng.permutation(len(train))
    users = np.repeat(train[order, 0], negatives_per_positive)
    pos = np.repeat(train[order, 1], negatives_per_positive)
    neg = rng.integers(0, dataset.num_items, size=users.size, dtype=np.int64)
    bad = index.contains(users, neg)
    while bad.any():
        neg[bad] = rng.integers(0, dataset.num_items, size=int(bad.sum()), dtype=np.int64)
        bad[bad] = index.contains(users[bad], neg[bad])
    return users, pos, neg


def save_split(dataset: InteractionDataset, out_dir) -> dict:
    """Write the three partition files plus the id-mapping file; returns paths."""
    import json

    if not dataset.is_split:
        raise ValueError("dataset must be split before saving")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name in ("train", "validation", "test"):
        p = out_dir / f"{name}.txt"
        arr = getattr(dataset, name)
        with open(p, "w", encoding="utf-8") as fh:
            for u, i in arr:
                fh.write(f"{u} {i}\n")
        paths[name] = p
    id_map = {
        "num_users": dataset.num_users,
        "num_items": dataset.num_items,
        "user_tokens": dataset.user_tokens,
        "item_tokens": dataset.item_tokens,
        "split_seed": dataset.split_seed,
    }
    paths["id_map"] = out_dir / "id_map.json"
    with open(paths["id_map"], "w", encoding="utf-8") as fh:
        json.dump(id_map, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths


def load_split(split_dir) -> InteractionDataset:
    """Reconstruct a split dataset written by :func:`save_split`."""
    import json

    split_dir = Path(split_dir)
    with open(split_dir / "id_map.json", "r", encoding="utf-8") as fh:
        id_map = json.load(fh)
    num_users, num_items = id_map["num_users"], id_map["num_items"]

    def read(name):
        rows = []
        with open(split_dir / f"{name}.txt", "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                tokens = line.split()
                if len(tokens) != 2:
                    raise InteractionParseError(f"{name}.txt:{line_no}: bad split line")
                rows.append((int(tokens[0]), int(tokens[1])))
        arr = np.array(rows, dtype=np.int64).reshape(-1, 2)
        if arr.size and (arr[:, 0].max() >= num_users or arr[:, 1].max() >= num_items or arr.min() < 0):
            raise InteractionParseError(f"{name}.txt: id out of range")
        return arr

    train, validation, test = read("train"), read("validation"), read("test")
    all_pairs = np.concatenate([train, validation, test])
    return InteractionDataset(
        num_users=num_users,
        num_items=num_items,
        pairs=all_pairs,
        user_tokens=id_map["user_tokens"],
        item_tokens=id_map["item_tokens"],
        train=train,
        validation=validation,
        test=test,
        split_seed=id_map.get("split_seed"),
    )
