"""Full-ranking top-N evaluation: NDCG@N and Recall@N over the whole catalogue.

For every user with at least one positive in the requested partition (and at
least one train positive), all items are scored, already-seen positives
(train plus the other holdout partition) are masked to -inf, and the top N
taken with ties broken by ascending item id. Gains are binary with the
1/log2(rank+1) discount; the ideal DCG uses min(#positives, N) hits.
Per-user metric sums are accumulated in plain Python floats so results are
independent of vectorization strategy.
"""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from cerp.scorers import DotScorer

__all__ = ["RankingResult", "EmbeddingRanker", "PopularityRanker", "evaluate", "popularity_baseline"]


@dataclass(frozen=True)
class RankingResult:
    users: np.ndarray
    top_items: np.ndarray
    ndcg: np.ndarray
    recall: np.ndarray
    mean_ndcg: float
    mean_recall: float
    cutoff: int


class EmbeddingRanker:
    """Scores all items for blocks of users from frozen embedding tables."""

    def __init__(self, user_embs: np.ndarray, item_embs: np.ndarray, scorer):
        self.user_embs = np.asarray(user_embs, dtype=np.float64)
        self.item_embs = np.asarray(item_embs, dtype=np.float64)
        self.scorer = scorer
        self.num_items = self.item_embs.shape[0]

    def score_block(self, users: np.ndarray) -> np.ndarray:
        eu = self.user_embs[users]
        if isinstance(self.scorer, DotScorer):
            return eu @ self.item_embs.T
        out = np.empty((len(users), self.num_items))
        for r, e in enumerate(eu):
            tiled = np.broadcast_to(e, (self.num_items, e.size))
            out[r], _ = self.scorer.forward(tiled, self.item_embs)
        return out


class PopularityRanker:
    """Ranks every user by global train interaction counts."""

    def __init__(self, dataset):
        counts = np.bincount(dataset.train[:, 1], minlength=dataset.num_items)
        self.scores = counts.astype(np.float64)
        self.num_items = dataset.num_items

    def score_block(self, users: np.ndarray) -> np.ndarray:
        return np.tile(self.scores, (len(users), 1))


def _user_metrics(scores: np.ndarray, positives: np.ndarray, mask_items: np.ndarray, N: int):
    scores = scores.copy()
    if mask_items.size:
        scores[mask_items] = -np.inf
    order = np.argsort(-scores, kind="stable")[:N]  # ties -> ascending item id
    pos_set = set(positives.tolist())
    dcg = 0.0
    hits = 0
    for rank, item in enumerate(order.tolist(), start=1):
        if item in pos_set:
            dcg += 1.0 / math.log2(rank + 1)
            hits += 1
    ideal = 0.0
    for rank in range(1, min(len(pos_set), N) + 1):
        ideal += 1.0 / math.log2(rank + 1)
    ndcg = dcg / ideal if ideal > 0 else 0.0
    recall = hits / len(pos_set)
    return order, ndcg, recall


def evaluate(ranker, dataset, partition: str = "validation", N: int = 10, num_workers: int | None = None) -> RankingResult:
    """Rank the full catalogue for every evaluable user of ``partition``."""
    if partition not in ("validation", "test"):
        raise ValueError("partition must be 'validation' or 'test'")
    part = getattr(dataset, partition)
    if part is None or len(part) == 0:
        raise ValueError(f"{partition} partition is empty")

    held_out = "test" if partition == "validation" else "validation"
    part_index = dataset._index(partition)
    train_index = dataset._index("train")
    held_index = dataset._index(held_out)

    users = np.flatnonzero((part_index.counts() > 0) & (train_index.counts() > 0))
    if users.size == 0:
        raise ValueError("no users with both partition and train positives")

    if num_workers is None:
        num_workers = int(os.environ.get("CERP_NUM_WORKERS", "1"))
    num_workers = max(1, num_workers)

    top = np.empty((users.size, N), dtype=np.int64)
    ndcg = np.empty(users.size)
    recall = np.empty(users.size)

    def run_chunk(start, stop):
        block = users[start:stop]
        scores = ranker.score_block(block)
        for off, u in enumerate(block.tolist()):
            mask_items = np.concatenate([train_index.items_of(u), held_index.items_of(u)])
            order, nd, rc = _user_metrics(scores[off], part_index.items_of(u), mask_items, N)
            row = start + off
            got = order
            if got.size < N:  # tiny catalogues: pad with -1
                got = np.concatenate([got, -np.ones(N - got.size, dtype=np.int64)])
            top[row] = got
            ndcg[row] = nd
            recall[row] = rc

    chunk = 256
    spans = [(s, min(s + chunk, users.size)) for s in range(0, users.size, chunk)]
    if num_workers == 1 or len(spans) == 1:
        for s, e in spans:
            run_chunk(s, e)
    else:
        with ThreadPoolExecutor(max_workers=num_workers) as pool:
            list(pool.map(lambda se: run_chunk(*se), spans))

    return RankingResult(
        users=users,
        top_items=top,
        ndcg=ndcg,
        recall=recall,
        mean_ndcg=float(np.mean(ndcg)),
        mean_recall=float(np.mean(recall)),
        cutoff=N,
    )


def popularity_baseline(dataset, N: int = 10, partition: str = "test", num_workers: int | None = None) -> RankingResult:
    """Popularity-ranked floor under the identical masking protocol."""
    return evaluate(PopularityRanker(dataset), dataset, partition=partition, N=N, num_workers=num_workers)
