"""Tests for the full-ranking evaluation harness, incl. the brute-force oracle."""

import math

import numpy as np
import pytest

from cerp.data import InteractionDataset
from cerp.evaluation import EmbeddingRanker, evaluate, popularity_baseline
from cerp.scorers import DotScorer


class FixedScoreRanker:
    def __init__(self, table):
        self.table = np.asarray(table, dtype=np.float64)
        self.num_items = self.table.shape[1]

    def score_block(self, users):
        return self.table[users].copy()


def make_dataset(num_users, num_items, train, validation, test):
    def arr(rows):
        return np.array(rows, dtype=np.int64).reshape(-1, 2)

    train, validation, test = arr(train), arr(validation), arr(test)
    return InteractionDataset(
        num_users=num_users,
        num_items=num_items,
        pairs=np.concatenate([train, validation, test]),
        user_tokens=[f"u{k}" for k in range(num_users)],
        item_tokens=[f"i{k}" for k in range(num_items)],
        train=train,
        validation=validation,
        test=test,
    )


def brute_force_metrics(scores, positives, masked, N):
    """Independent naive implementation used as the oracle."""
    ranked = sorted(
        (item for item in range(len(scores)) if item not in masked),
        key=lambda item: (-scores[item], item),
    )[:N]
    pos = set(positives)
    dcg = 0.0
    hits = 0
    for rank, item in enumerate(ranked, start=1):
        if item in pos:
            dcg += 1.0 / math.log2(rank + 1)
            hits += 1
    ideal = sum(1.0 / math.log2(r + 1) for r in range(1, min(len(pos), N) + 1))
    return ranked, (dcg / ideal if ideal else 0.0), hits / len(pos)


class TestHandCases:
    def test_single_positive_ranked_first(self):
        ds = make_dataset(1, 20, [(0, 5)], [(0, 7)], [(0, 9)])
        table = np.zeros((1, 20))
        table[0, 7] = 10.0
        res = evaluate(FixedScoreRanker(table), ds, "validation")
        assert res.mean_ndcg == 1.0
        assert res.mean_recall == 1.0

    def test_single_positive_outside_top10(self):
        ds = make_dataset(1, 30, [(0, 5)], [(0, 7)], [(0, 9)])
        table = -np.arange(30, dtype=float)[None, :]  # item 0 best, descending
        table[0, 7] = -100.0
        res = evaluate(FixedScoreRanker(table), ds, "validation")
        assert res.mean_ndcg == 0.0
        assert res.mean_recall == 0.0

    def test_two_positives_ranks_one_and_three(self):
        ds = make_dataset(1, 30, [(0, 20)], [(0, 0), (0, 2)], [(0, 9)])
        table = -np.arange(30, dtype=float)[None, :]  # rank order = item id
        res = evaluate(FixedScoreRanker(table), ds, "validation")
        # hits at ranks 1 and 3
        assert res.mean_recall == 1.0
        assert res.mean_ndcg == pytest.approx(0.9197207891481876, abs=1e-15)

    def test_seen_positives_masked(self):
        ds = make_dataset(1, 10, [(0, 0)], [(0, 1)], [(0, 2)])
        table = np.zeros((1, 10))
        table[0, 0] = 5.0  # train positive would win but must be masked
        table[0, 2] = 4.0  # test positive masked during validation eval
        table[0, 1] = 3.0
        res = evaluate(FixedScoreRanker(table), ds, "validation")
        assert res.top_items[0, 0] == 1
        assert res.mean_ndcg == 1.0

    def test_empty_partition_rejected(self):
        ds = make_dataset(1, 5, [(0, 0)], [], [(0, 1)])
        with pytest.raises(ValueError):
            evaluate(FixedScoreRanker(np.zeros((1, 5))), ds, "validation")

    def test_user_without_partition_positive_skipped(self):
        ds = make_dataset(2, 5, [(0, 0), (1, 1)], [(0, 2)], [(1, 3)])
        res = evaluate(FixedScoreRanker(np.zeros((2, 5))), ds, "validation")
        np.testing.assert_array_equal(res.users, [0])

    def test_user_without_train_positive_skipped(self):
        ds = make_dataset(2, 5, [(0, 0)], [(0, 2), (1, 2)], [(0, 3)])
        res = evaluate(FixedScoreRanker(np.zeros((2, 5))), ds, "validation")
        np.testing.assert_array_equal(res.users, [0])


class TestProperties:
    def _random_instance(self, rng):
        num_users, num_items = 20, 50
        rows = {(int(rng.integers(num_users)), int(rng.integers(num_items))) for _ in range(220)}
        rows = sorted(rows)
        rng.shuffle(rows)
        n = len(rows)
        train, val, test = rows[: n // 2], rows[n // 2: 3 * n // 4], rows[3 * n // 4:]
        ds = make_dataset(num_users, num_items, train, val, test)
        scores = rng.normal(size=(num_users, num_items))
        # inject ties to exercise deterministic tie-breaking
        scores[rng.random(scores.shape) < 0.2] = 0.5
        return ds, scores

    def test_matches_bruteforce_oracle_exactly(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            ds, scores = self._random_instance(rng)
            for partition, held in (("validation", "test"), ("test", "validation")):
                try:
                    res = evaluate(FixedScoreRanker(scores), ds, partition)
                except ValueError:
                    continue
                part_index = ds._index(partition)
                for row, u in enumerate(res.users.tolist()):
                    masked = set(ds.train_items_of(u).tolist()) | set(ds._index(held).items_of(u).tolist())
                    ranked, ndcg, recall = brute_force_metrics(
                        scores[u], part_index.items_of(u).tolist(), masked, 10
                    )
                    assert res.ndcg[row] == ndcg
                    assert res.recall[row] == recall
                    np.testing.assert_array_equal(res.top_items[row][res.top_items[row] >= 0], ranked)

    def test_metrics_in_unit_interval(self):
        rng = np.random.default_rng(3)
        ds, scores = self._random_instance(rng)
        res = evaluate(FixedScoreRanker(scores), ds, "test")
        assert ((res.ndcg >= 0) & (res.ndcg <= 1)).all()
        assert ((res.recall >= 0) & (res.recall <= 1)).all()

    def test_permuting_below_cutoff_changes_nothing(self):
        rng = np.random.default_rng(5)
        ds, scores = self._random_instance(rng)
        res = evaluate(FixedScoreRanker(scores), ds, "test")
        perturbed = scores.copy()
        for u in range(perturbed.shape[0]):
            order = np.argsort(-perturbed[u], kind="stable")
            tail = order[15:]
            perturbed[u, tail] = perturbed[u, tail][::-1] - 1e5
        res2 = evaluate(FixedScoreRanker(perturbed), ds, "test")
        np.testing.assert_array_equal(res.top_items[:, :10], res2.top_items[:, :10])

    def test_worker_count_does_not_change_results(self):
        rng = np.random.default_rng(11)
        ds, scores = self._random_instance(rng)
        a = evaluate(FixedScoreRanker(scores), ds, "test", num_workers=1)
        b = evaluate(FixedScoreRanker(scores), ds, "test", num_workers=4)
        np.testing.assert_array_equal(a.ndcg, b.ndcg)
        np.testing.assert_array_equal(a.top_items, b.top_items)

    def test_embedding_ranker_matches_manual_dot(self):
        rng = np.random.default_rng(13)
        ue = rng.normal(size=(6, 8))
        ie = rng.normal(size=(9, 8))
        ranker = EmbeddingRanker(ue, ie, DotScorer(8))
        got = ranker.score_block(np.array([2, 4]))
        np.testing.assert_allclose(got, ue[[2, 4]] @ ie.T, rtol=1e-13)


class TestPopularityBaseline:
    def test_shared_popular_positive(self):
        train = [(u, 0) for u in range(5)] + [(u, u + 1) for u in range(5)]
        test = [(u + 5, 0) for u in range(3)]
        tr2 = [(u + 5, u + 1) for u in range(3)]  # give eval users train history
        ds = make_dataset(8, 10, train + tr2, [(0, 9)], test)
        res = popularity_baseline(ds, N=10, partition="test")
        assert res.mean_recall == 1.0

    def test_uniform_random_floor(self):
        rng = np.random.default_rng(17)
        num_users, num_items = 2000, 1000
        train = [(u, int(rng.integers(num_items))) for u in range(num_users) for _ in range(3)]
        test = [(u, (int(rng.integers(num_items)))) for u in range(num_users)]
        test = [(u, i) for (u, i) in test if (u, i) not in set(train)]
        ds = make_dataset(num_users, num_items, sorted(set(train)), [(0, 0)], sorted(set(test)))
        res = popularity_baseline(ds, N=10, partition="test")
        p = 10 / num_items
        sigma = math.sqrt(p * (1 - p) / len(res.users))
        assert abs(res.mean_recall - p) < 6 * sigma + 0.005

    def test_empty_test_partition_rejected(self):
        ds = make_dataset(1, 5, [(0, 0)], [(0, 1)], [])
        with pytest.raises(ValueError):
            popularity_baseline(ds, partition="test")
