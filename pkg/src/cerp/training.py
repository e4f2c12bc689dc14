"""Two-phase training: joint pruning to a sparsity target, then mask-frozen
retraining, plus the unified-dimensionality (UD) baseline.

Pruning runs mini-batch optimization of the joint loss (BPR plus the
gamma-weighted complementarity regularizer, gamma halved after every
epoch) until the pruned fraction measured at epoch end reaches the target,
or the epoch cap is hit, in which case the run is flagged as stalled.
Retraining freezes the extracted masks, restarts the optimizer, optimizes
the BPR loss alone over the masked dense tables (thresholds pinned to a
sentinel so the prune operator is the identity), forces masked positions to
exact zero after every step, and keeps the epoch with the best validation
NDCG@10.
"""

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from cerp.codebooks import (
    Codebook,
    PruneMask,
    SparseCodebook,
    compose_all,
    embedding_stats,
    extract_masks,
    init_codebook,
    prune_view,
    sparsity_stats,
    xavier_uniform,
)
from cerp.data import InteractionDataset, epoch_triplets
from cerp.evaluation import EmbeddingRanker, evaluate
from cerp.gradients import BatchGrads, batch_backward, triplet_index_table
from cerp.hashing import HashSpec
from cerp.losses import LossConfig, bpr_terms, gamma_at_epoch
from cerp.rand import (
    KEY_P,
    KEY_Q,
    KEY_SCORER,
    KEY_UD,
    KEY_SAMPLING,
    PHASE_PRUNE,
    PHASE_RETRAIN,
    PHASE_UD,
    derived_rng,
    seed_seq,
)
from cerp.scorers import make_scorer

__all__ = [
    "TrainConfig",
    "Adam",
    "ReportRow",
    "TrainReport",
    "TrainingDivergedError",
    "PruneResult",
    "RetrainResult",
    "RunResult",
    "prune_phase",
    "retrain_phase",
    "run_cerp",
    "run_ud_baseline",
    "build_initial_model",
    "build_ranker",
    "ud_dim",
]

logger = logging.getLogger(__name__)

RETRAIN_THRESHOLD_SENTINEL = -1000.0  # sigmoid underflows to exactly 0: prune == identity


class TrainingDivergedError(RuntimeError):
    """Non-finite loss encountered during optimization."""


@dataclass(frozen=True)
class TrainConfig:
    bucket_size: int
    target_sparsity: float
    dim: int = 128
    gamma0: float = 1e-2
    eta: float = 100.0
    gamma_decay: bool = True
    learning_rate: float = 1e-3
    weight_decay: float = 1e-6
    batch_size: int = 2048
    max_prune_epochs: int = 50
    retrain_epochs: int = 30
    patience: int = 10
    negatives_per_positive: int = 5
    freeze_negatives: bool = False
    seed: int = 42
    scorer: str = "dot"
    mlp_hidden: tuple | None = None
    threshold_init: str = "all_ones"
    threshold_shift: float = 0.0
    retrain_mode: str = "continue"
    kernel_backend: str = "auto"

    def __post_init__(self):
        if not 0.0 <= self.target_sparsity < 1.0:
            raise ValueError("target_sparsity must lie in [0, 1)")
        if self.max_prune_epochs < 1:
            raise ValueError("max_prune_epochs must be >= 1")
        if self.learning_rate <= 0 or self.batch_size < 1:
            raise ValueError("learning_rate must be > 0 and batch_size >= 1")
        if self.retrain_mode not in ("continue", "rewind"):
            raise ValueError("retrain_mode must be 'continue' or 'rewind'")
        if self.scorer not in ("dot", "mlp"):
            raise ValueError("scorer must be 'dot' or 'mlp'")


@dataclass
class ReportRow:
    epoch: int
    phase: str
    loss: float
    gamma: float
    kept_ratio: float
    avg_dim: float
    overlap_rate: float
    val_ndcg10: float
    val_recall10: float


@dataclass
class TrainReport:
    rows: list = field(default_factory=list)
    achieved_sparsity: float = 0.0
    stall: bool = False
    best_epoch: int | None = None


class Adam:
    """Bias-corrected Adam with coupled weight decay; codebook rows update lazily."""

    def __init__(self, lr: float, weight_decay: float = 0.0, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self._slots: dict = {}

    def begin_step(self):
        self.t += 1

    def _slot(self, key, shape):
        if key not in self._slots:
            self._slots[key] = (np.zeros(shape), np.zeros(shape))
        return self._slots[key]

    def _apply(self, param, grad, m, v, where):
        g = grad[where] + self.weight_decay * param[where]
        m[where] = self.beta1 * m[where] + (1.0 - self.beta1) * g
        v[where] = self.beta2 * v[where] + (1.0 - self.beta2) * g * g
        m_hat = m[where] / (1.0 - self.beta1 ** self.t)
        v_hat = v[where] / (1.0 - self.beta2 ** self.t)
        param[where] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def update_rows(self, key, param, grad, rows):
        if self.t < 1:
            raise RuntimeError("call begin_step() before updates")
        if param.shape != grad.shape:
            raise ValueError("parameter/gradient shape mismatch")
        if rows.size == 0:
            return
        m, v = self._slot(key, param.shape)
        self._apply(param, grad, m, v, rows)

    def update(self, key, param, grad):
        if self.t < 1:
            raise RuntimeError("call begin_step() before updates")
        if param.shape != np.shape(grad):
            raise ValueError("parameter/gradient shape mismatch")
        m, v = self._slot(key, param.shape)
        self._apply(param, grad, m, v, slice(None))


@dataclass
class PruneResult:
    spec: HashSpec
    p_cb: Codebook
    q_cb: Codebook
    scorer: object
    report: TrainReport


@dataclass
class RetrainResult:
    values_p: np.ndarray
    values_q: np.ndarray
    scorer: object
    report: TrainReport


@dataclass
class RunResult:
    spec: HashSpec
    mask_p: PruneMask
    mask_q: PruneMask
    final_sp: SparseCodebook
    final_sq: SparseCodebook
    scorer: object
    report: TrainReport
    prune_report: TrainReport
    retrain_report: TrainReport
    final_metrics: dict


def build_initial_model(dataset: InteractionDataset, cfg: TrainConfig):
    """Freshly initialized codebooks and scorer for the dataset (untrained)."""
    spec = HashSpec(num_entities=dataset.num_entities, bucket_size=cfg.bucket_size)
    p_cb = init_codebook(cfg.bucket_size, cfg.dim, seed_seq(cfg.seed, KEY_P), cfg.threshold_init, cfg.threshold_shift)
    q_cb = init_codebook(cfg.bucket_size, cfg.dim, seed_seq(cfg.seed, KEY_Q), cfg.threshold_init, cfg.threshold_shift)
    scorer = make_scorer(cfg.scorer, cfg.dim, seed=seed_seq(cfg.seed, KEY_SCORER), hidden=cfg.mlp_hidden)
    return spec, p_cb, q_cb, scorer


def build_ranker(sp: SparseCodebook, sq: SparseCodebook, spec: HashSpec, scorer, num_users: int) -> EmbeddingRanker:
    embs = compose_all(sp, sq, spec)
    return EmbeddingRanker(embs[:num_users], embs[num_users:], scorer)


def _validation_metrics(ranker, dataset) -> tuple[float, float]:
    try:
        res = evaluate(ranker, dataset, partition="validation")
    except ValueError:
        return math.nan, math.nan
    return res.mean_ndcg, res.mean_recall


def _epoch_index_table(dataset, spec, cfg, phase, epoch, cache):
    if cfg.freeze_negatives and cache.get("idx") is not None:
        return cache["idx"]
    rng = derived_rng(cfg.seed, KEY_SAMPLING, phase, 0 if cfg.freeze_negatives else epoch)
    users, pos, neg = epoch_triplets(dataset, rng, cfg.negatives_per_positive)
    idx = triplet_index_table(spec, dataset.num_users, users, pos, neg)
    if cfg.freeze_negatives:
        cache["idx"] = idx
    return idx


def _optimize_epoch(p_cb, q_cb, scorer, idx, cfg, gamma, adam, epoch, phase_name, project=None):
    """One epoch of mini-batch steps; returns mean per-triplet loss."""
    total = 0.0
    for start in range(0, idx.shape[0], cfg.batch_size):
        stop = min(start + cfg.batch_size, idx.shape[0])
        grads, parts = batch_backward(
            p_cb, q_cb, scorer, idx[start:stop], cfg.eta, gamma, backend=cfg.kernel_backend
        )
        if not math.isfinite(parts.total):
            raise TrainingDivergedError(
                f"non-finite loss in {phase_name} epoch {epoch + 1}, batch at triplet {start}"
            )
        total += parts.total
        adam.begin_step()
        adam.update_rows("p_values", p_cb.values, grads.d_values_p, grads.touched_rows_p)
        adam.update_rows("q_values", q_cb.values, grads.d_values_q, grads.touched_rows_q)
        if project is None:  # thresholds learn only while pruning
            adam.update_rows("p_thresholds", p_cb.thresholds, grads.d_thresholds_p, grads.touched_rows_p)
            adam.update_rows("q_thresholds", q_cb.thresholds, grads.d_thresholds_q, grads.touched_rows_q)
        for name, param, g in zip(scorer.param_names, scorer.params, grads.scorer_grads):
            adam.update(name, param, g)
        if scorer.params:
            scorer.note_param_update()
        if project is not None:
            project()
    return total / idx.shape[0]


def prune_phase(dataset: InteractionDataset, cfg: TrainConfig) -> PruneResult:
    """Joint pruning until the target sparsity is reached or the epoch cap hits."""
    spec, p_cb, q_cb, scorer = build_initial_model(dataset, cfg)
    loss_cfg = LossConfig(gamma0=cfg.gamma0, eta=cfg.eta, gamma_decay=cfg.gamma_decay)
    adam = Adam(cfg.learning_rate, cfg.weight_decay)
    report = TrainReport()
    cache: dict = {}

    for epoch in range(cfg.max_prune_epochs):
        gamma = gamma_at_epoch(loss_cfg, epoch)
        idx = _epoch_index_table(dataset, spec, cfg, PHASE_PRUNE, epoch, cache)
        mean_loss = _optimize_epoch(p_cb, q_cb, scorer, idx, cfg, gamma, adam, epoch, "prune")

        sp, sq = prune_view(p_cb), prune_view(q_cb)
        st = sparsity_stats(sp, sq, dataset.num_entities, cfg.dim)
        est = embedding_stats(sp, sq, spec)
        ndcg, recall = _validation_metrics(build_ranker(sp, sq, spec, scorer, dataset.num_users), dataset)
        report.rows.append(ReportRow(epoch + 1, "prune", mean_loss, gamma, st.kept_ratio,
                                     est.avg_dim, est.overlap_rate, ndcg, recall))
        report.achieved_sparsity = st.pruned_fraction
        if st.pruned_fraction >= cfg.target_sparsity:
            break
    else:
        report.stall = True
        logger.warning("pruning stalled at %.4f after %d epochs (target %.4f)",
                       report.achieved_sparsity, cfg.max_prune_epochs, cfg.target_sparsity)

    return PruneResult(spec, p_cb, q_cb, scorer, report)


def retrain_phase(
    p_cb: Codebook,
    q_cb: Codebook,
    mask_p: PruneMask,
    mask_q: PruneMask,
    scorer,
    dataset: InteractionDataset,
    cfg: TrainConfig,
    spec: HashSpec | None = None,
) -> RetrainResult:
    """BPR-only optimization of the masked dense tables under frozen supports."""
    if mask_p.mask.shape != p_cb.values.shape or mask_q.mask.shape != q_cb.values.shape:
        raise ValueError("mask shape does not match codebook shape")
    if spec is None:
        spec = HashSpec(num_entities=dataset.num_entities, bucket_size=cfg.bucket_size)

    if cfg.retrain_mode == "rewind":
        values_p = init_codebook(cfg.bucket_size, cfg.dim, seed_seq(cfg.seed, KEY_P),
                                 cfg.threshold_init, cfg.threshold_shift).values
        values_q = init_codebook(cfg.bucket_size, cfg.dim, seed_seq(cfg.seed, KEY_Q),
                                 cfg.threshold_init, cfg.threshold_shift).values
        scorer = make_scorer(cfg.scorer, cfg.dim, seed=seed_seq(cfg.seed, KEY_SCORER), hidden=cfg.mlp_hidden)
    else:
        values_p = prune_view(p_cb).pruned.copy()
        values_q = prune_view(q_cb).pruned.copy()

    dead_p = mask_p.mask == 0
    dead_q = mask_q.mask == 0
    values_p[dead_p] = 0.0
    values_q[dead_q] = 0.0

    sentinel = np.full(values_p.shape, RETRAIN_THRESHOLD_SENTINEL)
    rp_cb = Codebook(values_p, sentinel)
    rq_cb = Codebook(values_q, sentinel.copy())

    def project():
        values_p[dead_p] = 0.0
        values_q[dead_q] = 0.0

    adam = Adam(cfg.learning_rate, cfg.weight_decay)
    report = TrainReport()
    cache: dict = {}
    best = (-math.inf, None)
    best_epoch = None

    for epoch in range(cfg.retrain_epochs):
        idx = _epoch_index_table(dataset, spec, cfg, PHASE_RETRAIN, epoch, cache)
        mean_loss = _optimize_epoch(rp_cb, rq_cb, scorer, idx, cfg, 0.0, adam, epoch, "retrain", project=project)

        sp, sq = prune_view(rp_cb), prune_view(rq_cb)
        st = sparsity_stats(sp, sq, dataset.num_entities, cfg.dim)
        est = embedding_stats(sp, sq, spec)
        ndcg, recall = _validation_metrics(build_ranker(sp, sq, spec, scorer, dataset.num_users), dataset)
        report.rows.append(ReportRow(epoch + 1, "retrain", mean_loss, 0.0, st.kept_ratio,
                                     est.avg_dim, est.overlap_rate, ndcg, recall))
        report.achieved_sparsity = st.pruned_fraction

        score = ndcg if not math.isnan(ndcg) else -mean_loss
        if score > best[0]:
            best = (score, (values_p.copy(), values_q.copy(), [p.copy() for p in scorer.params]))
            best_epoch = epoch + 1
        elif best_epoch is not None and (epoch + 1) - best_epoch >= cfg.patience:
            break

    if best[1] is not None:
        bp, bq, bparams = best[1]
        values_p[...] = bp
        values_q[...] = bq
        for param, saved in zip(scorer.params, bparams):
            param[...] = saved
        if scorer.params:
            scorer.note_param_update()
    report.best_epoch = best_epoch
    return RetrainResult(values_p, values_q, scorer, report)


def _quantized_sparse(values: np.ndarray) -> SparseCodebook:
    """Deployable view: values rounded through f32 (the export precision)."""
    q = values.astype(np.float32).astype(np.float64)
    q.flags.writeable = False
    return SparseCodebook(pruned=q, nnz=int(np.count_nonzero(q)))


def run_cerp(dataset: InteractionDataset, cfg: TrainConfig) -> RunResult:
    """Full pipeline: prune, extract masks, retrain, quantize, final metrics."""
    pruned = prune_phase(dataset, cfg)
    sp, sq = prune_view(pruned.p_cb), prune_view(pruned.q_cb)
    mask_p, mask_q = extract_masks(sp, sq)
    retrained = retrain_phase(pruned.p_cb, pruned.q_cb, mask_p, mask_q, pruned.scorer,
                              dataset, cfg, spec=pruned.spec)

    final_sp = _quantized_sparse(retrained.values_p)
    final_sq = _quantized_sparse(retrained.values_q)
    final_metrics = final_metrics_for(final_sp, final_sq, pruned.spec, retrained.scorer, dataset, cfg.dim)

    merged = TrainReport(
        rows=pruned.report.rows + retrained.report.rows,
        achieved_sparsity=pruned.report.achieved_sparsity,
        stall=pruned.report.stall,
        best_epoch=retrained.report.best_epoch,
    )
    return RunResult(
        spec=pruned.spec,
        mask_p=mask_p,
        mask_q=mask_q,
        final_sp=final_sp,
        final_sq=final_sq,
        scorer=retrained.scorer,
        report=merged,
        prune_report=pruned.report,
        retrain_report=retrained.report,
        final_metrics=final_metrics,
    )


def final_metrics_for(sp: SparseCodebook, sq: SparseCodebook, spec: HashSpec, scorer,
                      dataset: InteractionDataset, dim: int) -> dict:
    """Structural stats plus validation/test ranking metrics of a frozen model."""
    ranker = build_ranker(sp, sq, spec, scorer, dataset.num_users)
    st = sparsity_stats(sp, sq, dataset.num_entities, dim)
    est = embedding_stats(sp, sq, spec)
    out = {
        "kept_ratio": st.kept_ratio,
        "pruned_fraction": st.pruned_fraction,
        "avg_dim": est.avg_dim,
        "overlap_rate": est.overlap_rate,
        "overlap_rate_union": est.overlap_rate_union,
        "overlap_rate_min": est.overlap_rate_min,
    }
    for partition in ("validation", "test"):
        try:
            res = evaluate(ranker, dataset, partition=partition)
            out[partition] = {"ndcg10": res.mean_ndcg, "recall10": res.mean_recall}
        except ValueError:
            out[partition] = {"ndcg10": math.nan, "recall10": math.nan}
    return out


def ud_dim(target_sparsity: float, dim: int) -> int:
    """Uniform reduced dimension matching the parameter budget."""
    d_prime = int((1.0 - target_sparsity) * dim)
    if d_prime < 1:
        raise ValueError(
            f"target sparsity {target_sparsity} leaves no room: floor((1-s)*d) = 0"
        )
    return d_prime


@dataclass
class UdResult:
    table: np.ndarray
    scorer: object
    report: TrainReport
    final_metrics: dict
    dim: int


def run_ud_baseline(dataset: InteractionDataset, cfg: TrainConfig) -> UdResult:
    """Dense full-table baseline at the budget-equivalent uniform dimension."""
    d_prime = ud_dim(cfg.target_sparsity, cfg.dim)
    N, U = dataset.num_entities, dataset.num_users
    rng = derived_rng(cfg.seed, KEY_UD)
    table = xavier_uniform(rng, N, d_prime)
    scorer = make_scorer(cfg.scorer, d_prime, seed=seed_seq(cfg.seed, KEY_SCORER))
    adam = Adam(cfg.learning_rate, cfg.weight_decay)
    report = TrainReport()
    best = (-math.inf, None)
    best_epoch = None
    cache: dict = {}

    for epoch in range(cfg.retrain_epochs):
        if cfg.freeze_negatives and cache.get("trip") is not None:
            users, pos, neg = cache["trip"]
        else:
            rng_e = derived_rng(cfg.seed, KEY_SAMPLING, PHASE_UD, 0 if cfg.freeze_negatives else epoch)
            users, pos, neg = epoch_triplets(dataset, rng_e, cfg.negatives_per_positive)
            if cfg.freeze_negatives:
                cache["trip"] = (users, pos, neg)

        total = 0.0
        for start in range(0, users.size, cfg.batch_size):
            stop = min(start + cfg.batch_size, users.size)
            bu, bp, bn = users[start:stop], U + pos[start:stop], U + neg[start:stop]
            eu, ep, en = table[bu], table[bp], table[bn]
            y_pos, cache_p = scorer.forward(eu, ep)
            y_neg, cache_n = scorer.forward(eu, en)
            losses, dx = bpr_terms(y_pos - y_neg)
            batch_loss = float(np.sum(losses))
            if not math.isfinite(batch_loss):
                raise TrainingDivergedError(f"non-finite loss in ud epoch {epoch + 1}")
            total += batch_loss
            deu_p, dep, pg_pos = scorer.backward(cache_p, dx)
            deu_n, den, pg_neg = scorer.backward(cache_n, -dx)

            grad = np.zeros_like(table)
            n = stop - start
            rows = np.stack([bu, bp, bn], axis=1).reshape(3 * n)
            vals = np.stack([deu_p + deu_n, dep, den], axis=1).reshape(3 * n, d_prime)
            np.add.at(grad, rows, vals)
            touched = np.unique(rows)

            adam.begin_step()
            adam.update_rows("ud_table", table, grad, touched)
            for name, param, gp, gn in zip(scorer.param_names, scorer.params, pg_pos, pg_neg):
                adam.update(name, param, gp + gn)
            if scorer.params:
                scorer.note_param_update()

        mean_loss = total / users.size
        ranker = EmbeddingRanker(table[:U], table[U:], scorer)
        ndcg, recall = _validation_metrics(ranker, dataset)
        kept = np.count_nonzero(table) / (N * cfg.dim)
        avg_dim = float(np.count_nonzero(table, axis=1).mean())
        report.rows.append(ReportRow(epoch + 1, "ud", mean_loss, 0.0, kept, avg_dim, 0.0, ndcg, recall))
        report.achieved_sparsity = 1.0 - kept

        score = ndcg if not math.isnan(ndcg) else -mean_loss
        if score > best[0]:
            best = (score, (table.copy(), [p.copy() for p in scorer.params]))
            best_epoch = epoch + 1
        elif best_epoch is not None and (epoch + 1) - best_epoch >= cfg.patience:
            break

    if best[1] is not None:
        table[...] = best[1][0]
        for param, saved in zip(scorer.params, best[1][1]):
            param[...] = saved
        if scorer.params:
            scorer.note_param_update()
    report.best_epoch = best_epoch

    qtable = table.astype(np.float32).astype(np.float64)
    ranker = EmbeddingRanker(qtable[:U], qtable[U:], scorer)
    final = {
        "kept_ratio": float(np.count_nonzero(qtable) / (N * cfg.dim)),
        "avg_dim": float(np.count_nonzero(qtable, axis=1).mean()),
        "overlap_rate": 0.0,
        "ud_dim": d_prime,
    }
    for partition in ("validation", "test"):
        try:
            res = evaluate(ranker, dataset, partition=partition)
            final[partition] = {"ndcg10": res.mean_ndcg, "recall10": res.mean_recall}
        except ValueError:
            final[partition] = {"ndcg10": math.nan, "recall10": math.nan}
    return UdResult(table=qtable, scorer=scorer, report=report, final_metrics=final, dim=d_prime)
