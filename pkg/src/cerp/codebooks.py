"""Codebook parameter tables and their soft-threshold pruned views.

A codebook is a dense b x d table of meta-embedding rows plus a learnable
soft-threshold table of the same shape. The pruned view zeroes every entry
whose magnitude falls below the sigmoid of its threshold:

    pruned = sign(v) * relu(|v| - sigmoid(s))

Entity embeddings are composed by summing one pruned row from each of the
two codebooks. The pruned view (not the dense table) is the deployable
artifact; masks extracted from it freeze the support for retraining.
"""

from dataclasses import dataclass

import numpy as np

from cerp.hashing import EntityIndex, HashSpec, hash_entities
from cerp.numerics import sigmoid

__all__ = [
    "Codebook",
    "SparseCodebook",
    "PruneMask",
    "THRESHOLD_INITIALIZERS",
    "init_codebook",
    "prune_view",
    "compose",
    "compose_rows",
    "sparsity_stats",
    "extract_masks",
    "embedding_stats",
    "SparsityStats",
    "EmbeddingStats",
]

THRESHOLD_INITIALIZERS = ("all_ones", "uniform", "normal", "long_tail", "xavier_uniform")


@dataclass
class Codebook:
    """Dense value table and its elementwise soft thresholds."""

    values: np.ndarray
    thresholds: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.thresholds.shape:
            raise ValueError("values and thresholds must share shape")
        if self.values.ndim != 2:
            raise ValueError("codebook tables must be 2-dimensional")
        if not (np.isfinite(self.values).all() and np.isfinite(self.thresholds).all()):
            raise ValueError("codebook tables must be finite")

    @property
    def num_rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def copy(self) -> "Codebook":
        return Codebook(self.values.copy(), self.thresholds.copy())


@dataclass(frozen=True)
class SparseCodebook:
    """Immutable pruned snapshot of a codebook; exact zeros at pruned entries."""

    pruned: np.ndarray
    nnz: int

    @property
    def shape(self):
        return self.pruned.shape


@dataclass(frozen=True)
class PruneMask:
    """0/1 support table of a pruned codebook at extraction time."""

    mask: np.ndarray

    @property
    def nnz(self) -> int:
        return int(self.mask.sum())


def xavier_uniform(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


def _draw_thresholds(rng, rows, cols, scheme):
    if scheme == "all_ones":
        return np.ones((rows, cols))
    if scheme == "uniform":
        return rng.uniform(0.0, 1.0, size=(rows, cols))
    if scheme == "normal":
        return rng.standard_normal((rows, cols))
    if scheme == "long_tail":
        # heavy right tail: |N(0,1)|^3 rescaled into [0, 1]
        raw = np.abs(rng.standard_normal((rows, cols))) ** 3
        return raw / raw.max()
    if scheme == "xavier_uniform":
        return xavier_uniform(rng, rows, cols)
    raise ValueError(
        f"unknown threshold initializer {scheme!r}; choose one of {THRESHOLD_INITIALIZERS}"
    )


def init_codebook(
    bucket_size: int,
    dim: int,
    seed,
    threshold_init: str = "all_ones",
    threshold_shift: float = 0.0,
) -> Codebook:
    """Build a codebook with Xavier-uniform values and the chosen threshold scheme.

    ``threshold_shift`` is added to the drawn threshold base matrix. The named
    schemes produce thresholds whose sigmoid is >= ~0.27; value tables at
    realistic bucket sizes are far smaller than that, which would prune every
    entry before the first step. A negative shift starts the run live; 0 keeps
    the schemes literal.

    ``seed`` may be an int or a ``numpy.random.SeedSequence``.
    """
    if bucket_size < 1 or dim < 1:
        raise ValueError("bucket_size and dim must be >= 1")
    if threshold_init not in THRESHOLD_INITIALIZERS:
        raise ValueError(
            f"unknown threshold initializer {threshold_init!r}; "
            f"choose one of {THRESHOLD_INITIALIZERS}"
        )
    rng = np.random.Generator(np.random.PCG64(seed))
    values = xavier_uniform(rng, bucket_size, dim)
    thresholds = _draw_thresholds(rng, bucket_size, dim, threshold_init) + threshold_shift
    return Codebook(values=values, thresholds=thresholds)


def prune_view(cb: Codebook) -> SparseCodebook:
    """Soft-threshold the value table: sign(v) * relu(|v| - sigmoid(s))."""
    cut = np.abs(cb.values) - sigmoid(cb.thresholds)
    pruned = np.sign(cb.values) * np.maximum(cut, 0.0)
    pruned.flags.writeable = False
    return SparseCodebook(pruned=pruned, nnz=int(np.count_nonzero(pruned)))


def compose(sp: SparseCodebook, sq: SparseCodebook, idx: EntityIndex) -> np.ndarray:
    """Sum-pooled entity embedding from one pruned row of each codebook."""
    return sp.pruned[idx.k_p] + sq.pruned[idx.k_q]


def compose_rows(sp: SparseCodebook, sq: SparseCodebook, kp: np.ndarray, kq: np.ndarray) -> np.ndarray:
    """Vectorized :func:`compose` for index arrays; returns (len(kp), d)."""
    return sp.pruned[kp] + sq.pruned[kq]


def compose_all(sp: SparseCodebook, sq: SparseCodebook, spec: HashSpec) -> np.ndarray:
    """Embeddings of every entity id under ``spec``, as an (N, d) table."""
    ks = np.arange(spec.num_entities, dtype=np.int64)
    kp, kq = hash_entities(spec, ks)
    return compose_rows(sp, sq, kp, kq)


@dataclass(frozen=True)
class SparsityStats:
    kept_ratio: float
    pruned_fraction: float


def sparsity_stats(sp: SparseCodebook, sq: SparseCodebook, num_entities: int, dim: int) -> SparsityStats:
    """Kept-parameter ratio relative to a full num_entities x dim table."""
    kept = (sp.nnz + sq.nnz) / (num_entities * dim)
    return SparsityStats(kept_ratio=kept, pruned_fraction=1.0 - kept)


def extract_masks(sp: SparseCodebook, sq: SparseCodebook) -> tuple[PruneMask, PruneMask]:
    """Freeze the current supports as 0/1 masks."""
    return (
        PruneMask(mask=(sp.pruned != 0).astype(np.uint8)),
        PruneMask(mask=(sq.pruned != 0).astype(np.uint8)),
    )


@dataclass(frozen=True)
class EmbeddingStats:
    avg_dim: float
    overlap_rate: float
    overlap_rate_union: float
    overlap_rate_min: float


def embedding_stats(sp: SparseCodebook, sq: SparseCodebook, spec: HashSpec) -> EmbeddingStats:
    """Structural statistics of the composed embeddings over all entities.

    avg_dim is the mean nonzero count of the composed vectors (exact
    cancellation counts as zero). overlap_rate averages, per entity, the
    number of dimensions where both pruned rows are nonzero, divided by d;
    the union- and min-support-normalized variants are reported alongside
    (entities with an empty union/support contribute zero overlap).
    """
    ks = np.arange(spec.num_entities, dtype=np.int64)
    kp, kq = hash_entities(spec, ks)
    p_rows = sp.pruned[kp]
    q_rows = sq.pruned[kq]
    dim = sp.pruned.shape[1]

    avg_dim = float(np.count_nonzero(p_rows + q_rows, axis=1).mean())

    both = ((p_rows != 0) & (q_rows != 0)).sum(axis=1).astype(np.float64)
    union = ((p_rows != 0) | (q_rows != 0)).sum(axis=1).astype(np.float64)
    min_supp = np.minimum(np.count_nonzero(p_rows, axis=1), np.count_nonzero(q_rows, axis=1)).astype(np.float64)

    with np.errstate(invalid="ignore", divide="ignore"):
        over_union = np.where(union > 0, both / union, 0.0)
        over_min = np.where(min_supp > 0, both / min_supp, 0.0)

    return EmbeddingStats(
        avg_dim=avg_dim,
        overlap_rate=float((both / dim).mean()),
        overlap_rate_union=float(over_union.mean()),
        overlap_rate_min=float(over_min.mean()),
    )
