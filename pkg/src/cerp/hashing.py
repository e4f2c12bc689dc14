"""Balanced double hashing of entity ids into codebook index pairs.

Every entity id k in [0, N) is mapped to a pair (k_p, k_q) of bucket
indices, one per codebook:

    k_p = k mod b
    k_q = k div ceil(N / b)

With b >= ceil(N / b) the pair is unique per entity and each bucket index
is used at most ceil(N / b) times, so meta-embedding rows are shared as
evenly as possible.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = ["HashSpec", "EntityIndex", "hash_entity", "hash_entities", "usage_histogram"]


@dataclass(frozen=True)
class HashSpec:
    """Hashing layout for ``num_entities`` ids over two codebooks of ``bucket_size`` rows."""

    num_entities: int
    bucket_size: int
    stride: int = field(init=False)

    def __post_init__(self):
        if self.num_entities < 1:
            raise ValueError("num_entities must be >= 1")
        if self.bucket_size < 1:
            raise ValueError("bucket_size must be >= 1")
        stride = -(-self.num_entities // self.bucket_size)
        if self.bucket_size < stride:
            raise ValueError(
                f"bucket_size {self.bucket_size} < ceil(N/b) = {stride}: "
                f"index pairs would collide; need b*b >= N with b >= ceil(N/b)"
            )
        object.__setattr__(self, "stride", stride)


@dataclass(frozen=True)
class EntityIndex:
    """Row indices of one entity in the two codebooks."""

    k_p: int
    k_q: int


def hash_entity(spec: HashSpec, k: int) -> EntityIndex:
    """Map entity id ``k`` to its codebook row pair."""
    if not 0 <= k < spec.num_entities:
        raise ValueError(f"entity id {k} out of range [0, {spec.num_entities})")
    return EntityIndex(k_p=k % spec.bucket_size, k_q=k // spec.stride)


def hash_entities(spec: HashSpec, ks: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`hash_entity` over an int array of entity ids."""
    ks = np.asarray(ks, dtype=np.int64)
    if ks.size and (ks.min() < 0 or ks.max() >= spec.num_entities):
        raise ValueError("entity id out of range")
    return ks % spec.bucket_size, ks // spec.stride


def usage_histogram(spec: HashSpec) -> tuple[np.ndarray, np.ndarray]:
    """Per-bucket usage counts over all entities, for the k_p and k_q families."""
    ks = np.arange(spec.num_entities, dtype=np.int64)
    kp, kq = hash_entities(spec, ks)
    counts_p = np.bincount(kp, minlength=spec.bucket_size)
    counts_q = np.bincount(kq, minlength=spec.bucket_size)
    return counts_p, counts_q
