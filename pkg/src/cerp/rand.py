"""Deterministic seed derivation: one experiment seed fans out into
independent PCG64 streams keyed by purpose (table inits, per-epoch sampling),
so any component can be re-created in isolation."""

import numpy as np

__all__ = ["seed_seq", "derived_rng", "KEY_P", "KEY_Q", "KEY_SCORER", "KEY_UD", "KEY_SAMPLING",
           "PHASE_PRUNE", "PHASE_RETRAIN", "PHASE_UD"]

KEY_P = 1
KEY_Q = 2
KEY_SCORER = 3
KEY_UD = 4
KEY_SAMPLING = 10

PHASE_PRUNE = 0
PHASE_RETRAIN = 1
PHASE_UD = 2


def seed_seq(seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=seed, spawn_key=tuple(key))


def derived_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_seq(seed, *key)))
