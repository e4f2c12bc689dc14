"""Base recommenders mapping (user, item) embedding pairs to affinity scores.

Both scorers operate on batches: forward takes (B, d) user and item
embedding matrices and returns scores plus a cache; backward consumes the
cache and the upstream score gradients and returns exact chain-rule
gradients for the embeddings and the scorer parameters. Caches are
invalidated when parameters change (``note_param_update``).
"""

from dataclasses import dataclass, field

import numpy as np

from cerp.codebooks import xavier_uniform

__all__ = ["DotScorer", "MlpScorer", "ScoreCache", "StaleCacheError", "make_scorer"]


class StaleCacheError(RuntimeError):
    """Backward called with a cache from before a parameter update."""


@dataclass
class ScoreCache:
    version: int
    arrays: tuple = ()


class _ScorerBase:
    def __init__(self):
        self._version = 0

    def note_param_update(self):
        """Invalidate outstanding forward caches after an optimizer step."""
        self._version += 1

    def _check(self, cache: ScoreCache):
        if cache.version != self._version:
            raise StaleCacheError("forward cache predates a parameter update")


class DotScorer(_ScorerBase):
    """Parameter-free inner-product scorer."""

    params: list = []
    param_names: list = []

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.params = []
        self.param_names = []

    def forward(self, e_u: np.ndarray, e_i: np.ndarray):
        e_u, e_i = _check_widths(e_u, e_i, self.dim)
        scores = np.einsum("bd,bd->b", e_u, e_i)
        return scores, ScoreCache(self._version, (e_u, e_i))

    def backward(self, cache: ScoreCache, g: np.ndarray):
        self._check(cache)
        e_u, e_i = cache.arrays
        g = g[:, None]
        return g * e_i, g * e_u, []


class MlpScorer(_ScorerBase):
    """Tower MLP over the concatenated pair, ReLU hidden layers, linear head.

    Default hidden widths are (2d, d, max(1, d // 2)); weights are
    Xavier-uniform under the given seed, biases zero.
    """

    def __init__(self, dim: int, seed=0, hidden: tuple[int, ...] | None = None):
        super().__init__()
        self.dim = dim
        if hidden is None:
            hidden = (2 * dim, dim, max(1, dim // 2))
        self.hidden = tuple(int(h) for h in hidden)
        if any(h < 1 for h in self.hidden):
            raise ValueError("hidden widths must be >= 1")
        rng = np.random.Generator(np.random.PCG64(seed))
        widths = [2 * dim, *self.hidden, 1]
        self.weights = [xavier_uniform(rng, widths[i], widths[i + 1]) for i in range(len(widths) - 1)]
        self.biases = [np.zeros(widths[i + 1]) for i in range(len(widths) - 1)]

    @property
    def params(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    @property
    def param_names(self) -> list:
        out = []
        for i in range(len(self.weights)):
            out.extend([f"w{i}", f"b{i}"])
        return out

    def forward(self, e_u: np.ndarray, e_i: np.ndarray):
        e_u, e_i = _check_widths(e_u, e_i, self.dim)
        x = np.concatenate([e_u, e_i], axis=1)
        acts = [x]
        n = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = acts[-1] @ w + b
            acts.append(np.maximum(z, 0.0) if i < n - 1 else z)
        scores = acts[-1][:, 0]
        return scores, ScoreCache(self._version, tuple(acts))

    def backward(self, cache: ScoreCache, g: np.ndarray):
        self._check(cache)
        acts = cache.arrays
        n = len(self.weights)
        grads = [None] * (2 * n)
        gz = g[:, None]
        for i in range(n - 1, -1, -1):
            a_in = acts[i]
            grads[2 * i] = a_in.T @ gz
            grads[2 * i + 1] = gz.sum(axis=0)
            ga = gz @ self.weights[i].T
            if i > 0:
                gz = ga * (acts[i] > 0)
        gx = ga
        d = self.dim
        return gx[:, :d], gx[:, d:], grads


def _check_widths(e_u, e_i, dim):
    e_u = np.atleast_2d(np.asarray(e_u, dtype=np.float64))
    e_i = np.atleast_2d(np.asarray(e_i, dtype=np.float64))
    if e_u.shape != e_i.shape or e_u.shape[1] != dim:
        raise ValueError(f"embedding batches must both be (B, {dim}); got {e_u.shape} and {e_i.shape}")
    return e_u, e_i


def make_scorer(kind: str, dim: int, seed=0, hidden=None):
    if kind == "dot":
        return DotScorer(dim)
    if kind == "mlp":
        return MlpScorer(dim, seed=seed, hidden=hidden)
    raise ValueError(f"unknown scorer {kind!r}; choose 'dot' or 'mlp'")
