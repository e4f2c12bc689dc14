"""Hot-kernel backend selection: compiled extension with numpy fallback.

The compiled Cython module is preferred when importable; set
``CERP_BACKEND=python`` (or ``cython``) to force a choice. Both backends
implement the same functions with the same streaming-accumulation
semantics; results agree to floating-point reassociation. The active
backend name is recorded in experiment manifests, since bit-exact
reproducibility is per backend.
"""

import os

from cerp import _kernels_py

__all__ = ["BACKEND", "get_backend", "available_backends", "dot_triplet_step"]

try:
    from cerp import _kernels as _compiled
except ImportError:  # extension not built: pure python install
    _compiled = None

_FORCED = os.environ.get("CERP_BACKEND", "auto")


def available_backends() -> tuple[str, ...]:
    return ("cython", "python") if _compiled is not None else ("python",)


def get_backend(name: str = "auto"):
    """Resolve a backend module by name ('auto', 'cython', 'python')."""
    if name in (None, "auto"):
        name = _FORCED
    if name == "auto":
        name = "cython" if _compiled is not None else "python"
    if name == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels unavailable; build the extension or use CERP_BACKEND=python")
        return _compiled
    if name == "python":
        return _kernels_py
    raise ValueError(f"unknown kernel backend {name!r}")


_default = get_backend("auto")
BACKEND = "cython" if _default is _compiled and _compiled is not None else "python"


def dot_triplet_step(*args, backend: str = "auto", **kwargs):
    return get_backend(backend).dot_triplet_step(*args, **kwargs)
