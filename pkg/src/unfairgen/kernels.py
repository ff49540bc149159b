"""Kernel backend selection.

The compiled ``_ckernels`` module is used when it was built; otherwise the
numpy twin in ``_pykernels`` is used. Set ``UNFAIRGEN_PURE_PYTHON=1`` to force
the fallback (the benchmark and the twin-equivalence tests rely on this).
"""
import os

from unfairgen import _pykernels as python_backend

try:
    if os.environ.get("UNFAIRGEN_PURE_PYTHON"):
        raise ImportError("pure-python backend forced")
    from unfairgen import _ckernels as compiled_backend
except ImportError:
    compiled_backend = None

_impl = compiled_backend if compiled_backend is not None else python_backend
BACKEND = "cython" if compiled_backend is not None else "python"

pack_bits = _impl.pack_bits
unpack_codes = _impl.unpack_codes
best_split = _impl.best_split
softplus = _impl.softplus
eval_landscape_codes = _impl.eval_landscape_codes
expand_completions = _impl.expand_completions

__all__ = [
    "BACKEND",
    "best_split",
    "compiled_backend",
    "eval_landscape_codes",
    "expand_completions",
    "pack_bits",
    "python_backend",
    "softplus",
    "unpack_codes",
]
