"""Backend selection for the encoder hot kernels.

The compiled Cython extension is used when it imported cleanly; the
pure-numpy twin is the fallback.  Set ``DISTILIR_BACKEND=numpy`` (or
``compiled``) to force a choice; forcing ``compiled`` raises if the
extension is unavailable.

Both backends satisfy the same contract and agree to ~1e-12, but they
are not bit-identical (summation order differs), so reproducibility
guarantees hold per backend.
"""

from __future__ import annotations

import os

from . import _numpy_backend

_forced = os.environ.get("DISTILIR_BACKEND", "").strip().lower()

if _forced == "numpy":
    _impl = _numpy_backend
elif _forced == "compiled":
    from . import _core as _impl  # noqa: F401
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _numpy_backend

BACKEND = _impl.NAME

attention_forward = _impl.attention_forward
attention_backward = _impl.attention_backward
ffn_forward = _impl.ffn_forward
ffn_backward = _impl.ffn_backward


def get_backend(name: str):
    """Return a specific backend module ("numpy" or "compiled")."""
    if name == "numpy":
        return _numpy_backend
    if name == "compiled":
        from . import _core

        return _core
    raise ValueError(f"unknown backend {name!r}")


def available_backends():
    names = ["numpy"]
    try:
        from . import _core  # noqa: F401

        names.append("compiled")
    except ImportError:
        pass
    return names
