"""Kernel backend selection.

The encoder's inner loops (masked softmax, layer norm, GELU and their
backward passes) exist twice: a compiled Cython extension and a pure NumPy
fallback with identical semantics.  The extension is preferred when it
imported cleanly; set ``ATTNAUG_KERNELS=pure`` or ``ATTNAUG_KERNELS=c`` to
force a backend (forcing ``c`` without the extension installed raises).

``benchmarks/bench_kernels.py`` compares the two backends head to head.
"""

from __future__ import annotations

import os

from . import _kernels_py

_choice = os.environ.get("ATTNAUG_KERNELS", "auto").lower()
if _choice not in ("auto", "c", "pure"):
    raise ValueError(f"ATTNAUG_KERNELS must be one of auto/c/pure, got {_choice!r}")

if _choice == "pure":
    _impl = _kernels_py
else:
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]
    except ImportError:
        if _choice == "c":
            raise
        _impl = _kernels_py

masked_softmax = _impl.masked_softmax
masked_softmax_backward = _impl.masked_softmax_backward
layer_norm = _impl.layer_norm
layer_norm_backward = _impl.layer_norm_backward
gelu = _impl.gelu
gelu_backward = _impl.gelu_backward


def backend_name() -> str:
    """Name of the active backend: "c" or "pure"."""
    return _impl.BACKEND_NAME


def available_backends() -> dict[str, object]:
    """All importable backends keyed by name (for tests and benchmarks)."""
    backends: dict[str, object] = {"pure": _kernels_py}
    try:
        from . import _ckernels

        backends["c"] = _ckernels
    except ImportError:
        pass
    return backends
