"""Hot search kernels with a compiled core and a numpy fallback.

The compiled Cython extension is preferred when importable; otherwise the
numpy implementation is used. Set BIORAG_KERNELS=python or
BIORAG_KERNELS=compiled to force a backend (forcing an unavailable backend
raises at import). Both backends implement the same contract and produce
identical selections; see benchmarks/bench_kernels.py for the speed
comparison.
"""

from __future__ import annotations

import os
from types import ModuleType

from . import _pykern


def _load_compiled() -> ModuleType:
    from . import _ckern  # noqa: PLC0415

    return _ckern


def _select() -> ModuleType:
    forced = os.environ.get("BIORAG_KERNELS", "").strip().lower()
    if forced == "python":
        return _pykern
    if forced == "compiled":
        try:
            return _load_compiled()
        except ImportError as exc:
            raise RuntimeError(
                "BIORAG_KERNELS=compiled but the extension is not built"
            ) from exc
    if forced:
        raise RuntimeError(f"unknown BIORAG_KERNELS value: {forced!r}")
    try:
        return _load_compiled()
    except ImportError:
        return _pykern


_impl = _select()

score_all = _impl.score_all
mmr_select = _impl.mmr_select


def backend_name() -> str:
    """Name of the active backend: 'compiled' or 'python'."""
    return _impl.NAME


def available_backends() -> dict[str, ModuleType]:
    """All importable backends, keyed by name."""
    backends = {_pykern.NAME: _pykern}
    try:
        compiled = _load_compiled()
    except ImportError:
        pass
    else:
        backends[compiled.NAME] = compiled
    return backends
