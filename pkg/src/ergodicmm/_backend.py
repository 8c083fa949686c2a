"""Selects the compiled kernels when available, the pure-Python twins otherwise.

The environment variable ERGODICMM_BACKEND forces the choice: "c" requires
the compiled extension (import error if missing), "python" forces the
fallback.  Unset or empty means prefer compiled, fall back silently.
"""

from __future__ import annotations

import os

from .errors import ConfigError

_requested = os.environ.get("ERGODICMM_BACKEND", "").strip().lower()

if _requested in ("", "c"):
    try:
        from . import _kernels as _impl

        BACKEND = "c"
    except ImportError:
        if _requested == "c":
            raise
        from . import _kernels_py as _impl

        BACKEND = "python"
elif _requested in ("py", "python"):
    from . import _kernels_py as _impl

    BACKEND = "python"
else:
    raise ConfigError(
        f"ERGODICMM_BACKEND must be 'c' or 'python', got {_requested!r}"
    )

loglik_packed = _impl.loglik_packed
score_packed = _impl.score_packed
solve_kappa_packed = _impl.solve_kappa_packed
regularizer_value = _impl.regularizer_value
simulate_static_path = _impl.simulate_static_path


def get_backend(name: str):
    """Return the kernel module for an explicit backend name.

    Used by the benchmark and by tests that compare the two implementations.
    """
    if name == "c":
        from . import _kernels

        return _kernels
    if name in ("py", "python"):
        from . import _kernels_py

        return _kernels_py
    raise ConfigError(f"unknown backend {name!r}")
