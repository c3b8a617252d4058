"""Backend selection for the numerical kernels.

Imports the compiled extension when available and falls back to the
pure-Python twin otherwise.  ``BACKEND`` records which one is active;
``get_backend`` gives explicit access to either implementation for parity
tests and benchmarks.
"""

try:
    from . import _core as _backend

    BACKEND = "compiled"
except ImportError:  # extension not built
    from . import _core_py as _backend

    BACKEND = "python"

chol_refactor = _backend.chol_refactor
lower_solve = _backend.lower_solve
lower_transpose_solve = _backend.lower_transpose_solve
exp_scale = _backend.exp_scale


def get_backend(name: str):
    """Return the kernel module for ``name`` ("compiled" or "python")."""
    if name == "python":
        from . import _core_py

        return _core_py
    if name == "compiled":
        from . import _core

        return _core
    raise ValueError(f"unknown backend {name!r}")
