"""Backend selection for the MLP compute kernels.

Picks the compiled extension when it imported cleanly, otherwise the numpy
fallback. Set FLYORA_KERNELS=compiled|python to force a backend (useful for
benchmarking and for debugging suspected codegen issues).
"""

import os

_choice = os.environ.get("FLYORA_KERNELS", "auto").strip().lower() or "auto"

if _choice == "auto":
    try:
        from . import _kernels as _impl
        BACKEND = "compiled"
    except ImportError:
        from . import _kernels_py as _impl
        BACKEND = "python"
elif _choice == "compiled":
    from . import _kernels as _impl  # ImportError here means the ext is not built
    BACKEND = "compiled"
elif _choice in ("python", "numpy"):
    from . import _kernels_py as _impl
    BACKEND = "python"
else:
    raise ValueError(
        "FLYORA_KERNELS must be one of auto, compiled, python; got %r" % _choice
    )

mlp_forward = _impl.mlp_forward
mlp_backward = _impl.mlp_backward


def get_backend() -> str:
    """Name of the active backend: 'compiled' or 'python'."""
    return BACKEND


def load_backend(name: str):
    """Import a specific backend module by name. For tests and benchmarks."""
    if name == "compiled":
        from . import _kernels
        return _kernels
    if name in ("python", "numpy"):
        from . import _kernels_py
        return _kernels_py
    raise ValueError("unknown kernel backend %r" % name)


def available_backends() -> list:
    """Backends importable in this environment, compiled first if present."""
    names = []
    try:
        load_backend("compiled")
        names.append("compiled")
    except ImportError:
        pass
    names.append("python")
    return names
