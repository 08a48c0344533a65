"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy twin.
``set_backend`` switches at runtime (tests and the benchmark compare both).
"""
from types import ModuleType

from knockstat import _kernels_py

try:
    from knockstat import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_active: ModuleType = _compiled if _compiled is not None else _kernels_py


def compiled_available() -> bool:
    return _compiled is not None


def backend_name() -> str:
    return "compiled" if _active is _compiled else "python"


def set_backend(name: str) -> None:
    global _active
    if name == "python":
        _active = _kernels_py
    elif name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built")
        _active = _compiled
    else:
        raise ValueError(f"unknown backend {name!r}")


def em_run(*args, **kwargs):
    return _active.em_run(*args, **kwargs)


def gof_scores(steps, cdf):
    return _active.gof_scores(steps, cdf)


def acf(x, max_lag):
    return _active.acf(x, max_lag)
