"""Select the gridding kernels: compiled extension if available, else numpy."""
import os
import warnings

from . import _kernels_py

_FORCE_PY = os.environ.get("TRAJOPT_PURE_PYTHON", "").strip() not in ("", "0")

kernels = _kernels_py
BACKEND = "python"

if not _FORCE_PY:
    try:
        from . import _kernels as _compiled
    except ImportError:
        warnings.warn(
            "compiled gridding kernels not built; using the numpy fallback",
            RuntimeWarning,
            stacklevel=2,
        )
    else:
        kernels = _compiled
        BACKEND = "cython"


def get_kernels(name=None):
    """Return a kernel module by name (``"cython"``/``"python"``) or the default."""
    if name is None:
        return kernels
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown backend {name!r}")
