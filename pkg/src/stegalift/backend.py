"""Selection between the compiled kernel extension and the numpy fallback.

The compiled module (``stegalift._kernels``, built from ``_kernels.pyx``) is
preferred when importable; otherwise the numpy implementations in
``_kernels_py`` are used. ``STEGA_LIFT_BACKEND=python|cython`` forces a
choice (forcing ``cython`` fails loudly if the extension is missing).
"""

import os

from . import _kernels_py
from .errors import ConfigError

_KERNEL_FUNCS = ("conv3x3_fwd", "conv3x3_bwd", "filter3x3_fwd", "filter3x3_bwd")

try:
    from . import _kernels as _kernels_cy
except ImportError:
    _kernels_cy = None


def get_kernels(name):
    """Return the kernel module for ``name`` ("python" or "cython")."""
    if name == "python":
        return _kernels_py
    if name == "cython":
        if _kernels_cy is None:
            raise ConfigError("cython kernel extension is not built")
        return _kernels_cy
    raise ConfigError("unknown kernel backend %r" % (name,))


def available_backends():
    out = ["python"]
    if _kernels_cy is not None:
        out.append("cython")
    return out


def _default_backend():
    forced = os.environ.get("STEGA_LIFT_BACKEND", "auto").lower()
    if forced in ("python", "cython"):
        return forced
    return "cython" if _kernels_cy is not None else "python"


_active = get_kernels(_default_backend())


def set_backend(name):
    """Switch the active kernel backend (mainly for tests and benchmarks)."""
    global _active
    _active = get_kernels(name)


def active_backend():
    return _active.BACKEND_NAME


def conv3x3_fwd(x, w):
    return _active.conv3x3_fwd(x, w)


def conv3x3_bwd(x, w, gy):
    return _active.conv3x3_bwd(x, w, gy)


def filter3x3_fwd(x, wts):
    return _active.filter3x3_fwd(x, wts)


def filter3x3_bwd(x, wts, gy):
    return _active.filter3x3_bwd(x, wts, gy)
