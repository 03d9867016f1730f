"""Hot simulation kernels with a compiled core and a pure-Python fallback.

The Cython extension ``_ckernels`` is preferred when importable; otherwise
the numpy backend is used. Both implement the same contract (see
``_pykernels``), so the selection only affects speed. Override with the
environment variable ``DRIFTLAB_KERNELS=compiled|python|auto``; requesting
``compiled`` raises if the extension is unavailable.
"""

from __future__ import annotations

import os

from . import _pykernels
from ._pykernels import ALG_CENTRALIZED, ALG_CONSENSUS, ALG_DIFFUSION

try:
    from . import _ckernels
except ImportError:
    _ckernels = None

_choice = os.environ.get("DRIFTLAB_KERNELS", "auto").lower()
if _choice == "python":
    _backend = _pykernels
elif _choice == "compiled":
    if _ckernels is None:
        raise ImportError("DRIFTLAB_KERNELS=compiled but the extension is not built; "
                          "run `pip install -e . --no-build-isolation`")
    _backend = _ckernels
elif _choice == "auto":
    _backend = _ckernels if _ckernels is not None else _pykernels
else:
    raise ValueError(f"unknown DRIFTLAB_KERNELS value {_choice!r}")


def backend_name() -> str:
    return "compiled" if _backend is _ckernels else "python"


def get_backend(name: str = "active"):
    """Return a kernel module: "active", "python", or "compiled"."""
    if name == "active":
        return _backend
    if name == "python":
        return _pykernels
    if name == "compiled":
        if _ckernels is None:
            raise ImportError("compiled kernels are not built")
        return _ckernels
    raise ValueError(f"unknown backend {name!r}")


def simulate_quadratic(*args, **kwargs):
    return _backend.simulate_quadratic(*args, **kwargs)


def simulate_double_well(*args, **kwargs):
    return _backend.simulate_double_well(*args, **kwargs)
