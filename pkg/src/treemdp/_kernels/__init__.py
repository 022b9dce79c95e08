"""Hot-loop kernels: compiled extension with a pure-numpy fallback.

The compiled module is selected at import time.  Set TREEMDP_FORCE_PYTHON=1
to force the numpy implementation (used by the benchmark and the parity
tests).  Both backends implement the same two entry points with identical
random-number consumption, so results are bit-compatible.
"""

import os

from . import _numpy

if os.environ.get("TREEMDP_FORCE_PYTHON", "") == "1":
    kernels = _numpy
else:
    try:
        from . import _native as kernels  # type: ignore[no-redef]
    except ImportError:
        kernels = _numpy

BACKEND = kernels.BACKEND


def get_backend(name: str):
    """Return a specific kernel backend by name ("native" or "numpy")."""
    if name == "numpy":
        return _numpy
    if name == "native":
        from . import _native

        return _native
    raise ValueError(f"unknown kernel backend {name!r}")
