"""Backend selection for the nested-integral kernel.

The compiled extension is used when it imports; otherwise, or when the
``VDRATING_PURE`` environment variable is set, the pure-Python kernel is used.
Both expose ``terms`` with identical signatures.
"""

from __future__ import annotations

import os

from . import _kernels_py
from ._kernels_py import R1_ABOVE, R2_BELOW, R3_ABOVE, R3_BELOW  # noqa: F401

python_backend = _kernels_py
compiled_backend = None

try:
    from . import _kernels as compiled_backend  # type: ignore[no-redef]
except ImportError:  # extension not built
    compiled_backend = None

if compiled_backend is not None and not os.environ.get("VDRATING_PURE"):
    backend = compiled_backend
    BACKEND = "compiled"
else:
    backend = python_backend
    BACKEND = "python"


def terms(*args, **kwargs):
    return backend.terms(*args, **kwargs)
