"""Backend selection for the numeric inner loops.

The compiled extension ``selftrain._kernels`` is used when importable;
otherwise the numpy implementations in ``selftrain._kernels_py`` are used.
Set ``SELFTRAIN_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"

if os.environ.get("SELFTRAIN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl

        BACKEND = "compiled"
    except ImportError:  # extension not built
        _impl = _kernels_py
else:
    _impl = _kernels_py

pool_forward = _impl.pool_forward
pool_backward = _impl.pool_backward
adam_update = _impl.adam_update
cbow_epoch = _impl.cbow_epoch

__all__ = ["BACKEND", "pool_forward", "pool_backward", "adam_update", "cbow_epoch"]
