"""Backend selection for the hot kernels.

The compiled extension is used when it was built; otherwise (or when
``SCVQ_PURE_PYTHON=1`` is set) the numpy fallback is used. Both give
bit-identical results.
"""

import os

from scvq import _kernels_py

BACKEND = "python"
if os.environ.get("SCVQ_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from scvq import _kernels as _impl

        BACKEND = "compiled"
    except ImportError:  # extension not built
        _impl = _kernels_py
else:
    _impl = _kernels_py

im2col = _impl.im2col
col2im = _impl.col2im
nearest_code = _impl.nearest_code

__all__ = ["BACKEND", "im2col", "col2im", "nearest_code"]
