"""Hot loops: concordance counting, Cox loss/gradient, patch histogram entropy.

The compiled extension is used when it imports; otherwise the pure-Python
module is. Set ``EVOQFORMER_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _pykernels

if os.environ.get("EVOQFORMER_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

concordance_counts = _impl.concordance_counts
cox_loss_grad = _impl.cox_loss_grad
histogram_entropy = _impl.histogram_entropy


def backend_module(name: str):
    """Return the kernel module for ``"cython"`` or ``"python"``."""
    if name == "python":
        return _pykernels
    from . import _ckernels

    return _ckernels
