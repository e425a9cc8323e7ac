"""Select the MLP kernel implementation at import.

The compiled ``_mlp_ext`` is preferred; set ``PINNA_N1_PURE_PYTHON=1`` to
force the numpy kernels.
"""

import os

from . import _mlp_py

if os.environ.get("PINNA_N1_PURE_PYTHON", "") not in ("", "0"):
    kernels = _mlp_py
    BACKEND = "python"
else:
    try:
        from . import _mlp_ext as kernels
        BACKEND = "cython"
    except ImportError:
        kernels = _mlp_py
        BACKEND = "python"


def available_backends():
    out = {"python": _mlp_py}
    try:
        from . import _mlp_ext
        out["cython"] = _mlp_ext
    except ImportError:
        pass
    return out
