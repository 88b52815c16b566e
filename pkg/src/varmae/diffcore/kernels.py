"""Row-kernel backend selection.

The compiled ``_ckernels`` extension is used when it was built; otherwise
the numpy implementations in ``_kernels_py`` are used. Setting
``VARMAE_KERNELS=python`` forces the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("VARMAE_KERNELS", "").lower() != "python":
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py

softmax_fwd = _impl.softmax_fwd
softmax_bwd = _impl.softmax_bwd
layernorm_fwd = _impl.layernorm_fwd
layernorm_bwd = _impl.layernorm_bwd
gelu_fwd = _impl.gelu_fwd
gelu_bwd = _impl.gelu_bwd
ce_fwd = _impl.ce_fwd
ce_bwd = _impl.ce_bwd
