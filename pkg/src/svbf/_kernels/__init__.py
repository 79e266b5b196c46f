"""Hot numeric kernels with backend selection at import time.

The compiled Cython extension is preferred when present; otherwise the
numpy fallback is used. Override with SVBF_BACKEND=numpy|cython (forcing
``cython`` raises if the extension is missing). ``BACKEND`` records the
active choice.
"""

import os

_KERNEL_NAMES = [
    "sigmoid_fwd",
    "sigmoid_bwd",
    "tanh_fwd",
    "tanh_bwd",
    "relu_fwd",
    "relu_bwd",
    "softplus_fwd",
    "softplus_bwd",
    "softmax_fwd",
    "softmax_bwd",
]

_forced = os.environ.get("SVBF_BACKEND", "").strip().lower()
if _forced not in ("", "numpy", "cython"):
    raise ImportError(f"SVBF_BACKEND must be 'numpy' or 'cython', got {_forced!r}")

if _forced == "numpy":
    from . import _npkern as _impl

    BACKEND = "numpy"
else:
    try:
        from . import _ckern as _impl

        BACKEND = "cython"
    except ImportError:
        if _forced == "cython":
            raise
        from . import _npkern as _impl

        BACKEND = "numpy"

globals().update({name: getattr(_impl, name) for name in _KERNEL_NAMES})

__all__ = _KERNEL_NAMES + ["BACKEND"]
