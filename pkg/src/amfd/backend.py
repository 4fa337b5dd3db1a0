"""Kernel backend selection.

The compiled extension (``amfd._ckernels``) is preferred when it built;
otherwise the NumPy fallback in ``_kernels_py`` is used. Set
``AMFD_BACKEND=python`` to force the fallback or ``AMFD_BACKEND=cython``
to fail loudly when the extension is missing.

Both backends are deterministic and agree to floating-point roundoff
(summation order differs), so per-run results are reproducible under a
fixed backend but not bit-identical across backends.
"""

import os

_choice = os.environ.get("AMFD_BACKEND", "auto").strip().lower()
if _choice not in ("auto", "", "python", "cython"):
    raise RuntimeError(
        f"AMFD_BACKEND must be 'auto', 'python' or 'cython', got {_choice!r}"
    )

from . import _kernels_py as _py

if _choice == "python":
    _cy = None
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _cy  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        if _choice == "cython":
            raise
        _cy = None
        BACKEND = "python"

# Matmul-shaped kernels stay on BLAS even under the compiled backend (BLAS
# beats naive loops there); the extension supplies the fused loops NumPy
# cannot express without temporaries.
_BLAS_KERNELS = (
    "channel_mix_fwd",
    "channel_mix_bwd_x",
    "channel_mix_bwd_w",
    "pixel_weighted_sum_fwd",
    "pixel_weighted_sum_bwd",
    "sq_diff_sum_fwd",
)
_FUSED_KERNELS = (
    "softmax1d_fwd",
    "softmax1d_bwd",
    "sq_diff_sum_bwd",
    "abs_diff_sum_fwd",
    "abs_diff_sum_bwd",
    "weighted_sq_diff_sum_fwd",
    "weighted_sq_diff_sum_bwd",
    "mean_abs_axis0_fwd",
    "mean_abs_axis0_bwd",
    "mean_abs_axis1_fwd",
    "mean_abs_axis1_bwd",
    "mean_abs0_softmax_fwd",
    "mean_abs0_softmax_bwd",
    "mean_abs1_softmax_fwd",
    "mean_abs1_softmax_bwd",
    "context_pool_fwd",
    "context_pool_bwd",
)

for _name in _BLAS_KERNELS:
    globals()[_name] = getattr(_py, _name)
for _name in _FUSED_KERNELS:
    globals()[_name] = getattr(_cy if _cy is not None else _py, _name)

KERNEL_NAMES = list(_BLAS_KERNELS) + list(_FUSED_KERNELS)
