"""Backend selection for the hot loops (im2col, pooling, affine warps).

The compiled Cython module is used when importable. Set ``FT_KERNELS`` to
``python`` to force the numpy fallback, or to ``compiled`` to make a missing
extension an import error.
"""
import os

from . import _kernels_py

python_backend = _kernels_py

try:
    from . import _kernels as compiled_backend  # type: ignore[attr-defined]
except ImportError:  # pragma: no cover - depends on the build
    compiled_backend = None

_choice = os.environ.get("FT_KERNELS", "auto").strip().lower()
if _choice not in ("auto", "python", "compiled"):
    raise ImportError(f"FT_KERNELS must be auto, python or compiled, not {_choice!r}")
if _choice == "compiled" and compiled_backend is None:
    raise ImportError("FT_KERNELS=compiled but forward_thinking._kernels is not built")

if _choice == "python" or compiled_backend is None:
    backend = python_backend
    BACKEND = "python"
else:
    backend = compiled_backend
    BACKEND = "compiled"

im2col3 = backend.im2col3
col2im3 = backend.col2im3
maxpool2_forward = backend.maxpool2_forward
maxpool2_backward = backend.maxpool2_backward
affine_warp = backend.affine_warp
