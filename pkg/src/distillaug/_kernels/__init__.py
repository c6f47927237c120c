"""Kernel backend selection.

The compiled extension is preferred when present; the numpy fallback is
always available. Set ``DISTILLAUG_KERNELS=python`` or ``=compiled`` to
force a backend (forcing ``compiled`` raises if the extension is missing).

Both backends are deterministic: repeated calls on identical inputs return
bit-identical results. Results *across* backends agree to floating-point
roundoff, not bit-exactly, because summation order differs.
"""

from __future__ import annotations

import os

from . import reference

_FORCED = os.environ.get("DISTILLAUG_KERNELS", "").strip().lower()

if _FORCED == "python":
    _impl = reference
    BACKEND = "python"
else:
    try:
        from . import _conv as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        if _FORCED == "compiled":
            raise ImportError(
                "DISTILLAUG_KERNELS=compiled but the extension is not built; "
                "run `python setup.py build_ext --inplace`"
            ) from None
        _impl = reference
        BACKEND = "python"

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
maxpool2_forward = _impl.maxpool2_forward
maxpool2_backward = _impl.maxpool2_backward

__all__ = [
    "BACKEND",
    "conv2d_forward",
    "conv2d_backward",
    "maxpool2_forward",
    "maxpool2_backward",
    "reference",
]
