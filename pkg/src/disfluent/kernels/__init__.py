"""Kernel backend selection.

The convolution hot path (im2col/col2im) has two interchangeable
implementations: a compiled Cython extension and a pure-numpy fallback.
The extension is preferred when importable; set DISFLUENT_KERNELS=numpy or
DISFLUENT_KERNELS=cython to force a backend (forcing cython raises if the
extension was not built).
"""

import os

from . import numpy_backend

_requested = os.environ.get("DISFLUENT_KERNELS", "").strip().lower()

if _requested == "numpy":
    _backend = numpy_backend
else:
    try:
        from . import _speedups as _backend
    except ImportError:
        if _requested == "cython":
            raise ImportError(
                "DISFLUENT_KERNELS=cython but the compiled extension is not "
                "available; reinstall with Cython and a C compiler present"
            ) from None
        _backend = numpy_backend

BACKEND = _backend.NAME

if _backend is numpy_backend:
    im2col = numpy_backend.im2col
    col2im = numpy_backend.col2im
    im2col_cnhw = numpy_backend.im2col_cnhw
    col2im_cnhw = numpy_backend.col2im_cnhw
else:
    # the compiled kernels are float32-only; other dtypes (float64 gradient
    # checks) fall back to the numpy implementation
    def im2col(x, kh, kw, sh, sw, ph, pw, out=None):
        if x.dtype == "float32":
            return _backend.im2col(x, kh, kw, sh, sw, ph, pw, out)
        return numpy_backend.im2col(x, kh, kw, sh, sw, ph, pw, out)

    def col2im(cols, c, h, w, kh, kw, sh, sw, ph, pw, out=None):
        if cols.dtype == "float32":
            return _backend.col2im(cols, c, h, w, kh, kw, sh, sw, ph, pw, out)
        return numpy_backend.col2im(cols, c, h, w, kh, kw, sh, sw, ph, pw, out)

    def im2col_cnhw(x, kh, kw, sh, sw, ph, pw, out=None):
        if x.dtype == "float32":
            return _backend.im2col_cnhw(x, kh, kw, sh, sw, ph, pw, out)
        return numpy_backend.im2col_cnhw(x, kh, kw, sh, sw, ph, pw, out)

    def col2im_cnhw(cols, c, n, h, w, kh, kw, sh, sw, ph, pw, out=None):
        if cols.dtype == "float32":
            return _backend.col2im_cnhw(cols, c, n, h, w, kh, kw, sh, sw, ph, pw, out)
        return numpy_backend.col2im_cnhw(cols, c, n, h, w, kh, kw, sh, sw, ph, pw, out)

conv_out_size = numpy_backend.conv_out_size

__all__ = ["BACKEND", "im2col", "col2im", "im2col_cnhw", "col2im_cnhw",
           "conv_out_size", "numpy_backend"]
