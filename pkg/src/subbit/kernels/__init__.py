"""Hot inner loops with a compiled (Cython) backend and a numpy fallback.

The compiled extension is used when it was built and imports cleanly; set
``SUBBIT_PURE_PYTHON=1`` to force the fallback. Both backends expose:

``trisection_errors(absw, support, p1s, p2s)``
    Total squared error of three-region row-wise binarization for every
    ``(p1, p2)`` candidate.
``prefix_errors(absw, support, order, k)``
    Total squared error of two-group row-wise binarization, where the first
    group is the columns ``order[:i]``, for ``i = 1..k``.
``pack_bits(values, width)`` / ``unpack_bits(data, count, width)``
    MSB-first fixed-width bitstreams, zero-padded to a byte boundary.
"""

import os

import numpy as np

from . import _fallback

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _fallback}
if _ckernels is not None:
    _BACKENDS["cython"] = _ckernels

if os.environ.get("SUBBIT_PURE_PYTHON") or _ckernels is None:
    BACKEND = "python"
else:
    BACKEND = "cython"


def available_backends():
    return list(_BACKENDS)


def get_backend(name=None):
    return _BACKENDS[name or BACKEND]


def _prep(absw, support):
    absw = np.ascontiguousarray(absw, dtype=np.float64)
    support = np.ascontiguousarray(support, dtype=bool).view(np.uint8)
    return absw, support


def trisection_errors(absw, support, p1s, p2s, backend=None):
    absw, support = _prep(absw, support)
    p1s = np.ascontiguousarray(p1s, dtype=np.float64)
    p2s = np.ascontiguousarray(p2s, dtype=np.float64)
    return get_backend(backend).trisection_errors(absw, support, p1s, p2s)


def prefix_errors(absw, support, order, k, backend=None):
    absw, support = _prep(absw, support)
    order = np.ascontiguousarray(order, dtype=np.int64)
    return get_backend(backend).prefix_errors(absw, support, order, int(k))


def pack_bits(values, width, backend=None):
    values = np.ascontiguousarray(values, dtype=np.uint32)
    return get_backend(backend).pack_bits(values, int(width))


def unpack_bits(data, count, width, backend=None):
    data = np.frombuffer(bytes(data), dtype=np.uint8)
    need = (count * width + 7) // 8
    if len(data) < need:
        raise ValueError(f"bitstream needs {need} bytes, got {len(data)}")
    return get_backend(backend).unpack_bits(np.ascontiguousarray(data), int(count), int(width))
