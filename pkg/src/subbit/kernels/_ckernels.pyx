# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Semantics match ``_fallback`` exactly; only the
summation order differs, so results agree to rounding."""

import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef cnp.float64_t f64
ctypedef cnp.uint8_t u8
ctypedef cnp.int64_t i64


def trisection_errors(const f64[:, ::1] absw, const u8[:, ::1] support,
                      const f64[::1] p1s, const f64[::1] p2s):
    cdef Py_ssize_t rows = absw.shape[0], cols = absw.shape[1]
    cdef Py_ssize_t ncand = p1s.shape[0]
    cdef Py_ssize_t c, i, j
    cdef int g
    cdef f64 p1, p2, a, d, total
    cdef f64 s[3]
    cdef f64 mean[3]
    cdef Py_ssize_t cnt[3]
    out = np.empty(ncand, dtype=np.float64)
    cdef f64[::1] out_v = out
    with nogil:
        for c in range(ncand):
            p1 = p1s[c]
            p2 = p2s[c]
            total = 0.0
            for i in range(rows):
                s[0] = 0.0; s[1] = 0.0; s[2] = 0.0
                cnt[0] = 0; cnt[1] = 0; cnt[2] = 0
                for j in range(cols):
                    if support[i, j]:
                        a = absw[i, j]
                        if a > p2:
                            g = 0
                        elif a > p1:
                            g = 1
                        else:
                            g = 2
                        s[g] += a
                        cnt[g] += 1
                for g in range(3):
                    mean[g] = s[g] / cnt[g] if cnt[g] > 0 else 0.0
                for j in range(cols):
                    if support[i, j]:
                        a = absw[i, j]
                        if a > p2:
                            g = 0
                        elif a > p1:
                            g = 1
                        else:
                            g = 2
                        d = a - mean[g]
                        total += d * d
            out_v[c] = total
    return out


def prefix_errors(const f64[:, ::1] absw, const u8[:, ::1] support,
                  const i64[::1] order, Py_ssize_t k):
    cdef Py_ssize_t rows = absw.shape[0], cols = absw.shape[1]
    cdef Py_ssize_t p, i, j
    cdef f64 sa, sb, ma, mb, a, d, total
    cdef Py_ssize_t ca, cb
    cdef cnp.ndarray[u8, ndim=1] in_prefix_arr = np.zeros(cols, dtype=np.uint8)
    cdef u8[::1] in_prefix = in_prefix_arr
    out = np.empty(k, dtype=np.float64)
    cdef f64[::1] out_v = out
    with nogil:
        for p in range(k):
            in_prefix[order[p]] = 1
            total = 0.0
            for i in range(rows):
                sa = 0.0; sb = 0.0; ca = 0; cb = 0
                for j in range(cols):
                    if support[i, j]:
                        if in_prefix[j]:
                            sa += absw[i, j]
                            ca += 1
                        else:
                            sb += absw[i, j]
                            cb += 1
                ma = sa / ca if ca > 0 else 0.0
                mb = sb / cb if cb > 0 else 0.0
                for j in range(cols):
                    if support[i, j]:
                        d = absw[i, j] - (ma if in_prefix[j] else mb)
                        total += d * d
            out_v[p] = total
    return out


def pack_bits(const cnp.uint32_t[::1] values, int width):
    cdef Py_ssize_t count = values.shape[0]
    cdef Py_ssize_t nbytes = (count * width + 7) // 8
    buf = np.zeros(nbytes, dtype=np.uint8)
    cdef u8[::1] out = buf
    cdef Py_ssize_t o = 0, idx
    cdef int held = 0
    cdef unsigned long long acc = 0
    cdef unsigned long long vmask = (1ULL << width) - 1
    if width == 0:
        return buf.tobytes()
    with nogil:
        for idx in range(count):
            acc = (acc << width) | (values[idx] & vmask)
            held += width
            while held >= 8:
                held -= 8
                out[o] = <u8>((acc >> held) & 0xFF)
                o += 1
            acc &= (1ULL << held) - 1
        if held:
            out[o] = <u8>((acc << (8 - held)) & 0xFF)
    return buf.tobytes()


def unpack_bits(const u8[::1] data, Py_ssize_t count, int width):
    vals = np.zeros(count, dtype=np.uint32)
    cdef cnp.uint32_t[::1] out = vals
    cdef Py_ssize_t pos = 0, idx
    cdef int b
    cdef cnp.uint32_t v
    if width == 0:
        return vals
    with nogil:
        for idx in range(count):
            v = 0
            for b in range(width):
                v = (v << 1) | ((data[pos >> 3] >> (7 - (pos & 7))) & 1)
                pos += 1
            out[idx] = v
    return vals
