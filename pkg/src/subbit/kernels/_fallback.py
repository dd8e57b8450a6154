"""Pure numpy implementations of the hot loops in ``_ckernels.pyx``."""

import numpy as np


def _group_sse(absw, groups, ngroups):
    # groups: int array, -1 marks unsupported entries
    total = 0.0
    for g in range(ngroups):
        member = groups == g
        cnt = member.sum(axis=1)
        s = np.where(member, absw, 0.0).sum(axis=1)
        mean = np.divide(s, cnt, out=np.zeros_like(s), where=cnt > 0)
        dev = np.where(member, absw - mean[:, None], 0.0)
        total += float(np.sum(dev * dev))
    return total


def trisection_errors(absw, support, p1s, p2s):
    absw = np.asarray(absw, dtype=np.float64)
    support = np.asarray(support, dtype=bool)
    out = np.empty(len(p1s), dtype=np.float64)
    for c, (p1, p2) in enumerate(zip(p1s, p2s)):
        groups = np.where(absw > p2, 0, np.where(absw > p1, 1, 2))
        groups[~support] = -1
        out[c] = _group_sse(absw, groups, 3)
    return out


def prefix_errors(absw, support, order, k):
    absw = np.asarray(absw, dtype=np.float64)
    support = np.asarray(support, dtype=bool)
    in_prefix = np.zeros(absw.shape[1], dtype=bool)
    out = np.empty(k, dtype=np.float64)
    for p in range(k):
        in_prefix[order[p]] = True
        groups = np.broadcast_to(np.where(in_prefix, 0, 1), absw.shape).copy()
        groups[~support] = -1
        out[p] = _group_sse(absw, groups, 2)
    return out


def pack_bits(values, width):
    values = np.asarray(values, dtype=np.uint32)
    if width == 0 or values.size == 0:
        return bytes((values.size * width + 7) // 8)
    shifts = np.arange(width - 1, -1, -1, dtype=np.uint32)
    bits = ((values[:, None] >> shifts) & 1).astype(np.uint8).ravel()
    return np.packbits(bits).tobytes()


def unpack_bits(data, count, width):
    if width == 0 or count == 0:
        return np.zeros(count, dtype=np.uint32)
    raw = np.frombuffer(bytes(data), dtype=np.uint8)
    bits = np.unpackbits(raw)[: count * width].reshape(count, width).astype(np.uint32)
    weights = np.uint32(1) << np.arange(width - 1, -1, -1, dtype=np.uint32)
    return (bits * weights).sum(axis=1, dtype=np.uint32)
