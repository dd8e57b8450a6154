"""Packed on-disk format for ``StructuredBinaryLayer`` and bit accounting.

Layout (little-endian integers, MSB-first bitstreams, every stream
zero-padded to a byte boundary)::

    "STBL" | version u16
    name_len u16 | name utf-8 | rows u32 | cols u32 | beta u16 | n u8 | m u8 | flags u16
    block_count u32
    per block:
        col_start u32 | col_end u32
        salient_count u16 | salient_count x u16 (block-local column)
        kept-index stream     ceil(log2 m) bits per kept entry; row-major,
                              banks left to right, positions ascending
        region-code stream    2 bits per kept non-salient entry
                              (0 sparse, 1 intermediate, 2 dense)
        salient sign plane 1  1 bit per kept salient entry (1 = +1)
        salient sign plane 2  residual signs, same order
        non-salient signs     1 bit per kept non-salient entry
        p1 f32 | p2 f32
        scale table           rows x 5 f32: original, residual, sparse,
                              intermediate, dense

Stream lengths follow from the header and from decoded earlier sections,
so a file has no length fields beyond the ones above and no trailing bytes.
"""

from __future__ import annotations

import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .allocation import NMRatio
from .errors import (
    BadMagic,
    OverflowingIndex,
    PackFormatError,
    TruncatedStream,
    UnsupportedVersion,
    ValidationError,
)
from .quantizer import (
    BinaryAtom,
    BlockQuantResult,
    Region,
    StructuredBinaryLayer,
    TrisectionParams,
    bank_pieces,
)

MAGIC = b"STBL"
VERSION = 1
_NONSALIENT = (Region.SPARSE, Region.INTERMEDIATE, Region.DENSE)


def index_bits(m: int) -> int:
    return (m - 1).bit_length()


def _kept_positions(mask, col_start, n, m):
    """Bank positions of kept entries in stream order, shape (rows, kept_per_row)."""
    rows = mask.shape[0]
    parts = []
    for start, stop in bank_pieces(col_start, col_start + mask.shape[1], m):
        piece = mask[:, start - col_start:stop - col_start]
        keep = min(n, stop - start)
        if np.any(piece.sum(axis=1) != keep):
            raise ValidationError(f"bank [{start}, {stop}) does not keep {keep} entries per row")
        _, c = np.nonzero(piece)
        parts.append(((c + start) % m).reshape(rows, keep))
    return np.concatenate(parts, axis=1) if parts else np.zeros((rows, 0), dtype=np.int64)


def _f32_exact(x: float) -> bool:
    return float(np.float32(x)) == x


def _sign_bits(signs, where):
    return (signs[where] > 0).astype(np.uint32)


def encode(layer: StructuredBinaryLayer) -> bytes:
    n, m = layer.nm.n, layer.nm.m
    if m > 255:
        raise OverflowingIndex(f"m={m} does not fit the u8 header field")
    if layer.block_size > 0xFFFF:
        raise ValidationError("block size exceeds u16")
    name = layer.name.encode("utf-8")
    out = bytearray(MAGIC)
    out += struct.pack("<H", VERSION)
    out += struct.pack("<H", len(name)) + name
    out += struct.pack("<IIHBBH", layer.rows, layer.cols, layer.block_size, n, m, 0)
    out += struct.pack("<I", len(layer.blocks))
    width_bits = index_bits(m)
    for blk in layer.blocks:
        if blk.width > 0xFFFF:
            raise OverflowingIndex("block wider than 65535 columns")
        out += struct.pack("<II", blk.col_start, blk.col_end)
        out += struct.pack("<H", len(blk.salient_cols))
        out += np.asarray(blk.salient_cols, dtype="<u2").tobytes()

        pos = _kept_positions(blk.nm_mask, blk.col_start, n, m)
        out += kernels.pack_bits(pos.ravel(), width_bits)

        codes = blk.region_codes
        sal = codes == Region.SALIENT
        ns = codes >= Region.SPARSE
        out += kernels.pack_bits((codes[ns] - Region.SPARSE).astype(np.uint32), 2)
        orig, resid = blk.salient_atoms
        out += kernels.pack_bits(_sign_bits(orig.signs, sal), 1)
        out += kernels.pack_bits(_sign_bits(resid.signs, sal), 1)
        ns_signs = sum(a.signs.astype(np.int16) for a in blk.nonsalient_atoms)
        out += kernels.pack_bits(_sign_bits(ns_signs, ns), 1)

        tp = blk.trisection
        if not (_f32_exact(tp.p1) and _f32_exact(tp.p2)):
            raise ValidationError("trisection break-points must be float32 values")
        out += struct.pack("<ff", tp.p1, tp.p2)
        atoms = (*blk.salient_atoms, *blk.nonsalient_atoms)
        for a in atoms:
            if a.alpha.dtype != np.float32:
                raise ValidationError("scales must be stored as float32 to pack exactly")
        table = np.stack([a.alpha for a in atoms], axis=1)
        out += table.astype("<f4").tobytes()
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, count: int, what: str) -> bytes:
        if self.pos + count > len(self.data):
            raise TruncatedStream(
                f"truncated {what} at byte offset {self.pos}: need {count} bytes, "
                f"{len(self.data) - self.pos} left", self.pos)
        chunk = self.data[self.pos:self.pos + count].tobytes()
        self.pos += count
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def bits(self, count: int, width: int, what: str) -> np.ndarray:
        raw = self.take((count * width + 7) // 8, what)
        return kernels.unpack_bits(raw, count, width)


def _signs_from_bits(shape, where, bits):
    signs = np.zeros(shape, dtype=np.int8)
    signs[where] = np.where(bits == 1, 1, -1)
    return signs


def decode(data: bytes) -> StructuredBinaryLayer:
    rd = _Reader(data)
    if rd.take(4, "magic") != MAGIC:
        raise BadMagic("not a packed layer (bad magic)")
    (version,) = rd.unpack("<H", "version")
    if version != VERSION:
        raise UnsupportedVersion(f"unsupported format version {version}")
    (name_len,) = rd.unpack("<H", "name length")
    try:
        name = rd.take(name_len, "name").decode("utf-8")
    except UnicodeDecodeError as exc:
        raise PackFormatError("layer name is not UTF-8") from exc
    rows, cols, beta, n, m, _flags = rd.unpack("<IIHBBH", "header")
    try:
        nm = NMRatio(n, m)
    except ValidationError as exc:
        raise PackFormatError(str(exc)) from exc
    (nblocks,) = rd.unpack("<I", "block count")
    width_bits = index_bits(m)

    blocks = []
    for b in range(nblocks):
        start, stop = rd.unpack("<II", f"block {b} range")
        if not start < stop <= cols:
            raise PackFormatError(f"block {b}: bad column range [{start}, {stop})")
        width = stop - start
        (nsal,) = rd.unpack("<H", f"block {b} salient count")
        sal_cols = np.frombuffer(rd.take(2 * nsal, f"block {b} salient columns"), dtype="<u2")
        sal_cols = sal_cols.astype(np.int64)
        if nsal and (sal_cols[-1] >= width or np.any(np.diff(sal_cols) <= 0)):
            raise PackFormatError(f"block {b}: salient columns out of range or unsorted")

        mask = np.zeros((rows, width), dtype=bool)
        pieces = list(bank_pieces(start, stop, m))
        per_row = sum(min(n, hi - lo) for lo, hi in pieces)
        pos = rd.bits(rows * per_row, width_bits, f"block {b} kept-index stream")
        pos = pos.reshape(rows, per_row).astype(np.int64)
        row_idx = np.arange(rows)[:, None]
        off = 0
        for lo, hi in pieces:
            keep = min(n, hi - lo)
            cols_abs = (lo // m) * m + pos[:, off:off + keep]
            if np.any(cols_abs < lo) or np.any(cols_abs >= hi):
                raise PackFormatError(f"block {b}: kept index outside its bank")
            mask[row_idx, cols_abs - start] = True
            off += keep
        if mask.sum() != rows * per_row:
            raise PackFormatError(f"block {b}: duplicate kept indices")

        col_sel = np.zeros(width, dtype=bool)
        col_sel[sal_cols] = True
        sal = mask & col_sel[None, :]
        ns = mask & ~col_sel[None, :]
        n_sal, n_ns = int(sal.sum()), int(ns.sum())

        region = rd.bits(n_ns, 2, f"block {b} region-code stream")
        if np.any(region > 2):
            raise PackFormatError(f"block {b}: invalid region code")
        codes = np.zeros((rows, width), dtype=np.uint8)
        codes[sal] = Region.SALIENT
        codes[ns] = region.astype(np.uint8) + Region.SPARSE

        s_orig = _signs_from_bits((rows, width), sal, rd.bits(n_sal, 1, f"block {b} salient sign plane"))
        s_resid = _signs_from_bits((rows, width), sal, rd.bits(n_sal, 1, f"block {b} residual sign plane"))
        s_ns = _signs_from_bits((rows, width), ns, rd.bits(n_ns, 1, f"block {b} non-salient signs"))

        p1, p2 = rd.unpack("<ff", f"block {b} break-points")
        table = np.frombuffer(rd.take(rows * 5 * 4, f"block {b} scale table"), dtype="<f4")
        table = table.astype(np.float32).reshape(rows, 5)

        def atom(col, signs):
            return BinaryAtom(np.ascontiguousarray(table[:, col]), signs)

        region_atoms = tuple(atom(2 + k, np.where(codes == r, s_ns, 0).astype(np.int8))
                             for k, r in enumerate(_NONSALIENT))
        blocks.append(BlockQuantResult(
            col_start=start,
            col_end=stop,
            nm_mask=mask,
            salient_cols=sal_cols,
            salient_atoms=(atom(0, s_orig), atom(1, s_resid)),
            nonsalient_atoms=region_atoms,
            trisection=TrisectionParams(float(p1), float(p2)),
            region_codes=codes,
        ))
    if rd.pos != len(rd.data):
        raise PackFormatError(f"{len(rd.data) - rd.pos} trailing bytes after last block")
    layer = StructuredBinaryLayer(name, rows, cols, beta, nm, blocks)
    try:
        layer.check()
    except ValidationError as exc:
        raise PackFormatError(f"decoded layer is inconsistent: {exc}") from exc
    return layer


# -- bit accounting -----------------------------------------------------------

@dataclass(frozen=True)
class BitReport:
    r_salient: float
    b_size: int
    n: int
    m: int
    n_param: float
    n_storing: float
    avg_bits_paper: float
    avg_bits_packed: float

    def to_dict(self) -> dict:
        return asdict(self)


def param_bits(r_salient: float) -> float:
    """Bits per kept weight: two sign planes for salient, one otherwise."""
    return 2.0 * r_salient + 1.0 * (1.0 - r_salient)


def storing_bits(b_size: int) -> float:
    return 2.0 + 1.0 / b_size


def nm_scaled_bits(base_bits: float, n: int, m: int) -> float:
    return base_bits * n / m


def bit_report_from_counts(salient: int, kept: int, b_size: int, n: int, m: int,
                           packed_bits: float = float("nan"), elements: int = 1) -> BitReport:
    r = salient / kept if kept else 0.0
    n_param = param_bits(r)
    return BitReport(r, b_size, n, m, n_param, storing_bits(b_size),
                     nm_scaled_bits(n_param, n, m), packed_bits / elements)


def bit_report(layer: StructuredBinaryLayer, packed_size_bytes: int) -> BitReport:
    codes = layer.region_codes()
    salient = int(np.count_nonzero(codes == Region.SALIENT))
    kept = int(np.count_nonzero(codes != Region.PRUNED))
    return bit_report_from_counts(salient, kept, layer.block_size, layer.nm.n, layer.nm.m,
                                  8.0 * packed_size_bytes, layer.rows * layer.cols)
