"""Adaptive binary range coder for quantized coefficient blocks.

The coder is a 32-bit carry-propagating range coder (cache byte plus pending
0xFF run on the encode side, matching decoder renormalization at 2^24).
Symbols are signed integers binarized as: a zero flag, a sign bit, then an
order-0 exp-Golomb code of |s| - 1 (unary-style prefix of the magnitude's
bit length, then the bits below the leading one).  Every bin draws its
probability from an adaptive 0/1 counter pair; each coefficient position in
the block keeps an independent set of counters, so position statistics never
bleed into each other.

Counter pairs start at 1/1 and both halve (rounding up, so never below 1)
once their total reaches 2^15, which also bounds the divisor so the range
never collapses below one step per renormalization window.
"""

from __future__ import annotations

import math
import struct

import numpy as np

MAGIC = b"RDLS"
STREAM_VERSION = 1

_TOP = 1 << 24
_HALVE_AT = 1 << 15

# Per-position context layout: zero flag, sign, 16 prefix bins (magnitude bit
# length 0..15), then suffix bins for each length k at triangle offsets.
_PREFIX_BASE = 2
_SUFFIX_BASE = 18
_MAX_K = 15
CTX_PER_POS = _SUFFIX_BASE + _MAX_K * (_MAX_K + 1) // 2  # 138

SYMBOL_MIN = -(1 << 15)
SYMBOL_MAX = (1 << 15) - 1


class DecodeError(Exception):
    """Raised when a stream is structurally inconsistent with the format."""


class ContextSet:
    """Adaptive bin counters for all positions of one block geometry."""

    def __init__(self, num_positions: int):
        self.num_positions = int(num_positions)
        size = self.num_positions * CTX_PER_POS
        self.n0 = [1] * size
        self.n1 = [1] * size

    def clone(self) -> "ContextSet":
        other = ContextSet.__new__(ContextSet)
        other.num_positions = self.num_positions
        other.n0 = list(self.n0)
        other.n1 = list(self.n1)
        return other

    def bit_costs(self) -> tuple[np.ndarray, np.ndarray]:
        """Ideal fractional bit cost of coding a 0 / a 1 in each context."""
        c0 = np.asarray(self.n0, dtype=np.float64)
        c1 = np.asarray(self.n1, dtype=np.float64)
        total = c0 + c1
        return -np.log2(c0 / total), -np.log2(c1 / total)


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = 0xFFFFFFFF
        self.cache = 0
        self.cache_size = 1
        self.out = bytearray()

    def _shift_low(self):
        low = self.low
        if low < 0xFF000000 or low > 0xFFFFFFFF:
            carry = low >> 32
            self.out.append((self.cache + carry) & 0xFF)
            if self.cache_size > 1:
                self.out.extend(bytes([0x00 if carry else 0xFF]) * (self.cache_size - 1))
            self.cache = (low >> 24) & 0xFF
            self.cache_size = 0
        self.cache_size += 1
        self.low = (low << 8) & 0xFFFFFFFF

    def encode(self, ctxs: ContextSet, ctx: int, bit: int):
        n0 = ctxs.n0
        n1 = ctxs.n1
        c0 = n0[ctx]
        c1 = n1[ctx]
        bound = (self.range // (c0 + c1)) * c0
        if bit:
            self.low += bound
            self.range -= bound
            c1 += 1
            n1[ctx] = c1
        else:
            self.range = bound
            c0 += 1
            n0[ctx] = c0
        if c0 + c1 >= _HALVE_AT:
            n0[ctx] = (c0 + 1) >> 1
            n1[ctx] = (c1 + 1) >> 1
        while self.range < _TOP:
            self._shift_low()
            self.range <<= 8

    def finish(self) -> bytes:
        for _ in range(5):
            self._shift_low()
        return bytes(self.out)


class RangeDecoder:
    def __init__(self, data: bytes, offset: int = 0):
        self.data = data
        self.pos = offset
        self.range = 0xFFFFFFFF
        code = 0
        for _ in range(5):
            code = ((code << 8) | self._byte()) & 0xFFFFFFFF
        self.code = code

    def _byte(self) -> int:
        # Zero-fill past the end: a well-formed stream never needs it, but the
        # final renormalizations may peek beyond the flush bytes.
        if self.pos < len(self.data):
            b = self.data[self.pos]
            self.pos += 1
            return b
        return 0

    def decode(self, ctxs: ContextSet, ctx: int) -> int:
        n0 = ctxs.n0
        n1 = ctxs.n1
        c0 = n0[ctx]
        c1 = n1[ctx]
        bound = (self.range // (c0 + c1)) * c0
        if self.code < bound:
            bit = 0
            self.range = bound
            c0 += 1
            n0[ctx] = c0
        else:
            bit = 1
            self.code -= bound
            self.range -= bound
            c1 += 1
            n1[ctx] = c1
        if c0 + c1 >= _HALVE_AT:
            n0[ctx] = (c0 + 1) >> 1
            n1[ctx] = (c1 + 1) >> 1
        while self.range < _TOP:
            self.code = ((self.code << 8) | self._byte()) & 0xFFFFFFFF
            self.range <<= 8
        return bit


def encode_symbol(enc: RangeEncoder, ctxs: ContextSet, pos: int, s: int):
    """Binarize one signed coefficient and encode its bins."""
    base = pos * CTX_PER_POS
    if s == 0:
        enc.encode(ctxs, base, 1)
        return
    if not SYMBOL_MIN <= s <= SYMBOL_MAX:
        raise ValueError(f"symbol {s} outside the 16-bit signed coding range")
    enc.encode(ctxs, base, 0)
    enc.encode(ctxs, base + 1, 1 if s < 0 else 0)
    v = -s if s < 0 else s
    k = v.bit_length() - 1
    p = base + _PREFIX_BASE
    for j in range(k):
        enc.encode(ctxs, p + j, 1)
    enc.encode(ctxs, p + k, 0)
    if k:
        q = base + _SUFFIX_BASE + k * (k - 1) // 2
        for j in range(k):
            enc.encode(ctxs, q + j, (v >> (k - 1 - j)) & 1)


def decode_symbol(dec: RangeDecoder, ctxs: ContextSet, pos: int) -> int:
    base = pos * CTX_PER_POS
    if dec.decode(ctxs, base):
        return 0
    negative = dec.decode(ctxs, base + 1)
    k = 0
    p = base + _PREFIX_BASE
    while dec.decode(ctxs, p + k):
        k += 1
        if k > _MAX_K:
            raise DecodeError("magnitude prefix exceeds the coding range; stream is corrupt")
    v = 1
    if k:
        q = base + _SUFFIX_BASE + k * (k - 1) // 2
        for j in range(k):
            v = (v << 1) | dec.decode(ctxs, q + j)
    return -v if negative else v


def _check_symbols(symbols: np.ndarray) -> np.ndarray:
    arr = np.asarray(symbols)
    if arr.ndim != 2:
        raise ValueError(f"expected a (count, n^2) symbol array, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        raise ValueError(f"symbols must be integers, got dtype {arr.dtype}")
    n = math.isqrt(arr.shape[1])
    if n * n != arr.shape[1] or n < 2:
        raise ValueError(f"symbol rows of length {arr.shape[1]} are not n^2 blocks")
    if arr.size and (arr.min() < SYMBOL_MIN or arr.max() > SYMBOL_MAX):
        raise ValueError("symbols outside the 16-bit signed coding range")
    return arr


def encode_blocks(symbols: np.ndarray) -> bytes:
    """Encode quantized blocks into a self-describing stream.

    Layout: magic "RDLS", version u16, mode u8 = 0, n u16, block count u32,
    then the range-coded payload.  All contexts start fresh and adapt over
    the stream in block order, position order within a block.
    """
    arr = _check_symbols(symbols)
    n = math.isqrt(arr.shape[1])
    header = MAGIC + struct.pack("<HBHI", STREAM_VERSION, 0, n, arr.shape[0])
    ctxs = ContextSet(arr.shape[1])
    enc = RangeEncoder()
    rows = arr.tolist()
    for row in rows:
        for pos, s in enumerate(row):
            encode_symbol(enc, ctxs, pos, s)
    return header + enc.finish()


def parse_stream_header(data: bytes):
    """Return (mode, n, count, payload_offset, num_candidates) for a stream."""
    if data[:4] != MAGIC:
        raise DecodeError(f"not a coefficient stream (bad magic {data[:4]!r})")
    try:
        version, mode, n, count = struct.unpack_from("<HBHI", data, 4)
    except struct.error as exc:
        raise DecodeError("truncated stream header") from exc
    if version != STREAM_VERSION:
        raise DecodeError(f"unsupported stream version {version}")
    if mode not in (0, 1):
        raise DecodeError(f"unknown stream mode {mode}")
    offset = 13
    ncand = 0
    if mode == 1:
        if len(data) < offset + 1:
            raise DecodeError("truncated stream header")
        ncand = data[offset]
        offset += 1
        if ncand < 1:
            raise DecodeError("candidate count must be at least 1")
    return mode, n, count, offset, ncand


def decode_blocks(data: bytes) -> np.ndarray:
    """Invert ``encode_blocks``; raises DecodeError on malformed input."""
    mode, n, count, offset, _ = parse_stream_header(data)
    if mode != 0:
        raise DecodeError("stream holds multi-transform payload; decode it with the MTS path")
    num = n * n
    ctxs = ContextSet(num)
    dec = RangeDecoder(data, offset)
    out = np.empty((count, num), dtype=np.int32)
    for b in range(count):
        row = out[b]
        for pos in range(num):
            row[pos] = decode_symbol(dec, ctxs, pos)
    return out


def _event_counts(arr: np.ndarray):
    """Per-context 0/1 event counts for one pass over a symbol array."""
    count, num = arr.shape
    size = num * CTX_PER_POS
    c0 = np.zeros(size, dtype=np.int64)
    c1 = np.zeros(size, dtype=np.int64)
    base = np.arange(num, dtype=np.int64) * CTX_PER_POS

    zeros = (arr == 0).sum(axis=0)
    c1[base] = zeros
    c0[base] = count - zeros

    nz_mask = arr != 0
    if not nz_mask.any():
        return c0, c1
    pos_idx = np.nonzero(nz_mask)[1].astype(np.int64)
    vals = arr[nz_mask].astype(np.int64)
    neg = vals < 0
    np.add.at(c1, base[pos_idx[neg]] + 1, 1)
    np.add.at(c0, base[pos_idx[~neg]] + 1, 1)

    mags = np.abs(vals)
    ks = np.frexp(mags.astype(np.float64))[1].astype(np.int64) - 1
    # Prefix bins: k ones then a zero at bin k.
    khist = np.zeros((num, _MAX_K + 1), dtype=np.int64)
    np.add.at(khist, (pos_idx, ks), 1)
    ones_above = khist[:, ::-1].cumsum(axis=1)[:, ::-1]  # ones_above[:, j] = #k >= j
    for j in range(_MAX_K + 1):
        ids = base + _PREFIX_BASE + j
        c0[ids] += khist[:, j]
        if j + 1 <= _MAX_K:
            c1[ids] += ones_above[:, j + 1]
    # Suffix bins, grouped by magnitude bit length.
    for k in range(1, _MAX_K + 1):
        sel = ks == k
        if not sel.any():
            continue
        v = mags[sel]
        p = pos_idx[sel]
        group = base[p] + _SUFFIX_BASE + k * (k - 1) // 2
        for j in range(k):
            bit = (v >> (k - 1 - j)) & 1
            np.add.at(c1, group[bit == 1] + j, 1)
            np.add.at(c0, group[bit == 0] + j, 1)
    return c0, c1


def warm_counts(symbols: np.ndarray) -> ContextSet:
    """Context state after adaptively coding ``symbols`` once, without coding.

    Equivalent to running the encoder over the array and keeping the counter
    state.  When no counter pair would reach the halving threshold the final
    counts are order-free and computed vectorized; otherwise the exact
    sequential update is replayed.
    """
    arr = _check_symbols(symbols)
    num = arr.shape[1]
    c0, c1 = _event_counts(arr)
    ctxs = ContextSet(num)
    if arr.size == 0:
        return ctxs
    if int((c0 + c1).max()) + 2 < _HALVE_AT:
        ctxs.n0 = (c0 + 1).tolist()
        ctxs.n1 = (c1 + 1).tolist()
        return ctxs
    # Halving would trigger; replay the order-dependent updates exactly.
    enc = RangeEncoder()
    for row in arr.tolist():
        for pos, s in enumerate(row):
            encode_symbol(enc, ctxs, pos, s)
    return ctxs


def estimate_block_bits(ctxs: ContextSet, symbols: np.ndarray) -> np.ndarray:
    """Ideal fractional bits per block under frozen context probabilities.

    This is the additive cost a range coder would approach if every block
    were coded with the counts held at their current values; it is what the
    per-block transform selection optimizes.
    """
    arr = _check_symbols(symbols)
    count, num = arr.shape
    if num != ctxs.num_positions:
        raise ValueError(
            f"context set covers {ctxs.num_positions} positions, symbols have {num}"
        )
    cost0, cost1 = ctxs.bit_costs()
    base = np.arange(num, dtype=np.int64) * CTX_PER_POS
    zero_mask = arr == 0
    bits = np.where(zero_mask, cost1[base][None, :], cost0[base][None, :])

    nz_mask = ~zero_mask
    if nz_mask.any():
        blk_idx, pos_idx = np.nonzero(nz_mask)
        vals = arr[nz_mask].astype(np.int64)
        neg = vals < 0
        sign_ids = base[pos_idx] + 1
        bits[blk_idx, pos_idx] += np.where(neg, cost1[sign_ids], cost0[sign_ids])
        mags = np.abs(vals)
        ks = np.frexp(mags.astype(np.float64))[1].astype(np.int64) - 1
        # Prefix: cumulative cost of the ones plus the terminating zero.
        prefix_one = cost1[(base[:, None] + _PREFIX_BASE + np.arange(_MAX_K + 1)[None, :])]
        prefix_cum = np.concatenate(
            [np.zeros((num, 1)), prefix_one.cumsum(axis=1)], axis=1
        )
        bits[blk_idx, pos_idx] += prefix_cum[pos_idx, ks]
        bits[blk_idx, pos_idx] += cost0[base[pos_idx] + _PREFIX_BASE + ks]
        for k in range(1, _MAX_K + 1):
            sel = ks == k
            if not sel.any():
                continue
            v = mags[sel]
            group = base[pos_idx[sel]] + _SUFFIX_BASE + k * (k - 1) // 2
            bsel = (blk_idx[sel], pos_idx[sel])
            for j in range(k):
                bit = (v >> (k - 1 - j)) & 1
                bits[bsel] += np.where(bit == 1, cost1[group + j], cost0[group + j])
    return bits.sum(axis=1)
