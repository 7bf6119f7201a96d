"""Quantized CDF tables and a byte-oriented range coder.

Every coded element gets its own table over a contiguous symbol support
``[lo, lo + nbins)``. The two extreme bins absorb the distribution tails and
act as escapes: a symbol at or beyond an extreme bin is coded as that bin
followed by its distance from the bin in Exp-Golomb bypass bits. Symbols must
lie in the global window ``[-128, 127]``.
"""
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, ndtr

__all__ = [
    "PRECISION",
    "WINDOW",
    "CoderError",
    "TruncatedStreamError",
    "CdfTables",
    "build_cdf",
    "snap",
    "RangeEncoder",
    "RangeDecoder",
    "range_encode",
    "range_decode",
    "table_bits",
]

PRECISION = 16
WINDOW = (-128, 127)
GRID = 1e-4
SIGMA_MIN = 1e-3

_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF
_ROWS_PER_BLOCK = 4096


class CoderError(ValueError):
    """Invalid symbol or corrupt coded data."""


class TruncatedStreamError(CoderError):
    """The decoder ran past the end of its input."""


def snap(values, grid: float = GRID):
    """Round to a fixed grid (ties away from zero) so both coder ends build identical tables."""
    v = np.asarray(values, dtype=np.float64) / grid
    return np.sign(v) * np.floor(np.abs(v) + 0.5) * grid


@dataclass
class CdfTables:
    """A batch of ragged CDF tables stored back to back.

    Row ``i`` covers symbols ``lo[i] .. lo[i] + nbins[i] - 1`` and its cumulative
    counts are ``cdf[offsets[i] : offsets[i] + nbins[i] + 1]`` (first 0, last
    ``2**precision``).
    """

    lo: np.ndarray
    nbins: np.ndarray
    offsets: np.ndarray
    cdf: np.ndarray
    precision: int = PRECISION

    def __len__(self):
        return len(self.lo)

    def row(self, i):
        o = self.offsets[i]
        return self.cdf[o:o + self.nbins[i] + 1]

    def probabilities(self, i):
        return np.diff(self.row(i)) / float(1 << self.precision)


def _quantize_rows(mass, valid, total):
    counts = np.where(valid, np.maximum(1, np.floor(mass * total + 0.5)), 0).astype(np.int64)
    diff = total - counts.sum(axis=1)
    mode = np.argmax(np.where(valid, mass, -1.0), axis=1)
    rows = np.arange(len(counts))
    counts[rows, mode] += diff
    for r in np.flatnonzero(counts[rows, mode] < 1):
        # rare: the mode cannot absorb the excess, take it from the largest bins
        counts[r, mode[r]] = 1
        excess = counts[r].sum() - total
        while excess > 0:
            j = np.argmax(counts[r])
            take = min(excess, counts[r, j] - 1)
            counts[r, j] -= take
            excess -= take
    return counts


def build_cdf(mu, sigma, precision: int = PRECISION, family: str = "gaussian",
              window=WINDOW, tail: float = 12.0) -> CdfTables:
    """Quantized CDF tables for discretized Gaussian (or logistic) distributions.

    ``mu`` and ``sigma`` (the logistic scale for ``family="logistic"``) are
    snapped to a 1e-4 grid first. The support of each table covers
    ``mu +/- max(tail * sigma, 2)`` clipped to ``window``; all counts are at
    least 1 and sum to ``2**precision``.
    """
    mu = snap(np.ravel(mu))
    sigma = np.maximum(snap(np.ravel(sigma)), SIGMA_MIN)
    if mu.shape != sigma.shape:
        raise ValueError("mu and sigma must have the same number of elements")
    w_lo, w_hi = window
    if w_hi <= w_lo:
        raise ValueError("empty symbol window")
    cdf_fn = ndtr if family == "gaussian" else expit
    if family not in ("gaussian", "logistic"):
        raise ValueError(f"unknown family {family!r}")
    total = 1 << precision

    radius = np.maximum(tail * sigma, 2.0)
    centre = np.clip(mu, w_lo, w_hi)
    lo = np.clip(np.floor(centre - radius), w_lo, w_hi).astype(np.int64)
    hi = np.clip(np.ceil(centre + radius), w_lo, w_hi).astype(np.int64)
    lo = np.where(lo == hi, np.minimum(lo, w_hi - 1), lo)
    hi = np.maximum(hi, lo + 1)
    nbins = hi - lo + 1
    if (nbins > total).any():
        raise ValueError("support wider than the CDF precision allows")

    offsets = np.concatenate([[0], np.cumsum(nbins + 1)])
    cdf = np.empty(offsets[-1], dtype=np.int64)
    for start in range(0, len(mu), _ROWS_PER_BLOCK):
        sl = slice(start, start + _ROWS_PER_BLOCK)
        nb = nbins[sl]
        k = np.arange(nb.max())[None, :]
        valid = k < nb[:, None]
        sym = lo[sl, None] + k
        upper = cdf_fn((sym + 0.5 - mu[sl, None]) / sigma[sl, None])
        lower = cdf_fn((sym - 0.5 - mu[sl, None]) / sigma[sl, None])
        upper = np.where(k == nb[:, None] - 1, 1.0, upper)
        lower = np.where(k == 0, 0.0, lower)
        counts = _quantize_rows(upper - lower, valid, total)
        padded = np.concatenate([np.zeros((len(nb), 1), np.int64), np.cumsum(counts, axis=1)], axis=1)
        keep = np.concatenate([np.ones((len(nb), 1), bool), valid], axis=1)
        o = offsets[start]
        cdf[o:o + keep.sum()] = padded[keep]
    return CdfTables(lo.astype(np.int32), nbins.astype(np.int32), offsets, cdf, precision)


class RangeEncoder:
    """32-bit range encoder with carry propagation (byte output)."""

    def __init__(self, precision: int = PRECISION):
        self.precision = precision
        self.low = 0
        self.range = _MASK32
        self._cache = 0
        self._cache_size = 1
        self._out = bytearray()

    def encode(self, start: int, size: int):
        r = self.range >> self.precision
        self.low += r * start
        self.range = r * size
        while self.range < _TOP:
            self.range <<= 8
            self._shift_low()

    def encode_bit(self, bit: int):
        half = 1 << (self.precision - 1)
        self.encode(half if bit else 0, half)

    def _shift_low(self):
        low = self.low
        if low < 0xFF000000 or low > _MASK32:
            carry = low >> 32
            temp = self._cache
            while True:
                self._out.append((temp + carry) & 0xFF)
                temp = 0xFF
                self._cache_size -= 1
                if not self._cache_size:
                    break
            self._cache = (low >> 24) & 0xFF
        self._cache_size += 1
        self.low = (low & 0x00FFFFFF) << 8

    def finish(self) -> bytes:
        for _ in range(5):
            self._shift_low()
        # the first byte is the integer part of a code value in [0, 1): always zero
        return bytes(self._out[1:])


class RangeDecoder:
    def __init__(self, data: bytes, precision: int = PRECISION):
        self.precision = precision
        self._data = data
        self._pos = 0
        self.range = _MASK32
        self.code = 0
        for _ in range(4):
            self.code = ((self.code << 8) | self._next()) & _MASK32

    def _next(self):
        if self._pos >= len(self._data):
            raise TruncatedStreamError("range decoder ran past the end of the stream")
        b = self._data[self._pos]
        self._pos += 1
        return b

    @property
    def consumed(self):
        return self._pos

    def target(self) -> int:
        """Cumulative count the next symbol's interval must contain."""
        self._r = self.range >> self.precision
        value = self.code // self._r
        if value >= 1 << self.precision:
            raise CoderError("corrupt range-coded data")
        return value

    def consume(self, start: int, size: int):
        self.code -= start * self._r
        self.range = self._r * size
        while self.range < _TOP:
            self.code = ((self.code << 8) | self._next()) & _MASK32
            self.range <<= 8

    def decode_bit(self) -> int:
        half = 1 << (self.precision - 1)
        bit = int(self.target() >= half)
        self.consume(half if bit else 0, half)
        return bit


def _encode_escape(enc, value):
    v = value + 1
    n = v.bit_length() - 1
    for _ in range(n):
        enc.encode_bit(0)
    for shift in range(n, -1, -1):
        enc.encode_bit((v >> shift) & 1)


def _decode_escape(dec):
    n = 0
    while not dec.decode_bit():
        n += 1
        if n > 16:
            raise CoderError("corrupt escape code")
    v = 1
    for _ in range(n):
        v = (v << 1) | dec.decode_bit()
    return v - 1


def range_encode(symbols, tables: CdfTables) -> bytes:
    """Encode one integer symbol per table row."""
    symbols = np.asarray(symbols).ravel()
    if len(symbols) != len(tables):
        raise CoderError(f"{len(symbols)} symbols for {len(tables)} tables")
    if len(symbols) and (symbols.min() < WINDOW[0] or symbols.max() > WINDOW[1]):
        raise CoderError(f"symbol outside the coding window {WINDOW}")
    enc = RangeEncoder(tables.precision)
    cdf, offsets, lo, nbins = tables.cdf, tables.offsets, tables.lo, tables.nbins
    for i, s in enumerate(symbols.tolist()):
        last = int(nbins[i]) - 1
        idx = s - int(lo[i])
        escape = None
        if idx <= 0:
            idx, escape = 0, -idx
        elif idx >= last:
            idx, escape = last, idx - last
        o = int(offsets[i]) + idx
        start = int(cdf[o])
        enc.encode(start, int(cdf[o + 1]) - start)
        if escape is not None:
            _encode_escape(enc, escape)
    return enc.finish()


def range_decode(data: bytes, tables: CdfTables) -> np.ndarray:
    """Inverse of :func:`range_encode`; raises :class:`TruncatedStreamError` on short input."""
    dec = RangeDecoder(data, tables.precision)
    out = np.empty(len(tables), dtype=np.int64)
    cdf, offsets, lo, nbins = tables.cdf, tables.offsets, tables.lo, tables.nbins
    for i in range(len(tables)):
        o = int(offsets[i])
        n = int(nbins[i])
        row = cdf[o:o + n + 1]
        t = dec.target()
        idx = int(np.searchsorted(row, t, side="right")) - 1
        start = int(row[idx])
        dec.consume(start, int(row[idx + 1]) - start)
        s = int(lo[i]) + idx
        if idx == 0:
            s -= _decode_escape(dec)
        elif idx == n - 1:
            s += _decode_escape(dec)
        if not WINDOW[0] <= s <= WINDOW[1]:
            raise CoderError("decoded symbol outside the coding window")
        out[i] = s
    return out


def table_bits(symbols, tables: CdfTables) -> float:
    """Ideal code length in bits of ``symbols`` under the quantized tables, escapes included."""
    symbols = np.asarray(symbols, dtype=np.int64).ravel()
    idx = symbols - tables.lo
    last = tables.nbins.astype(np.int64) - 1
    escape = np.where(idx <= 0, -idx, np.where(idx >= last, idx - last, -1))
    idx = np.clip(idx, 0, last)
    pos = tables.offsets[:-1] + idx
    counts = tables.cdf[pos + 1] - tables.cdf[pos]
    bits = np.sum(tables.precision - np.log2(counts))
    esc = escape[escape >= 0] + 1
    bits += np.sum(2 * np.floor(np.log2(esc)) + 1)
    return float(bits)
