"""Exact sampling from the discretized, clamped normal via uniform integers.

A single zero-centred offset table serves every pixel value: the noisy pixel is
``clamp(x + t)`` with ``t`` drawn by thresholding a uniform ``n_bits`` integer
against the breaking points.  Uniform integers come from Philox4x64-10, a
counter-based generator keyed by ``(seed, stream)``; its quality is a trust
assumption, just like the fair coin the soundness argument starts from.

A draw that lands on a breaking point is a Failure at the table level.  For a
given pixel it is harmless when both candidate offsets clamp to the same
value, so failures are resolved per pixel when the buffer is applied.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .binio import FormatError, Reader, ValidationError, seal, unseal
from .exact_tables import BreakingPointTable, GridSpec, _read_spec_header, _spec_header

NOISE_MAGIC = b"SNDNOISE"
NOISE_VERSION = 1


class _Failure:
    def __repr__(self) -> str:
        return "FAILURE"


FAILURE = _Failure()


class SpecMismatchError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class QuantizedImage:
    """Integer intensities in {0, ..., L}."""

    pixels: np.ndarray
    L: int = 255

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels)
        if px.ndim != 1:
            px = px.reshape(-1)
        if not np.issubdtype(px.dtype, np.integer):
            if not np.all(np.equal(np.mod(px, 1), 0)):
                raise ValueError("pixels must be integers")
        px = px.astype(np.int64)
        if px.size and (px.min() < 0 or px.max() > self.L):
            raise ValueError(f"pixels must lie in [0, {self.L}]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def d(self) -> int:
        return int(self.pixels.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, QuantizedImage):
            return NotImplemented
        return self.L == other.L and np.array_equal(self.pixels, other.pixels)

    def __hash__(self) -> int:
        return hash((self.L, self.pixels.tobytes()))


def _round_half_even(q: Fraction) -> int:
    return round(q)


def quantize_gk(x, spec: GridSpec) -> np.ndarray:
    """Nearest grid index of each coordinate (ties to even), clamped to [-k, k + L].

    Input is in normalized units; the rounding is done on exact rationals so it
    does not depend on how ``x * L`` would round in floating point.
    """
    arr = np.asarray(x, dtype=float).reshape(-1)
    if np.isnan(arr).any():
        raise ValueError("cannot quantize NaN")
    out = np.empty(arr.size, dtype=np.int64)
    lo, hi = spec.clamp_lo, spec.clamp_hi
    for i, v in enumerate(arr.tolist()):
        if v == float("inf"):
            out[i] = hi
        elif v == float("-inf"):
            out[i] = lo
        else:
            out[i] = min(hi, max(lo, _round_half_even(Fraction(v) * spec.L)))
    return out


def draw_offset(u: int, table: BreakingPointTable):
    """Offset (grid steps) for one uniform draw, or FAILURE on a breaking point."""
    if not 0 <= u < 1 << table.spec.n_bits:
        raise ValueError("uniform draw out of range")
    lo, hi = table.locate(np.array([u], dtype=np.uint64))
    if lo[0] != hi[0]:
        return FAILURE
    return table.spec.t_min + int(lo[0])


def shift_clamp(x, offset, spec: GridSpec):
    """max(-k, min(k + L, x + offset)), elementwise."""
    return np.clip(np.asarray(x) + np.asarray(offset), spec.clamp_lo, spec.clamp_hi)


def _philox(seed: int, stream: int) -> np.random.Philox:
    return np.random.Philox(key=np.array([seed & (2**64 - 1), stream & (2**64 - 1)], dtype=np.uint64))


def uniform_draws(seed: int, stream: int, count: int, n_bits: int = 64) -> np.ndarray:
    raw = _philox(seed, stream).random_raw(count)
    if n_bits < 64:
        raw = raw >> np.uint64(64 - n_bits)
    return raw


@dataclass(frozen=True, eq=False)
class NoiseBuffer:
    """``n`` draws of a ``d``-dimensional offset vector, generated once and reused.

    ``index`` holds the (lower) candidate offset index for every coordinate;
    coordinates whose draw hit a breaking point are listed in ``fail_flat``
    (flat position) with their upper candidate in ``fail_hi``.
    """

    spec: GridSpec
    seed: int
    stream: int
    index: np.ndarray
    fail_flat: np.ndarray
    fail_hi: np.ndarray

    @property
    def n(self) -> int:
        return int(self.index.shape[0])

    @property
    def d(self) -> int:
        return int(self.index.shape[1])

    def __eq__(self, other) -> bool:
        if not isinstance(other, NoiseBuffer):
            return NotImplemented
        return (self.spec == other.spec and self.seed == other.seed and self.stream == other.stream
                and np.array_equal(self.index, other.index)
                and np.array_equal(self.fail_flat, other.fail_flat)
                and np.array_equal(self.fail_hi, other.fail_hi))

    def offsets(self) -> np.ndarray:
        """Lower candidate offsets in grid steps, shape (n, d)."""
        return self.index.astype(np.int64) + self.spec.t_min

    def apply(self, x: QuantizedImage, rows: slice = slice(None)) -> tuple[np.ndarray, np.ndarray]:
        """Noisy grid values ``clamp(x + t)`` and a per-row failure mask."""
        if x.d != self.d:
            raise SpecMismatchError(f"image has d={x.d}, buffer has d={self.d}")
        if x.L != self.spec.L:
            raise SpecMismatchError(f"image has L={x.L}, buffer grid has L={self.spec.L}")
        start, stop, _ = rows.indices(self.n)
        idx = self.index[start:stop].astype(np.int64)
        vals = shift_clamp(x.pixels[None, :], idx + self.spec.t_min, self.spec)
        failed = np.zeros(stop - start, dtype=bool)
        if self.fail_flat.size:
            lo_flat, hi_flat = start * self.d, stop * self.d
            sel = (self.fail_flat >= lo_flat) & (self.fail_flat < hi_flat)
            if sel.any():
                flat = self.fail_flat[sel] - lo_flat
                r, c = np.divmod(flat, self.d)
                upper = shift_clamp(x.pixels[c], self.fail_hi[sel].astype(np.int64) + self.spec.t_min, self.spec)
                unresolved = upper != vals[r, c]
                failed[r[unresolved]] = True
        return vals, failed

    def with_failures(self, mask: np.ndarray) -> "NoiseBuffer":
        """Copy in which every coordinate selected by ``mask`` becomes an unresolvable Failure."""
        mask = np.asarray(mask, dtype=bool).reshape(self.index.shape)
        index = self.index.copy()
        flat = np.flatnonzero(mask)
        # widest possible candidate range: clamps differ for every pixel value
        index.reshape(-1)[flat] = 0
        hi = np.full(flat.size, 2 * self.spec.t_max, dtype=np.int64)
        keep = ~np.isin(self.fail_flat, flat)
        fail_flat = np.concatenate([self.fail_flat[keep], flat])
        fail_hi = np.concatenate([self.fail_hi[keep].astype(np.int64), hi])
        order = np.argsort(fail_flat, kind="stable")
        return NoiseBuffer(self.spec, self.seed, self.stream, index, fail_flat[order].astype(np.int64),
                           fail_hi[order].astype(np.int64))


def _index_dtype(spec: GridSpec):
    return np.int16 if spec.n_entries <= np.iinfo(np.int16).max else np.int32


def build_noise_buffer(table: BreakingPointTable, n: int, d: int = 1, seed: int = 0, stream: int = 0,
                       chunk: int = 1 << 20) -> NoiseBuffer:
    if n < 1 or d < 1:
        raise ValueError("n and d must be positive")
    spec = table.spec
    total = n * d
    gen = _philox(seed, stream)
    index = np.empty(total, dtype=_index_dtype(spec))
    fail_flat, fail_hi = [], []
    for start in range(0, total, chunk):
        count = min(chunk, total - start)
        u = gen.random_raw(count)
        if spec.n_bits < 64:
            u = u >> np.uint64(64 - spec.n_bits)
        lo, hi = table.locate(u)
        index[start:start + count] = lo
        bad = np.flatnonzero(lo != hi)
        if bad.size:
            fail_flat.append(bad + start)
            fail_hi.append(hi[bad])
    ff = np.concatenate(fail_flat).astype(np.int64) if fail_flat else np.zeros(0, dtype=np.int64)
    fh = np.concatenate(fail_hi).astype(np.int64) if fail_hi else np.zeros(0, dtype=np.int64)
    return NoiseBuffer(spec, seed, stream, index.reshape(n, d), ff, fh)


# -- file format ----------------------------------------------------------------


def noise_to_bytes(buf: NoiseBuffer) -> bytes:
    idx = buf.index
    width = 2 if idx.dtype == np.int16 else 4
    head = NOISE_MAGIC + _spec_header(buf.spec, NOISE_VERSION, buf.n)
    head += struct.pack("<QQQBQ", buf.seed, buf.stream, buf.d, width, buf.fail_flat.size)
    body = idx.astype("<u2" if width == 2 else "<u4").tobytes()
    fails = np.empty(buf.fail_flat.size, dtype=[("flat", "<u8"), ("hi", "<u4")])
    fails["flat"] = buf.fail_flat
    fails["hi"] = buf.fail_hi
    return seal(head + body + fails.tobytes())


def noise_from_bytes(data: bytes) -> NoiseBuffer:
    payload = unseal(data)
    r = Reader(payload)
    spec, n = _read_spec_header(r, NOISE_MAGIC, NOISE_VERSION)
    seed, stream, d, width, n_fail = r.unpack("QQQBQ")
    if width not in (2, 4):
        raise FormatError(f"bad index width {width}")
    raw = r.take(n * d * width)
    idx = np.frombuffer(raw, dtype="<u2" if width == 2 else "<u4").astype(_index_dtype(spec)).reshape(n, d)
    fails = np.frombuffer(r.take(n_fail * 12), dtype=[("flat", "<u8"), ("hi", "<u4")])
    if r.pos != len(payload):
        raise FormatError("trailing bytes after noise buffer")
    if idx.size and int(idx.max()) >= spec.n_entries:
        raise ValidationError("offset index outside the table")
    fail_flat = fails["flat"].astype(np.int64)
    if fail_flat.size and (fail_flat.max() >= n * d or np.any(np.diff(fail_flat) <= 0)):
        raise ValidationError("failure positions out of range or unsorted")
    return NoiseBuffer(spec, seed, stream, idx, fail_flat, fails["hi"].astype(np.int64))


def write_noise(buf: NoiseBuffer, path) -> None:
    Path(path).write_bytes(noise_to_bytes(buf))


def read_noise(path) -> NoiseBuffer:
    return noise_from_bytes(Path(path).read_bytes())
