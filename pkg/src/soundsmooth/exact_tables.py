"""Breaking-point tables for the discretized, truncated normal distribution.

Everything here is exact: the normal CDF is enclosed between two dyadic
rationals with big-integer fixed-point arithmetic (Taylor series of erf with an
alternating-series remainder, Machin's formula for pi), so every stored
threshold is the provably correct ceiling or is explicitly flagged ambiguous.

Offsets are kept in integer grid units.  For a grid with intensities 0..L and
clamp margin k (in grid steps) the noisy value is clamped to [-k, k + L]; the
zero-centred offset table therefore has to cover [-(k + L), k + L], with both
end cells absorbing their tails.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from .binio import FormatError, Reader, ValidationError, pack_bitset, seal, unpack_bitset, unseal

TABLE_MAGIC = b"SNDSMOTH"
TABLE_VERSION = 1
ALLOWED_BITS = (8, 16, 32, 64)

# extra enclosure bits beyond n_bits when deciding a ceiling
TARGET_GUARD_BITS = 16
# further tightening attempts before an entry is declared ambiguous
RETRY_BITS = (48, 112)


@dataclass(frozen=True)
class GridSpec:
    """Quantization grid and noise level of the sound sampler.

    ``L`` intensity levels 0..L, clamp margin ``k`` in grid steps, ``sigma`` in
    normalized units (intensity 1.0 == L grid steps), ``n_bits``-wide uniform draws.
    """

    L: int = 255
    k: int = 6 * 255
    sigma: Fraction = Fraction(1, 2)
    n_bits: int = 64

    def __post_init__(self) -> None:
        object.__setattr__(self, "sigma", Fraction(self.sigma))
        if self.L < 1:
            raise ValueError("L must be >= 1")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.n_bits not in ALLOWED_BITS:
            raise ValueError(f"n_bits must be one of {ALLOWED_BITS}")

    @classmethod
    def normalized(cls, L: int = 255, k: Fraction | int = 6, sigma=Fraction(1, 2), n_bits: int = 64) -> "GridSpec":
        """Build from a clamp margin expressed in intensity units (k=6 means 6*L steps)."""
        steps = Fraction(k) * L
        if steps.denominator != 1:
            raise ValueError(f"k * L = {steps} is not an integer number of grid steps")
        return cls(L=L, k=int(steps), sigma=Fraction(sigma), n_bits=n_bits)

    @property
    def sigma_int(self) -> Fraction:
        """Standard deviation in grid steps."""
        return self.sigma * self.L

    @property
    def t_max(self) -> int:
        return self.k + self.L

    @property
    def t_min(self) -> int:
        return -self.t_max

    @property
    def clamp_lo(self) -> int:
        return -self.k

    @property
    def clamp_hi(self) -> int:
        return self.k + self.L

    @property
    def n_entries(self) -> int:
        return 2 * self.t_max + 1


# -- arbitrary-precision constants ------------------------------------------


def _arctan_inv(m: int, prec: int) -> tuple[int, int]:
    """Fixed-point arctan(1/m) * 2**prec and an absolute error bound (in ulps)."""
    total, k, m2 = 0, 0, m * m
    power = m  # m**(2k+1)
    one = 1 << prec
    while True:
        term = one // ((2 * k + 1) * power)
        if term == 0:
            break
        total += -term if k & 1 else term
        k += 1
        power *= m2
    # one truncation per term plus the alternating remainder (< 1 ulp)
    return total, k + 1


@lru_cache(maxsize=32)
def _inv_sqrt_2pi_bounds(prec: int) -> tuple[int, int]:
    """Integers lo, hi with lo <= 2**prec / sqrt(2 pi) <= hi."""
    g = prec + 16
    a5, e5 = _arctan_inv(5, g)
    a239, e239 = _arctan_inv(239, g)
    pi_mid = 16 * a5 - 4 * a239
    err = 16 * e5 + 4 * e239
    two_pi_lo, two_pi_hi = 2 * (pi_mid - err), 2 * (pi_mid + err)
    # sqrt(2 pi) * 2**g
    s_lo = math.isqrt(two_pi_lo << g)
    s_hi = math.isqrt(two_pi_hi << g) + 1
    scale = 1 << (g + prec)
    c_lo = scale // s_hi
    c_hi = -(-scale // s_lo)
    return c_lo, c_hi


# -- CDF enclosure ------------------------------------------------------------


def _erf_series_bounds(y: Fraction, prec: int) -> tuple[int, int]:
    """Bounds on S(y) = sum_n (-y)**n / (n! (2n+1)), scaled by 2**prec.

    For z with y = z**2 / 2, Phi(z) = 1/2 + z * S(y) / sqrt(2 pi).
    """
    py, qy = y.numerator, y.denominator
    a_lo = a_hi = 1 << prec
    s_lo = s_hi = a_lo
    n = 0
    while True:
        n += 1
        a_lo = (a_lo * py) // (qy * n)
        a_hi = -(-(a_hi * py) // (qy * n))
        t_lo = a_lo // (2 * n + 1)
        t_hi = -(-a_hi // (2 * n + 1))
        if n & 1:
            s_lo -= t_hi
            s_hi -= t_lo
        else:
            s_lo += t_lo
            s_hi += t_hi
        if n > y and t_hi <= 1:
            # alternating, decreasing tail: remainder bounded by the next term
            a_next = -(-(a_hi * py) // (qy * (n + 1)))
            r = -(-a_next // (2 * n + 3))
            return s_lo - r, s_hi + r


def _tail_is_negligible(y: Fraction, w: int) -> bool:
    """True if Phi(-|z|) <= 2**-(w+1), via Phi(-z) <= exp(-z^2/2) for z >= 1.

    exp(-y) <= 2**-m whenever y >= 0.7 m, since 0.7 > ln 2.
    """
    return y >= Fraction(7, 10) * (w + 1) and y >= Fraction(1, 2)


def std_normal_cdf_enclosure(z: Fraction, w: int) -> tuple[Fraction, Fraction]:
    """[lo, hi] with lo <= Phi(z) <= hi and hi - lo <= 2**-w."""
    z = Fraction(z)
    if z == 0:
        half = Fraction(1, 2)
        return half, half
    y = z * z / 2
    if _tail_is_negligible(y, w):
        tiny = Fraction(1, 1 << (w + 1))
        return (Fraction(0), tiny) if z < 0 else (1 - tiny, Fraction(1))
    # truncation errors in the term recursion are amplified by up to ~e**y
    prec = w + 16 + max(0, abs(z).numerator.bit_length() - abs(z).denominator.bit_length() + 1)
    prec += math.ceil(y * Fraction(3, 2))
    while True:
        s_lo, s_hi = _erf_series_bounds(y, prec)
        c_lo, c_hi = _inv_sqrt_2pi_bounds(prec)
        products = (c_lo * s_lo, c_lo * s_hi, c_hi * s_lo, c_hi * s_hi)
        p_lo, p_hi = min(products), max(products)
        scale = Fraction(1, 1 << (2 * prec))
        if z > 0:
            lo, hi = z * p_lo * scale, z * p_hi * scale
        else:
            lo, hi = z * p_hi * scale, z * p_lo * scale
        lo, hi = max(Fraction(0), Fraction(1, 2) + lo), min(Fraction(1), Fraction(1, 2) + hi)
        if hi - lo <= Fraction(1, 1 << w):
            return lo, hi
        prec += 16


def gaussian_cdf_enclosure(x, sigma, w: int) -> tuple[Fraction, Fraction]:
    """Enclose P[N(0, sigma^2) <= x] to width 2**-w; x and sigma are exact rationals."""
    sigma = Fraction(sigma)
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if w < 1:
        raise ValueError("w must be >= 1")
    return std_normal_cdf_enclosure(Fraction(x) / sigma, w)


# -- the table ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BreakingPointTable:
    """Ceilings ``2**n_bits * P[t <= i]`` for offsets i = t_min .. t_max - 1.

    ``thresholds`` has ``spec.n_entries`` items; the last one is the sentinel
    ``2**n_bits``.  ``ambiguous[j]`` marks entries whose enclosure could not
    separate two candidate ceilings; for those the true ceiling is
    ``thresholds[j]`` or ``thresholds[j] + 1``.
    """

    spec: GridSpec
    thresholds: tuple[int, ...]
    ambiguous: tuple[bool, ...] = field(default=())

    def __post_init__(self) -> None:
        if not self.ambiguous:
            object.__setattr__(self, "ambiguous", (False,) * len(self.thresholds))
        validate_table(self)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BreakingPointTable):
            return NotImplemented
        return (self.spec, self.thresholds, self.ambiguous) == (other.spec, other.thresholds, other.ambiguous)

    def __len__(self) -> int:
        return len(self.thresholds)

    @property
    def offsets(self) -> range:
        return range(self.spec.t_min, self.spec.t_max + 1)

    @cached_property
    def _ceiling_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Monotone lower/upper bounds on each true ceiling, each minus one.

        The true ceilings are nondecreasing, so a running max of the lower
        candidates and a running min (from the right) of the upper candidates
        are still valid bounds.  Stored minus one so 2**64 fits in uint64.
        """
        top = 1 << self.spec.n_bits
        t = self.thresholds[:-1]
        lower, upper = [], []
        run = 0
        for v in t:
            run = max(run, v)
            lower.append(run - 1)
        run = top
        for v, amb in zip(reversed(t), reversed(self.ambiguous[:-1])):
            run = min(run, min(top, v + int(amb)))
            upper.append(run - 1)
        upper.reverse()
        return np.array(lower, dtype=np.uint64), np.array(upper, dtype=np.uint64)

    def locate(self, u) -> tuple[np.ndarray, np.ndarray]:
        """Candidate offset-index range [lo, hi] for uniform draws ``u``.

        A draw equal to a ceiling is a boundary hit; otherwise the index is the
        number of ceilings below the draw.  ``lo == hi`` means the draw maps to
        a single offset.
        """
        u = np.asarray(u, dtype=np.uint64)
        lower_m1, upper_m1 = self._ceiling_bounds
        hi = np.searchsorted(lower_m1, u, side="left")  # #{ceiling <= u}
        u_m1 = np.maximum(u, np.uint64(1)) - np.uint64(1)
        lo = np.searchsorted(upper_m1, u_m1, side="left")  # #{ceiling < u}
        return lo, hi

    def failure_values(self) -> list[int]:
        """All draws in [0, 2**n_bits) that do not map to a single offset."""
        lower_m1, upper_m1 = self._ceiling_bounds
        top = 1 << self.spec.n_bits
        out: set[int] = set()
        for lo_m1, up_m1 in zip(lower_m1.tolist(), upper_m1.tolist()):
            # a ceiling c hit by u == c, with c in [lower, upper]
            for v in range(lo_m1 + 1, min(up_m1 + 1, top - 1) + 1):
                out.add(v)
        return sorted(out)


def validate_table(table: BreakingPointTable) -> None:
    spec, t = table.spec, table.thresholds
    top = 1 << spec.n_bits
    if len(t) != spec.n_entries:
        raise ValidationError(f"expected {spec.n_entries} thresholds, got {len(t)}")
    if len(table.ambiguous) != len(t):
        raise ValidationError("ambiguity flags do not match the thresholds")
    if t[-1] != top:
        raise ValidationError("final threshold must equal 2**n_bits")
    if any(v < 1 or v > top for v in t):
        raise ValidationError("thresholds must lie in [1, 2**n_bits]")
    if any(b < a for a, b in zip(t, t[1:])):
        raise ValidationError("thresholds are not nondecreasing")


def _ceiling_of(spec: GridSpec, i: int) -> tuple[int, bool, bool]:
    """ceil(2**n * P[t <= i]), whether it is ambiguous, and whether the value
    could be exactly that integer over 2**n (which breaks mirroring)."""
    n = spec.n_bits
    x = Fraction(2 * i + 1, 2)
    for extra in (TARGET_GUARD_BITS,) + RETRY_BITS:
        lo, hi = gaussian_cdf_enclosure(x, spec.sigma_int, n + extra)
        c_lo = max(1, math.ceil(lo * (1 << n)))
        c_hi = max(1, math.ceil(hi * (1 << n)))
        if c_lo == c_hi:
            touches = hi < 1 and (hi * (1 << n)).denominator == 1
            return c_lo, False, touches
    return c_lo, True, False


@lru_cache(maxsize=16)
def build_table(spec: GridSpec) -> BreakingPointTable:
    """Exact breaking points of the zero-centred offset distribution.

    Uses P[t <= -j-1] = 1 - P[t <= j] to evaluate only the nonnegative half;
    ceil(2**n (1 - c)) = 2**n + 1 - ceil(2**n c) unless 2**n c is an integer,
    which the enclosure rules out for unambiguous entries.
    """
    top = 1 << spec.n_bits
    by_i: dict[int, tuple[int, bool, bool]] = {}
    for i in range(0, spec.t_max):
        by_i[i] = _ceiling_of(spec, i)
    for i in range(spec.t_min, 0):
        c, amb, touches = by_i[-i - 1]
        if touches:
            by_i[i] = _ceiling_of(spec, i)
        elif amb:
            # c_true in {c, c+1}  =>  mirrored ceiling in {top - c, top + 1 - c}
            by_i[i] = (max(1, top - c), True, False)
        else:
            by_i[i] = (max(1, top + 1 - c), False, False)
    thresholds = [by_i[i] for i in range(spec.t_min, spec.t_max)]
    return BreakingPointTable(
        spec,
        tuple(c for c, _, _ in thresholds) + (top,),
        tuple(a for _, a, _ in thresholds) + (False,),
    )


# -- file format ----------------------------------------------------------------

_HEADER = "HBIIQQQ"  # version, n_bits, L, k, sigma num, sigma den, entry count


def _spec_header(spec: GridSpec, version: int, count: int) -> bytes:
    return struct.pack("<" + _HEADER, version, spec.n_bits, spec.L, spec.k,
                       spec.sigma.numerator, spec.sigma.denominator, count)


def _read_spec_header(r: Reader, magic: bytes, version: int) -> tuple[GridSpec, int]:
    if r.take(len(magic)) != magic:
        raise FormatError(f"bad magic, expected {magic!r}")
    ver, n_bits, L, k, num, den, count = r.unpack(_HEADER)
    if ver != version:
        raise FormatError(f"unsupported format version {ver}")
    if den == 0:
        raise FormatError("sigma denominator is zero")
    try:
        spec = GridSpec(L=L, k=k, sigma=Fraction(num, den), n_bits=n_bits)
    except ValueError as exc:
        raise FormatError(f"invalid grid spec in header: {exc}") from exc
    return spec, count


def table_to_bytes(table: BreakingPointTable) -> bytes:
    """Serialize; thresholds are stored minus one so 2**n_bits fits in n_bits."""
    spec = table.spec
    width = spec.n_bits // 8
    parts = [TABLE_MAGIC, _spec_header(spec, TABLE_VERSION, len(table))]
    parts.append(b"".join((v - 1).to_bytes(width, "little") for v in table.thresholds))
    parts.append(pack_bitset(table.ambiguous))
    return seal(b"".join(parts))


def table_from_bytes(data: bytes) -> BreakingPointTable:
    payload = unseal(data)
    r = Reader(payload)
    spec, count = _read_spec_header(r, TABLE_MAGIC, TABLE_VERSION)
    if count != spec.n_entries:
        raise FormatError(f"entry count {count} does not match grid spec ({spec.n_entries})")
    width = spec.n_bits // 8
    raw = r.take(width * count)
    thresholds = tuple(int.from_bytes(raw[i:i + width], "little") + 1 for i in range(0, len(raw), width))
    ambiguous = tuple(unpack_bitset(r.take((count + 7) // 8), count))
    if r.pos != len(payload):
        raise FormatError("trailing bytes after table")
    return BreakingPointTable(spec, thresholds, ambiguous)


def write_table(table: BreakingPointTable, path) -> None:
    Path(path).write_bytes(table_to_bytes(table))


def read_table(path) -> BreakingPointTable:
    return table_from_bytes(Path(path).read_bytes())


# -- failure accounting -------------------------------------------------------


@dataclass(frozen=True)
class FailureBound:
    per_draw: Fraction          # P[a single uniform draw is a table-level Failure]
    per_sample: Fraction        # worst case over x of P[a clamped pixel sample is unresolved]
    events: int                 # dim * samples
    aggregate_failure: Fraction  # union bound over all events
    aggregate_success: Fraction  # 1 - aggregate_failure


def failure_probability_bound(spec_or_table, dim: int = 1, samples: int = 1) -> FailureBound:
    """Rigorous failure probabilities of the sampler, as exact rationals.

    A draw on a breaking point only hurts pixel x when the two neighbouring
    offsets clamp to different values, so at most 2k + L breaking points (plus
    ambiguous extras) matter for any x.
    """
    table = spec_or_table if isinstance(spec_or_table, BreakingPointTable) else build_table(spec_or_table)
    spec = table.spec
    top = 1 << spec.n_bits
    fails = table.failure_values()
    per_draw = Fraction(len(fails), top)
    if fails:
        lo, hi = table.locate(np.array(fails, dtype=np.uint64))
        xs = np.arange(spec.L + 1)[:, None]
        v_lo = np.clip(xs + spec.t_min + lo[None, :], spec.clamp_lo, spec.clamp_hi)
        v_hi = np.clip(xs + spec.t_min + hi[None, :], spec.clamp_lo, spec.clamp_hi)
        worst = int((v_lo != v_hi).sum(axis=1).max())
    else:
        worst = 0
    per_sample = Fraction(worst, top)
    events = dim * samples
    agg = min(Fraction(1), events * per_sample)
    return FailureBound(per_draw, per_sample, events, agg, 1 - agg)


def thresholds_for(spec: GridSpec) -> Sequence[int]:
    return build_table(spec).thresholds
