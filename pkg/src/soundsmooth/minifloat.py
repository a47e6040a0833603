"""8-bit toy floating-point format: 1 sign, 3 exponent, 4 mantissa bits, bias 3.

Subnormals are supported (exponent field 000 means no implicit leading one and
exponent -2), exponent field 111 encodes infinities and NaNs.  Arithmetic is
carried out exactly on rationals and rounded once, to nearest with ties going
to the even mantissa.

All finite values are integer multiples of 2**-6, which the fast addition path
exploits: operands are turned into integer "units" of 2**-6, summed exactly and
looked up in a precomputed rounding table.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Iterator, Union

EXP_BITS = 3
MAN_BITS = 4
BIAS = 3
EXP_MAX_FIELD = (1 << EXP_BITS) - 1  # 0b111
MIN_EXP = 1 - BIAS  # -2, shared by subnormals and the smallest normal binade
MAX_EXP = EXP_MAX_FIELD - 1 - BIAS  # 3
UNIT = Fraction(1, 1 << (MAN_BITS - MIN_EXP))  # 2**-6, spacing of subnormals

QUIET_NAN_MANTISSA = 1 << (MAN_BITS - 1)

Rational = Union[Fraction, int, float]


@dataclass(frozen=True, order=False)
class MiniFloat8:
    """An 8-bit pattern.  Equality is bit equality (so +0 != -0, NaN == NaN)."""

    bits: int

    def __post_init__(self) -> None:
        if not 0 <= self.bits <= 0xFF:
            raise ValueError(f"bit pattern out of range: {self.bits}")

    @property
    def sign(self) -> int:
        return self.bits >> 7

    @property
    def exponent_field(self) -> int:
        return (self.bits >> MAN_BITS) & EXP_MAX_FIELD

    @property
    def mantissa(self) -> int:
        return self.bits & ((1 << MAN_BITS) - 1)

    def is_nan(self) -> bool:
        return self.exponent_field == EXP_MAX_FIELD and self.mantissa != 0

    def is_inf(self) -> bool:
        return self.exponent_field == EXP_MAX_FIELD and self.mantissa == 0

    def is_finite(self) -> bool:
        return self.exponent_field != EXP_MAX_FIELD

    def is_zero(self) -> bool:
        return self.bits & 0x7F == 0

    def to_fraction(self) -> Fraction:
        if not self.is_finite():
            raise ValueError(f"{self} has no rational value")
        return Fraction(_units(self), 1) * UNIT

    def __float__(self) -> float:
        return decode(self)

    def __neg__(self) -> "MiniFloat8":
        return negate(self)

    def __add__(self, other: "MiniFloat8") -> "MiniFloat8":
        return add(self, other)

    def __sub__(self, other: "MiniFloat8") -> "MiniFloat8":
        return sub(self, other)

    def __str__(self) -> str:
        return format_bits(self)

    def __repr__(self) -> str:
        return f"MiniFloat8({format_bits(self)!r} = {decode(self)!r})"


def _units(m: MiniFloat8) -> int:
    """Signed value of a finite pattern in multiples of 2**-6."""
    e, man = m.exponent_field, m.mantissa
    if e == 0:
        mag = man
    else:
        mag = ((1 << MAN_BITS) | man) << (e - 1)
    return -mag if m.sign else mag


def decode(m: MiniFloat8 | int) -> float:
    """Value of the pattern as a Python float.

    Every minifloat is exactly representable in binary64, so the result is the
    exact rational value; +-0, +-inf and NaN come back as the float specials.
    """
    if isinstance(m, int):
        m = MiniFloat8(m)
    if m.is_nan():
        return math.nan
    if m.is_inf():
        return -math.inf if m.sign else math.inf
    if m.is_zero():
        return -0.0 if m.sign else 0.0
    return float(_units(m)) * float(UNIT)


# every pattern interned once, with its class (0 finite, 1 inf, 2 nan) and value in units
_ALL = tuple(MiniFloat8(b) for b in range(256))
_KIND = tuple(2 if m.is_nan() else 1 if m.is_inf() else 0 for m in _ALL)
_UNITS = tuple(_units(m) if k == 0 else 0 for m, k in zip(_ALL, _KIND))


def _pack(sign: int, exp_field: int, mantissa: int) -> MiniFloat8:
    return _ALL[(sign << 7) | (exp_field << MAN_BITS) | mantissa]


def encode(q: Rational) -> MiniFloat8:
    """Round a rational (or float) to the nearest minifloat, ties to even mantissa."""
    if isinstance(q, float):
        if math.isnan(q):
            return _pack(0, EXP_MAX_FIELD, QUIET_NAN_MANTISSA)
        if math.isinf(q):
            return _pack(int(q < 0), EXP_MAX_FIELD, 0)
        if q == 0.0:
            return _pack(int(math.copysign(1.0, q) < 0), 0, 0)
    q = Fraction(q)
    if q == 0:
        return _pack(0, 0, 0)
    sign = int(q < 0)
    a = -q if sign else q

    # binade exponent E with 2**E <= a < 2**(E+1), floored at the subnormal exponent
    e = a.numerator.bit_length() - a.denominator.bit_length()
    if Fraction(2) ** e > a:
        e -= 1
    e = max(e, MIN_EXP)
    ulp = Fraction(2) ** (e - MAN_BITS)
    n = round(a / ulp)  # Fraction.__round__ is round-half-even
    if n == 1 << (MAN_BITS + 1):
        e, n = e + 1, 1 << MAN_BITS
    if e > MAX_EXP:
        return _pack(sign, EXP_MAX_FIELD, 0)
    if n < 1 << MAN_BITS:  # only reachable at e == MIN_EXP
        return _pack(sign, 0, n)
    return _pack(sign, e + BIAS, n - (1 << MAN_BITS))


@lru_cache(maxsize=None)
def _round_units_table() -> dict[int, MiniFloat8]:
    # sums of two finite operands lie in [-2*992, 2*992] units
    top = 2 * 15 * 64 + 64
    return {u: encode(Fraction(u) * UNIT) for u in range(-top, top + 1)}


def negate(m: MiniFloat8) -> MiniFloat8:
    return _ALL[m.bits ^ 0x80]


def _canonical_nan(sign: int = 0) -> MiniFloat8:
    return _pack(sign, EXP_MAX_FIELD, QUIET_NAN_MANTISSA)


def add(a: MiniFloat8, b: MiniFloat8) -> MiniFloat8:
    """a (+) b: exact sum, rounded once."""
    ab, bb = a.bits, b.bits
    if _KIND[ab] == 0 and _KIND[bb] == 0:
        s = _UNITS[ab] + _UNITS[bb]
        if s:
            return _round_units_table()[s]
        # IEEE: exact zero sum is +0 unless both operands are -0
        return _ALL[0x80 if ab == bb == 0x80 else 0]
    if a.is_nan():
        return _canonical_nan(a.sign)
    if b.is_nan():
        return _canonical_nan(b.sign)
    if a.is_inf() or b.is_inf():
        if a.is_inf() and b.is_inf() and a.sign != b.sign:
            return _canonical_nan(0)
        return a if a.is_inf() else b


def sub(a: MiniFloat8, b: MiniFloat8) -> MiniFloat8:
    return add(a, negate(b))


def enumerate_all() -> list[MiniFloat8]:
    return list(_ALL)


def finite_values() -> Iterator[MiniFloat8]:
    return (m for m in enumerate_all() if m.is_finite())


def format_bits(m: MiniFloat8) -> str:
    """Render as ``"s eee mmmm"``."""
    b = f"{m.bits:08b}"
    return f"{b[0]} {b[1:4]} {b[4:]}"


def parse_bits(text: str) -> MiniFloat8:
    """Parse ``"s eee mmmm"`` (whitespace and underscores ignored, optional 0b)."""
    s = text.strip().lower()
    if s.startswith("0b"):
        s = s[2:]
    s = s.replace(" ", "").replace("_", "")
    if len(s) != 8 or set(s) - {"0", "1"}:
        raise ValueError(f"expected 8 binary digits, got {text!r}")
    return MiniFloat8(int(s, 2))


def reachable_sums(base: MiniFloat8) -> set[MiniFloat8]:
    """All results of ``base (+) a`` over finite ``a``."""
    return {add(base, a) for a in finite_values()}
