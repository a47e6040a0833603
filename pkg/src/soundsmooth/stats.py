"""Normal CDF/quantile, binomial lower confidence bounds and the certified radius."""
from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist

from scipy.special import betainc

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_STD_NORMAL = NormalDist()


class Abstain:
    """Sentinel returned when no class can be certified."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "ABSTAIN"

    def __bool__(self) -> bool:
        return False


ABSTAIN = Abstain()


@dataclass(frozen=True)
class ConfidenceSpec:
    successes: int
    n: int
    alpha: float = 0.001

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.n < 1:
            raise ValueError(f"n must be positive, got {self.n}")
        if not 0 <= self.successes <= self.n:
            raise ValueError(f"successes={self.successes} outside [0, {self.n}]")


def phi(x: float) -> float:
    """Standard normal CDF, computed through erfc so the left tail keeps precision."""
    return 0.5 * math.erfc(-x / _SQRT2)


def phi_inv(p: float) -> float:
    """Standard normal quantile.

    Starts from Wichura's AS241 rational approximation and applies one Newton
    step against :func:`phi`.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"phi_inv is defined on (0, 1), got {p}")
    x = _STD_NORMAL.inv_cdf(p)
    density = _INV_SQRT_2PI * math.exp(-0.5 * x * x)
    if density > 0.0:
        x -= (phi(x) - p) / density
    return x


def hoeffding_lower(spec: ConfidenceSpec) -> float:
    slack = math.sqrt(math.log(1.0 / spec.alpha) / (2.0 * spec.n))
    return min(1.0, max(0.0, spec.successes / spec.n - slack))


def clopper_pearson_lower(spec: ConfidenceSpec) -> float:
    """One-sided (1 - alpha) Clopper-Pearson lower bound on a binomial proportion.

    Solves P[Bin(n, p) >= k] = alpha, i.e. I_p(k, n - k + 1) = alpha, by
    bisection; the upper tail is increasing in p.
    """
    k, n, alpha = spec.successes, spec.n, spec.alpha
    if k == 0:
        return 0.0
    if k == n:
        # pow is within an ulp of the root and may round up; two ulps down stay below it
        return math.nextafter(math.nextafter(alpha ** (1.0 / n), 0.0), 0.0)
    lo, hi = 0.0, k / n
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if betainc(k, n - k + 1, mid) < alpha:
            lo = mid
        else:
            hi = mid
    # lo always satisfies tail < alpha, so it never overshoots the exact bound
    return lo


def lower_confidence_bound(successes: int, n: int, alpha: float, method: str = "clopper-pearson") -> float:
    spec = ConfidenceSpec(successes, n, alpha)
    if method in ("clopper-pearson", "cp"):
        return clopper_pearson_lower(spec)
    if method == "hoeffding":
        return hoeffding_lower(spec)
    raise ValueError(f"unknown bound {method!r}")


def certified_radius(p_lower: float, sigma: float):
    """sigma * phi_inv(p_lower), or ABSTAIN unless p_lower > 1/2."""
    if not 0.0 <= p_lower <= 1.0:
        raise ValueError(f"p_lower must lie in [0, 1], got {p_lower}")
    if p_lower <= 0.5:
        return ABSTAIN
    if p_lower == 1.0:
        return math.inf
    return sigma * phi_inv(p_lower)
