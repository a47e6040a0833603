"""Reachability-predicate classifiers that fool floating-point randomized smoothing.

Every predicate asks whether ``x`` could have been produced as ``a + e`` in
floating point, via the round trip ``(x - a) + a == x``.  Gaussian noise added
around ``a`` passes this test almost surely, noise around a nearby point almost
never does, so the smoothed classifier certifies huge radii around ``a`` while
its value a short distance away is different.

All arithmetic runs in one declared :class:`HostPrecision`; mixing precisions
(say, scaling pixels in binary32 and testing in binary64) destroys the effect.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .sampler import QuantizedImage


class HostPrecision(enum.Enum):
    BINARY32 = "binary32"
    BINARY64 = "binary64"

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.float32 if self is HostPrecision.BINARY32 else np.float64)

    @classmethod
    def parse(cls, value) -> "HostPrecision":
        if isinstance(value, cls):
            return value
        aliases = {"binary32": cls.BINARY32, "float32": cls.BINARY32, "single": cls.BINARY32,
                   "binary64": cls.BINARY64, "float64": cls.BINARY64, "double": cls.BINARY64}
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise ValueError(f"unknown host precision {value!r}") from None


DEFAULT_PRECISION = HostPrecision.BINARY64


def host_quotient(num: int, den: int, precision: HostPrecision = DEFAULT_PRECISION):
    """num / den rounded once into the host format."""
    dt = precision.dtype.type
    return dt(num) / dt(den)


def to_host(image: QuantizedImage, precision: HostPrecision = DEFAULT_PRECISION) -> np.ndarray:
    """Intensities divided by L, each quotient computed in the host format."""
    dt = precision.dtype
    return image.pixels.astype(dt) / dt.type(image.L)


def _roundtrip(x: np.ndarray, a: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore", over="ignore"):
        return (x - a) + a == x


def predicate_Fa(x, a, precision: HostPrecision = DEFAULT_PRECISION):
    """1 where ``(x - a) + a == x`` holds in the host format (elementwise)."""
    dt = precision.dtype
    out = _roundtrip(np.asarray(x, dtype=dt), np.asarray(a, dtype=dt)).astype(np.int8)
    return int(out) if out.ndim == 0 else out


def predicate_Ga(x, a, precision: HostPrecision = DEFAULT_PRECISION):
    """1 iff the round trip holds at every coordinate.  ``x`` may be a batch (B, d)."""
    dt = precision.dtype
    a_host = to_host(a, precision) if isinstance(a, QuantizedImage) else np.asarray(a, dtype=dt)
    x = np.asarray(x, dtype=dt)
    if x.shape[-1] != a_host.shape[-1]:
        raise ValueError(f"dimension mismatch: x has {x.shape[-1]}, anchor has {a_host.shape[-1]}")
    out = _roundtrip(x, a_host).all(axis=-1).astype(np.int8)
    return int(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class AnchorSet:
    """Memorized images ``A`` with a class bit each; immutable after construction."""

    pixels: np.ndarray
    labels: np.ndarray
    L: int = 255

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels, dtype=np.int64)
        if px.ndim == 1:
            px = px.reshape(1, -1) if px.size else px.reshape(0, 0)
        if px.size and (px.min() < 0 or px.max() > self.L):
            raise ValueError(f"intensities must lie in [0, {self.L}]")
        labels = np.asarray(self.labels, dtype=np.int8).reshape(-1)
        if labels.size != px.shape[0]:
            raise ValueError("one label per anchor image required")
        px.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_images(cls, images, labels=None) -> "AnchorSet":
        images = list(images)
        if not images:
            return cls(np.zeros((0, 0), dtype=np.int64), np.zeros(0, dtype=np.int8))
        L = images[0].L
        if any(im.L != L or im.d != images[0].d for im in images):
            raise ValueError("all anchors must share d and L")
        if labels is None:
            labels = np.zeros(len(images), dtype=np.int8)
        return cls(np.stack([im.pixels for im in images]), labels, L)

    def __len__(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def d(self) -> int:
        return int(self.pixels.shape[1]) if len(self) else 0

    def image(self, j: int) -> QuantizedImage:
        return QuantizedImage(self.pixels[j], self.L)

    def host(self, precision: HostPrecision = DEFAULT_PRECISION) -> np.ndarray:
        dt = precision.dtype
        return self.pixels.astype(dt) / dt.type(self.L)

    def with_label(self, label: int) -> "AnchorSet":
        sel = self.labels == label
        return AnchorSet(self.pixels[sel], self.labels[sel], self.L)


def synthetic_anchors(count: int, d: int = 3072, L: int = 255, seed: int = 0) -> AnchorSet:
    """Uniformly random images, labels alternating 0/1."""
    rng = np.random.default_rng(seed)
    pixels = rng.integers(0, L + 1, size=(count, d))
    return AnchorSet(pixels, np.arange(count) % 2, L)


# -- classifiers ------------------------------------------------------------------
# Each classifier maps a batch of host-format vectors of shape (B, d) to an int8
# array of shape (B,).  They hold no mutable state.


@dataclass(frozen=True)
class FaClassifier:
    """Round-trip test of a scalar input (d = 1) against the constant ``a``."""

    a_num: int
    a_den: int = 255
    precision: HostPrecision = DEFAULT_PRECISION

    @property
    def a(self):
        return host_quotient(self.a_num, self.a_den, self.precision)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=self.precision.dtype)
        return _roundtrip(x.reshape(x.shape[0], -1)[:, 0], self.a).astype(np.int8)


@dataclass(frozen=True)
class FaiClassifier:
    """Round-trip test of coordinate ``i`` against ``a``."""

    a_num: int
    i: int
    a_den: int = 255
    precision: HostPrecision = DEFAULT_PRECISION

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=self.precision.dtype)
        a = host_quotient(self.a_num, self.a_den, self.precision)
        return _roundtrip(x[:, self.i], a).astype(np.int8)


@dataclass(frozen=True, eq=False)
class GaClassifier:
    anchor: QuantizedImage
    precision: HostPrecision = DEFAULT_PRECISION

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.atleast_1d(predicate_Ga(x, self.anchor, self.precision)).astype(np.int8)


# coordinates tested for every anchor before the full check; an unrelated anchor
# survives them with negligible probability
_CASCADE = 64


def _h_batch(x: np.ndarray, anchors_host: np.ndarray) -> np.ndarray:
    """max over anchors of the all-coordinates round trip, for each row of ``x``."""
    b = x.shape[0]
    hit = np.zeros(b, dtype=bool)
    if anchors_host.shape[0] == 0 or b == 0:
        return hit
    if x.shape[1] != anchors_host.shape[1]:
        raise ValueError(f"dimension mismatch: x has {x.shape[1]}, anchors have {anchors_host.shape[1]}")
    head = min(_CASCADE, x.shape[1])
    pre = _roundtrip(x[:, None, :head], anchors_host[None, :, :head]).all(axis=2)
    rows, cols = np.nonzero(pre)
    for r, c in zip(rows.tolist(), cols.tolist()):
        if hit[r]:
            continue
        if _roundtrip(x[r, head:], anchors_host[c, head:]).all():
            hit[r] = True
    return hit


@dataclass(frozen=True, eq=False)
class HAClassifier:
    """1 iff some anchor passes the round trip at every coordinate."""

    anchors: AnchorSet
    precision: HostPrecision = DEFAULT_PRECISION
    _host: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_host", self.anchors.host(self.precision))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=self.precision.dtype))
        return _h_batch(x, self._host).astype(np.int8)


@dataclass(frozen=True, eq=False)
class MClassifier:
    """1 if H_{A1}(x) = 1, or H_{A0}(x) = 0 and x[0] exceeds the mid threshold; else 0.

    The threshold is ((L - 1) // 2) / L, i.e. 127/255 on the usual grid.
    """

    anchors0: AnchorSet
    anchors1: AnchorSet
    precision: HostPrecision = DEFAULT_PRECISION
    _h0: HAClassifier = field(init=False, repr=False)
    _h1: HAClassifier = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if len(self.anchors0) and len(self.anchors1) and self.anchors0.d != self.anchors1.d:
            raise ValueError("anchor sets must share d")
        object.__setattr__(self, "_h0", HAClassifier(self.anchors0, self.precision))
        object.__setattr__(self, "_h1", HAClassifier(self.anchors1, self.precision))

    @classmethod
    def from_anchors(cls, anchors: AnchorSet, precision: HostPrecision = DEFAULT_PRECISION) -> "MClassifier":
        return cls(anchors.with_label(0), anchors.with_label(1), precision)

    @property
    def L(self) -> int:
        return self.anchors1.L if len(self.anchors1) else self.anchors0.L

    @property
    def threshold(self):
        return host_quotient((self.L - 1) // 2, self.L, self.precision)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=self.precision.dtype))
        h1 = self._h1(x).astype(bool)
        out = h1.copy()
        rest = ~h1
        if rest.any():
            xr = x[rest]
            h0 = self._h0(xr).astype(bool)
            out[rest] = ~h0 & (xr[:, 0] > self.threshold)
        return out.astype(np.int8)


def classifier_HA(x, anchors: AnchorSet, precision: HostPrecision = DEFAULT_PRECISION):
    out = HAClassifier(anchors, precision)(x)
    return int(out[0]) if np.ndim(x) == 1 else out


def classifier_M(x, anchors0: AnchorSet, anchors1: AnchorSet, precision: HostPrecision = DEFAULT_PRECISION):
    out = MClassifier(anchors0, anchors1, precision)(x)
    return int(out[0]) if np.ndim(x) == 1 else out


# -- perturbation and experiments ------------------------------------------------------


def universal_perturbation(d: int, alpha_sign: int, L: int = 255, literal: bool = False,
                           precision: HostPrecision = DEFAULT_PRECISION) -> np.ndarray:
    """(alpha, 1/L, ..., 1/L) with alpha = sign * 240/L.

    Coordinates after the first move every pixel one grid step, which breaks
    reachability of every anchor; alpha pushes the first coordinate across the
    mid threshold of :class:`MClassifier`.  ``literal=True`` uses the much
    smaller alpha = sign * (240/L)/L, which only crosses the threshold for first
    coordinates close to it.
    """
    if d < 1:
        raise ValueError("d must be positive")
    if alpha_sign not in (-1, 1):
        raise ValueError("alpha_sign must be +1 or -1")
    dt = precision.dtype.type
    alpha = dt(240) / dt(L)
    if literal:
        alpha = alpha / dt(L)
    p = np.full(d, dt(1) / dt(L), dtype=precision.dtype)
    p[0] = alpha if alpha_sign > 0 else -alpha
    return p


def perturbation_sign_for(label: int) -> int:
    """Push class-1 anchors below the threshold and class-0 anchors above it."""
    return -1 if label == 1 else 1


def overlap_probability(a: int, b: int, sigma: float, trials: int, seed: int = 0, L: int = 255,
                        precision: HostPrecision = DEFAULT_PRECISION) -> float:
    """Estimate of P[(t - b) + b == t] for t = a/L + e, e ~ N(0, sigma^2)."""
    if sigma <= 0 or trials < 1:
        raise ValueError("need sigma > 0 and trials >= 1")
    dt = precision.dtype
    a_h = host_quotient(a, L, precision)
    b_h = host_quotient(b, L, precision)
    eps = (np.random.default_rng(seed).standard_normal(trials) * sigma).astype(dt)
    t = a_h + eps
    return float(_roundtrip(t, b_h).mean())


def min_overlap(a: int, sigma: float, trials: int, seed: int = 0, L: int = 255, radius: int = 2,
                precision: HostPrecision = DEFAULT_PRECISION) -> tuple[int, float]:
    """Neighbor b within ``radius`` grid steps of ``a`` (b != a) minimizing the overlap."""
    best = (a, 1.0)
    for b in range(max(0, a - radius), min(L, a + radius) + 1):
        if b == a:
            continue
        p = overlap_probability(a, b, sigma, trials, seed, L, precision)
        if p < best[1] or best[0] == a:
            best = (b, p)
    return best


def near_identity_failure_rate(trials: int, seed: int = 0, precision: HostPrecision = DEFAULT_PRECISION,
                       scale: float = 1.0, chunk: int = 1 << 20) -> float:
    """Fraction of random pairs with ((x + y) - y) + y != x + y in the host format."""
    rng = np.random.default_rng(seed)
    dt = precision.dtype
    bad = 0
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        x = rng.random(m).astype(dt)
        y = (rng.standard_normal(m) * scale).astype(dt)
        s = x + y
        bad += int(np.count_nonzero(((s - y) + y) != s))
        done += m
    return bad / trials


def bump_pixels(image: QuantizedImage, count: int, seed: int = 0) -> QuantizedImage:
    """Raise ``count`` randomly chosen pixels by one level (pixels at L are lowered)."""
    rng = np.random.default_rng(seed)
    px = image.pixels.copy()
    idx = rng.choice(px.size, size=min(count, px.size), replace=False)
    px[idx] = np.where(px[idx] < image.L, px[idx] + 1, px[idx] - 1)
    return QuantizedImage(px, image.L)
