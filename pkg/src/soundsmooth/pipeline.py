"""Two-phase smoothing certification, standard (continuous noise) and sound (exact table noise).

Both runners share the same skeleton: ``n0`` samples pick a candidate class,
``n`` fresh samples lower-bound its probability, and the radius is
``sigma * phi_inv(p_lower)``.  They differ only in where the noisy inputs come
from.  The sound runner evaluates the classifier on ``g_k``-quantized inputs
built from a precomputed :class:`~soundsmooth.sampler.NoiseBuffer`; a sample
whose offset could not be pinned down counts against the candidate class.
"""
from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .attacks import DEFAULT_PRECISION, HostPrecision, to_host
from .binio import FormatError, Reader
from .exact_tables import BreakingPointTable, GridSpec, build_table
from .sampler import NoiseBuffer, QuantizedImage, SpecMismatchError, build_noise_buffer
from .stats import ABSTAIN, certified_radius, lower_confidence_bound

Classifier = Callable[[np.ndarray], np.ndarray]

RADIUS_GRID = (0.0, 0.1, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0)
CSV_HEADER = ("index", "prediction", "p_lower", "radius", "count0", "count1", "failures", "method", "sigma", "alpha")
DATASET_MAGIC = b"QIMGSET"

# streams of the shared noise buffers: selection phase and bounding phase
SELECT_STREAM = 0
BOUND_STREAM = 1


# -- built-in benign classifiers ---------------------------------------------------------


@dataclass(frozen=True)
class ThresholdClassifier:
    """1 iff the mean intensity exceeds ``theta``."""

    theta: float = 0.5
    precision: HostPrecision = DEFAULT_PRECISION

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=self.precision.dtype))
        return (x.mean(axis=1) > self.precision.dtype.type(self.theta)).astype(np.int8)


@dataclass(frozen=True)
class ConstantClassifier:
    label: int = 0

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.full(np.atleast_2d(x).shape[0], self.label, dtype=np.int8)


# -- outcomes --------------------------------------------------------------------------


@dataclass(frozen=True)
class CertificationOutcome:
    prediction: object  # 0, 1 or ABSTAIN
    p_lower: float
    radius: float | None
    count0: int
    count1: int
    failures: int
    method: str
    sigma: float
    alpha: float
    n0: int
    n: int

    def __post_init__(self) -> None:
        if (self.radius is None) != (self.prediction is ABSTAIN):
            raise ValueError("radius must be present exactly when a class is predicted")
        if self.count0 + self.count1 + self.failures != self.n:
            raise ValueError("counts and failures must add up to n")

    @property
    def abstained(self) -> bool:
        return self.prediction is ABSTAIN

    def certified_at(self, r: float, label: int) -> bool:
        return not self.abstained and self.prediction == label and self.radius >= r


def _decide(counts_select: np.ndarray, counts: np.ndarray, failures: int, n0: int, n: int, alpha: float,
            sigma: float, method: str, bound: str) -> CertificationOutcome:
    candidate = int(np.argmax(counts_select))  # ties go to class 0
    p_lower = lower_confidence_bound(int(counts[candidate]), n, alpha, bound)
    radius = certified_radius(p_lower, sigma)
    prediction = ABSTAIN if radius is ABSTAIN else candidate
    return CertificationOutcome(prediction, p_lower, None if radius is ABSTAIN else float(radius),
                                int(counts[0]), int(counts[1]), failures, method, float(sigma), alpha, n0, n)


def _validate(n0: int, n: int, alpha: float) -> None:
    if n0 < 1 or n < 1:
        raise ValueError("n0 and n must be positive")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")


# -- standard certification -------------------------------------------------------------


def _gaussian_counts(f: Classifier, x: np.ndarray, sigma: float, m: int, rng: np.random.Generator,
                     precision: HostPrecision, batch: int) -> np.ndarray:
    dt = precision.dtype
    s = dt.type(sigma)
    counts = np.zeros(2, dtype=np.int64)
    done = 0
    while done < m:
        b = min(batch, m - done)
        noise = rng.standard_normal((b, x.size)).astype(dt) * s
        out = np.asarray(f(x[None, :] + noise))
        ones = int(np.count_nonzero(out))
        counts += (b - ones, ones)
        done += b
    return counts


def certify_unsound(f: Classifier, x, sigma: float, n0: int, n: int, alpha: float = 0.001, seed=0,
                    bound: str = "clopper-pearson", precision: HostPrecision = DEFAULT_PRECISION,
                    batch: int = 4096) -> CertificationOutcome:
    """Standard smoothing certificate from host-format Gaussian noise."""
    _validate(n0, n, alpha)
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if isinstance(x, QuantizedImage):
        x = to_host(x, precision)
    x = np.asarray(x, dtype=precision.dtype).reshape(-1)
    select, bound_seq = np.random.SeedSequence(seed).spawn(2)
    c0 = _gaussian_counts(f, x, sigma, n0, np.random.default_rng(select), precision, batch)
    c = _gaussian_counts(f, x, sigma, n, np.random.default_rng(bound_seq), precision, batch)
    return _decide(c0, c, 0, n0, n, alpha, sigma, "unsound", bound)


# -- sound certification ----------------------------------------------------------------


def _buffer_counts(f: Classifier, x: QuantizedImage, buf: NoiseBuffer, precision: HostPrecision,
                   batch: int) -> tuple[np.ndarray, int]:
    dt = precision.dtype
    L = dt.type(buf.spec.L)
    counts = np.zeros(2, dtype=np.int64)
    failures = 0
    rows_per = max(1, batch)
    for start in range(0, buf.n, rows_per):
        vals, failed = buf.apply(x, slice(start, min(buf.n, start + rows_per)))
        out = np.asarray(f(vals.astype(dt) / L)).astype(bool)
        ok = ~failed
        ones = int(np.count_nonzero(out & ok))
        zeros = int(np.count_nonzero(~out & ok))
        counts += (zeros, ones)
        failures += int(np.count_nonzero(failed))
    return counts, failures


def certify_sound(f: Classifier, x: QuantizedImage, table: BreakingPointTable, buffer0: NoiseBuffer,
                  buffer: NoiseBuffer, alpha: float = 0.001, bound: str = "clopper-pearson",
                  precision: HostPrecision = DEFAULT_PRECISION, batch: int = 4096) -> CertificationOutcome:
    """Certificate for the smoothed ``f o g_k`` with noise from exact table sampling.

    Failed samples are excluded from both class counts but still count toward
    ``n``, so they can only lower the bound on the candidate class.
    """
    spec = table.spec
    for name, buf in (("selection", buffer0), ("bounding", buffer)):
        if buf.spec != spec:
            raise SpecMismatchError(f"{name} buffer was drawn for {buf.spec}, table is {spec}")
    if not isinstance(x, QuantizedImage):
        raise TypeError("sound certification needs a QuantizedImage")
    _validate(buffer0.n, buffer.n, alpha)
    c0, _ = _buffer_counts(f, x, buffer0, precision, batch)
    c, failures = _buffer_counts(f, x, buffer, precision, batch)
    # conservative scoring: a failed sample never supports the candidate
    return _decide(c0, c, failures, buffer0.n, buffer.n, alpha, float(spec.sigma), "sound", bound)


# -- datasets ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CertifyParams:
    sigma: Fraction = Fraction(1, 2)
    n0: int = 100
    n: int = 10_000
    alpha: float = 0.001
    seed: int = 0
    k: int = 6
    n_bits: int = 64
    bound: str = "clopper-pearson"
    precision: HostPrecision = DEFAULT_PRECISION

    def grid_spec(self, L: int) -> GridSpec:
        return GridSpec.normalized(L, self.k, Fraction(self.sigma), self.n_bits)


@dataclass
class SoundContext:
    """Table plus the two shared buffers, built once per (spec, d, seed)."""

    table: BreakingPointTable
    buffer0: NoiseBuffer
    buffer: NoiseBuffer

    @classmethod
    def build(cls, spec: GridSpec, d: int, n0: int, n: int, seed: int) -> "SoundContext":
        table = build_table(spec)
        return cls(table, build_noise_buffer(table, n0, d, seed, SELECT_STREAM),
                   build_noise_buffer(table, n, d, seed, BOUND_STREAM))


@dataclass
class DatasetResult:
    outcomes: list[CertificationOutcome]
    labels: list[int]
    radii: tuple[float, ...] = RADIUS_GRID
    accuracy: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.accuracy:
            self.accuracy = certified_accuracy(self.outcomes, self.labels, self.radii)


def certified_accuracy(outcomes: Sequence[CertificationOutcome], labels: Sequence[int],
                       radii: Sequence[float] = RADIUS_GRID) -> list[float]:
    if not outcomes:
        return [0.0 for _ in radii]
    return [sum(o.certified_at(r, y) for o, y in zip(outcomes, labels)) / len(outcomes) for r in radii]


def run_dataset(images: Sequence[QuantizedImage], f: Classifier, method: str, params: CertifyParams,
                labels: Sequence[int] | None = None, radii: Sequence[float] = RADIUS_GRID,
                context: SoundContext | None = None) -> DatasetResult:
    """Certify every image; the sound noise buffers are drawn once and shared."""
    images = list(images)
    if not images:
        return DatasetResult([], [], tuple(radii))
    d, L = images[0].d, images[0].L
    for im in images:
        if im.d != d or im.L != L:
            raise ValueError("all images must share d and L")
    if labels is None:
        labels = [int(f(to_host(im, params.precision)[None, :])[0]) for im in images]
    outcomes = []
    if method == "sound":
        if context is None:
            context = SoundContext.build(params.grid_spec(L), d, params.n0, params.n, params.seed)
        for im in images:
            outcomes.append(certify_sound(f, im, context.table, context.buffer0, context.buffer,
                                          params.alpha, params.bound, params.precision))
    elif method == "unsound":
        for i, im in enumerate(images):
            outcomes.append(certify_unsound(f, im, float(params.sigma), params.n0, params.n, params.alpha,
                                            [params.seed, i], params.bound, params.precision))
    else:
        raise ValueError(f"unknown method {method!r}")
    return DatasetResult(outcomes, list(labels), tuple(radii))


def _fmt(v: float) -> str:
    return repr(float(v))


def emit_csv(outcomes: Sequence[CertificationOutcome]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for i, o in enumerate(outcomes):
        pred = "abstain" if o.abstained else str(o.prediction)
        radius = "" if o.radius is None else _fmt(o.radius)
        w.writerow([i, pred, _fmt(o.p_lower), radius, o.count0, o.count1, o.failures, o.method,
                    _fmt(o.sigma), _fmt(o.alpha)])
    return buf.getvalue()


def parse_csv(text: str) -> list[dict]:
    rows = list(csv.DictReader(io.StringIO(text)))
    out = []
    for r in rows:
        out.append({
            "index": int(r["index"]),
            "prediction": ABSTAIN if r["prediction"] == "abstain" else int(r["prediction"]),
            "p_lower": float(r["p_lower"]),
            "radius": None if r["radius"] == "" else float(r["radius"]),
            "count0": int(r["count0"]),
            "count1": int(r["count1"]),
            "failures": int(r["failures"]),
            "method": r["method"],
            "sigma": float(r["sigma"]),
            "alpha": float(r["alpha"]),
        })
    return out


def compare(images: Sequence[QuantizedImage], f: Classifier, params: CertifyParams,
            radii: Sequence[float] = RADIUS_GRID) -> tuple[str, dict[str, DatasetResult]]:
    """Run both methods and render certified accuracy per radius as CSV, one row per method."""
    labels = None
    if images:
        labels = [int(f(to_host(im, params.precision)[None, :])[0]) for im in images]
    results = {m: run_dataset(images, f, m, params, labels, radii) for m in ("unsound", "sound")}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "sigma"] + [f"r={r:g}" for r in radii])
    for m, res in results.items():
        w.writerow([m, _fmt(float(params.sigma))] + [f"{a:.3f}" for a in res.accuracy])
    return buf.getvalue(), results


# -- dataset files ------------------------------------------------------------------------


def dataset_to_bytes(images: Sequence[QuantizedImage], d: int | None = None, L: int = 255) -> bytes:
    images = list(images)
    if images:
        d, L = images[0].d, images[0].L
    if d is None:
        d = 0
    if any(im.d != d or im.L != L for im in images):
        raise ValueError("all images must share d and L")
    dtype = "<u1" if L <= 255 else "<u2"
    head = DATASET_MAGIC + struct.pack("<IIQ", d, L, len(images))
    body = b"".join(im.pixels.astype(dtype).tobytes() for im in images)
    return head + body


def dataset_from_bytes(data: bytes) -> list[QuantizedImage]:
    r = Reader(data)
    if r.take(len(DATASET_MAGIC)) != DATASET_MAGIC:
        raise FormatError("not an image set (bad magic)")
    d, L, count = r.unpack("IIQ")
    if L < 1:
        raise FormatError("L must be positive")
    width = 1 if L <= 255 else 2
    raw = r.take(count * d * width)
    if r.pos != len(data):
        raise FormatError("trailing bytes after image data")
    px = np.frombuffer(raw, dtype="<u1" if width == 1 else "<u2").astype(np.int64).reshape(count, d)
    if px.size and px.max() > L:
        raise FormatError(f"intensity above L={L}")
    return [QuantizedImage(row, L) for row in px]


def write_dataset(images, path, d: int | None = None, L: int = 255) -> None:
    Path(path).write_bytes(dataset_to_bytes(images, d, L))


def read_dataset(path) -> list[QuantizedImage]:
    return dataset_from_bytes(Path(path).read_bytes())


def synthetic_images(count: int, d: int = 16, L: int = 255, seed: int = 0, spread: float = 0.15) -> list[QuantizedImage]:
    """Images whose pixels scatter around a per-image brightness drawn uniformly from [0, 1]."""
    rng = np.random.default_rng(seed)
    level = rng.random(count)
    px = np.rint((level[:, None] + spread * rng.standard_normal((count, d))) * L)
    px = np.clip(px, 0, L).astype(np.int64)
    return [QuantizedImage(row, L) for row in px]


# -- worked scenarios ---------------------------------------------------------------------


@dataclass(frozen=True)
class ScalarAttackResult:
    p_at_zero: float
    p_at_anchor: float
    hoeffding_radius: object
    cp_radius: object
    prediction_at_zero: object
    distance: float


def scalar_attack_demo(sigma: float = 0.5, n: int = 100_000, alpha: float = 0.001, anchor: int = 210, L: int = 255,
                 seed: int = 0, precision: HostPrecision = DEFAULT_PRECISION) -> ScalarAttackResult:
    """Round-trip classifier smoothed around anchor/L versus around 0."""
    from .attacks import FaClassifier, host_quotient

    f = FaClassifier(anchor, L, precision)
    a = np.array([host_quotient(anchor, L, precision)])
    zero = np.zeros(1, dtype=precision.dtype)
    at_a_h = certify_unsound(f, a, sigma, 100, n, alpha, [seed, 1], "hoeffding", precision)
    at_a_cp = certify_unsound(f, a, sigma, 100, n, alpha, [seed, 1], "clopper-pearson", precision)
    at_0 = certify_unsound(f, zero, sigma, 100, n, alpha, [seed, 2], "clopper-pearson", precision)
    return ScalarAttackResult(at_0.count1 / n, at_a_cp.count1 / n, at_a_h.radius, at_a_cp.radius, at_0.prediction,
                         float(a[0]))


@dataclass(frozen=True)
class AnchorReport:
    label: int
    unsound_prediction: object
    unsound_radius: float | None
    perturbed_prediction: object
    sound_prediction: object
    sound_radius: float | None
    perturbation_norm: float

    @property
    def flipped(self) -> bool:
        return self.perturbed_prediction is not ABSTAIN and self.perturbed_prediction != self.label

    @property
    def sound_covers_perturbation(self) -> bool:
        return self.sound_radius is not None and self.sound_radius >= self.perturbation_norm


def memorization_demo(n_images: int = 100, d: int = 3072, n: int = 1000, n0: int = 100, sigma: Fraction = Fraction(1),
                 alpha: float = 0.001, k: int = 6, seed: int = 0, literal: bool = False,
                 precision: HostPrecision = DEFAULT_PRECISION) -> list[AnchorReport]:
    """Memorizing classifier M over random anchors: certified by standard smoothing, broken by one perturbation."""
    from .attacks import MClassifier, perturbation_sign_for, synthetic_anchors, universal_perturbation

    anchors = synthetic_anchors(n_images, d, seed=seed)
    f = MClassifier.from_anchors(anchors, precision)
    spec = GridSpec.normalized(anchors.L, k, Fraction(sigma), 64)
    ctx = SoundContext.build(spec, d, n0, n, seed)
    host = anchors.host(precision)
    reports = []
    for j in range(len(anchors)):
        label = int(anchors.labels[j])
        x = host[j]
        p = universal_perturbation(d, perturbation_sign_for(label), anchors.L, literal, precision)
        norm = float(np.sqrt(np.sum(p.astype(np.float64) ** 2)))
        u = certify_unsound(f, x, float(sigma), n0, n, alpha, [seed, j, 0], precision=precision)
        up = certify_unsound(f, x + p, float(sigma), n0, n, alpha, [seed, j, 1], precision=precision)
        s = certify_sound(f, anchors.image(j), ctx.table, ctx.buffer0, ctx.buffer, alpha, precision=precision)
        reports.append(AnchorReport(label, u.prediction, u.radius, up.prediction, s.prediction, s.radius, norm))
    return reports


def exact_sound_probability(f: Classifier, x: QuantizedImage, table: BreakingPointTable,
                            precision: HostPrecision = DEFAULT_PRECISION) -> float:
    """P[f(g_k(x + e)) = 1] for a one-pixel input, summed over the exact offset masses."""
    if x.d != 1:
        raise ValueError("exact evaluation is for one-pixel inputs")
    spec = table.spec
    th = np.array([int(t) for t in table.thresholds], dtype=object)
    masses = np.diff(np.concatenate([[0], th])) / float(1 << spec.n_bits)
    offsets = np.arange(spec.t_min, spec.t_max + 1)
    vals = np.clip(x.pixels[0] + offsets, spec.clamp_lo, spec.clamp_hi)
    dt = precision.dtype
    out = np.asarray(f((vals.astype(dt) / dt.type(spec.L))[:, None])).astype(bool)
    return float(np.sum(masses.astype(float)[out]))


def normalize_radius(r) -> float:
    return -math.inf if r is None or r is ABSTAIN else float(r)
