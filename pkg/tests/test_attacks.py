import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from soundsmooth.attacks import (AnchorSet, FaClassifier, FaiClassifier, GaClassifier, HAClassifier, HostPrecision,
                                 MClassifier, bump_pixels, classifier_HA, classifier_M, host_quotient,
                                 near_identity_failure_rate, min_overlap, overlap_probability, perturbation_sign_for,
                                 predicate_Fa, predicate_Ga, synthetic_anchors, to_host, universal_perturbation)
from soundsmooth.sampler import QuantizedImage

PRECISIONS = [HostPrecision.BINARY64, HostPrecision.BINARY32]


@pytest.fixture(scope="module")
def anchors():
    return synthetic_anchors(12, 3072, seed=5)


@pytest.mark.parametrize("prec", PRECISIONS)
def test_scalar_round_trip_rates(prec):
    dt = prec.dtype
    a = host_quotient(210, 255, prec)
    noise = (np.random.default_rng(0).standard_normal(100_000) * 0.5).astype(dt)
    p1 = predicate_Fa(dt.type(0) + noise, a, prec).mean()
    p2 = predicate_Fa(a + noise, a, prec).mean()
    assert p2 == 1.0
    if prec is HostPrecision.BINARY64:
        assert p1 == pytest.approx(0.46, abs=0.02)
    assert p1 < 0.6


@pytest.mark.parametrize("prec", PRECISIONS)
def test_predicate_self(prec):
    for j in range(256):
        a = host_quotient(j, 255, prec)
        assert predicate_Fa(a, a, prec) == 1


@pytest.mark.parametrize("prec", PRECISIONS)
def test_round_trip_after_addition_is_near_universal(prec):
    rate = near_identity_failure_rate(10**7, seed=1, precision=prec)
    print(f"{prec.value}: near-identity failure rate {rate:.2e}")
    assert rate < 1e-6


def test_g_predicate_under_noise(anchors):
    a = anchors.image(0)
    host = to_host(a)
    noise = np.random.default_rng(2).standard_normal((200, 3072))
    assert predicate_Ga(host + noise, a).mean() == 1.0
    bumped = bump_pixels(a, 512, seed=3)
    assert predicate_Ga(to_host(bumped) + noise, a).mean() <= 0.2
    assert predicate_Ga(host, a) == 1
    with pytest.raises(ValueError):
        predicate_Ga(host[:10], a)


def test_h_classifier_basics(anchors):
    host = anchors.host()
    for j in range(len(anchors)):
        assert classifier_HA(host[j], anchors) == 1
    empty = AnchorSet(np.zeros((0, 3072), dtype=np.int64), np.zeros(0), 255)
    assert classifier_HA(host[0], empty) == 0
    noise = np.random.default_rng(1).standard_normal((20, 3072))
    out = HAClassifier(anchors)(host[3] + noise)
    assert out.tolist() == [1] * 20


def test_h_classifier_permutation_and_monotonicity(anchors):
    rng = np.random.default_rng(4)
    host = anchors.host()
    x = np.vstack([host[:4] + rng.standard_normal((4, 3072)), rng.random((4, 3072))])
    perm = rng.permutation(len(anchors))
    shuffled = AnchorSet(anchors.pixels[perm], anchors.labels[perm])
    sub = AnchorSet(anchors.pixels[:2], anchors.labels[:2])
    full = HAClassifier(anchors)(x)
    assert np.array_equal(full, HAClassifier(shuffled)(x))
    small = HAClassifier(sub)(x)
    assert np.all(small <= full)


def test_m_classifier_case_split(anchors):
    m = MClassifier.from_anchors(anchors)
    host = anchors.host()
    for j in range(len(anchors)):
        assert m(host[j][None, :])[0] == anchors.labels[j]
    rng = np.random.default_rng(8)
    x = rng.random((10, 3072))  # reaches no anchor
    assert np.array_equal(m(x), (x[:, 0] > m.threshold).astype(np.int8))
    assert m.threshold == np.float64(127) / np.float64(255)
    a0, a1 = anchors.with_label(0), anchors.with_label(1)
    assert classifier_M(host[1], a0, a1) == 1


def test_universal_perturbation_norms():
    p = universal_perturbation(3072, 1)
    assert p[0] == 240 / 255 and np.all(p[1:] == 1 / 255)
    assert np.linalg.norm(p) == pytest.approx(np.sqrt((240 / 255) ** 2 + 3071 / 255**2))
    assert np.linalg.norm(p) <= 1
    lit = universal_perturbation(3072, -1, literal=True)
    assert lit[0] == -(240 / 255) / 255
    assert np.linalg.norm(lit) == pytest.approx(0.2174, abs=1e-4)
    assert universal_perturbation(1, 1).shape == (1,)
    with pytest.raises(ValueError):
        universal_perturbation(0, 1)


def test_perturbation_breaks_reachability_under_noise(anchors):
    rng = np.random.default_rng(9)
    for j in range(len(anchors)):
        label = int(anchors.labels[j])
        x = anchors.host()[j] + universal_perturbation(3072, perturbation_sign_for(label))
        noise = rng.standard_normal((50, 3072))
        assert HAClassifier(anchors)(x + noise).sum() == 0


def test_overlap_probability():
    assert overlap_probability(100, 100, 1.0, 2000) == 1.0
    p = overlap_probability(100, 102, 1.0, 2000)
    assert 0 <= p <= 1


def test_overlap_minimum_below_threshold_for_most_intensities():
    below = 0
    intensities = range(5, 256, 10)
    for a in intensities:
        _, p = min_overlap(a, 1.0, 4000, seed=a)
        below += p < 0.99
    assert below / len(intensities) > 0.5
    _, p = min_overlap(50, 1.0, 20000)
    assert p < 0.99


def test_fa_classifiers():
    f = FaClassifier(210)
    a = host_quotient(210, 255)
    assert f(np.array([[a], [a + 0.3]])).tolist() == [1, 1]
    fi = FaiClassifier(210, 1)
    assert fi(np.array([[0.0, a]]))[0] == 1
    g = GaClassifier(QuantizedImage([1, 2, 3]))
    assert g(to_host(QuantizedImage([1, 2, 3]))[None, :])[0] == 1


def test_precision_parse():
    assert HostPrecision.parse("float32") is HostPrecision.BINARY32
    with pytest.raises(ValueError):
        HostPrecision.parse("half")


def test_deterministic_reruns(anchors):
    a = overlap_probability(30, 31, 1.0, 5000, seed=4)
    b = overlap_probability(30, 31, 1.0, 5000, seed=4)
    assert a == b
