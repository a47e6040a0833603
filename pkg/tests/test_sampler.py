from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from soundsmooth.binio import ChecksumError, FormatError
from soundsmooth.exact_tables import GridSpec, build_table
from soundsmooth.sampler import (FAILURE, QuantizedImage, SpecMismatchError, build_noise_buffer, draw_offset,
                                 noise_from_bytes, noise_to_bytes, quantize_gk, read_noise, shift_clamp,
                                 uniform_draws, write_noise)


def _exact_clamped(x: int, spec: GridSpec) -> dict[int, float]:
    """Oracle: distribution of clamp(round(x + e)), e ~ N(0, sigma_int^2), on the integer grid."""
    s = mpmath.mpf(spec.sigma_int.numerator) / spec.sigma_int.denominator
    cdf = lambda b: mpmath.ncdf((mpmath.mpf(b) - x) / s)
    out = {}
    for a in range(spec.clamp_lo, spec.clamp_hi + 1):
        lo = -mpmath.inf if a == spec.clamp_lo else a - mpmath.mpf(1) / 2
        hi = mpmath.inf if a == spec.clamp_hi else a + mpmath.mpf(1) / 2
        out[a] = float((1 if hi == mpmath.inf else cdf(hi)) - (0 if lo == -mpmath.inf else cdf(lo)))
    return out


def _empirical(x: int, table, conditional: bool = True) -> dict[int, float]:
    spec = table.spec
    counts: dict[int, int] = {}
    ok = 0
    for u in range(1 << spec.n_bits):
        off = draw_offset(u, table)
        if off is FAILURE:
            continue
        ok += 1
        v = int(shift_clamp(x, off, spec))
        counts[v] = counts.get(v, 0) + 1
    denom = ok if conditional else 1 << spec.n_bits
    return {a: counts.get(a, 0) / denom for a in range(spec.clamp_lo, spec.clamp_hi + 1)}


def test_draw_offset_worked_values(tiny_table):
    assert draw_offset(10, tiny_table) == -6
    assert draw_offset(21, tiny_table) == -6
    assert draw_offset(22, tiny_table) is FAILURE
    assert draw_offset(23, tiny_table) == -5
    assert draw_offset(236, tiny_table) == 6
    assert draw_offset(255, tiny_table) == 6
    with pytest.raises(ValueError):
        draw_offset(256, tiny_table)


def test_draw_offset_monotone(tiny_table):
    prev = -100
    for u in range(256):
        off = draw_offset(u, tiny_table)
        if off is FAILURE:
            continue
        assert off >= prev
        prev = off


def test_shift_clamp_examples(tiny_spec):
    assert shift_clamp(0, 0, tiny_spec) == 0
    assert shift_clamp(4, 9, tiny_spec) == 6
    assert shift_clamp(0, -6, tiny_spec) == -2


def test_quantize_gk():
    spec = GridSpec.normalized(255, 6, Fraction(1, 2))
    assert list(quantize_gk([0.0, 1.0, 210 / 255], spec)) == [0, 255, 210]
    assert list(quantize_gk([-100.0, 100.0, float("inf")], spec)) == [-1530, 1785, 1785]
    # 0.5/255 and 1.5/255 are not exact binary fractions, so use L = 4 for exact ties
    s4 = GridSpec(L=4, k=2, sigma=1, n_bits=8)
    assert list(quantize_gk([0.125, 0.375, -0.125], s4)) == [0, 2, 0]
    with pytest.raises(ValueError):
        quantize_gk([float("nan")], spec)


@given(st.integers(-1530, 1785))
def test_quantize_grid_points_fixed(i):
    spec = GridSpec.normalized(255, 6, Fraction(1, 2))
    assert quantize_gk([i / 255], spec)[0] == i


@pytest.mark.parametrize("x", range(5))
def test_clamped_distribution_matches_exact(tiny_table, x):
    spec = tiny_table.spec
    exact = _exact_clamped(x, spec)
    emp = _empirical(x, tiny_table)
    tv = 0.5 * sum(abs(emp[a] - exact[a]) for a in exact)
    assert tv <= 13 / 256


@pytest.mark.parametrize("bits", [8, 16])
def test_per_offset_error(bits):
    spec = GridSpec(L=4, k=2, sigma=1, n_bits=bits)
    table = build_table(spec)
    s = spec.sigma_int
    u = np.arange(1 << bits, dtype=np.uint64)
    lo, hi = table.locate(u)
    good = lo == hi
    counts = np.bincount(lo[good].astype(np.int64), minlength=spec.n_entries)
    for j, i in enumerate(range(spec.t_min, spec.t_max + 1)):
        lo_b = -mpmath.inf if j == 0 else (mpmath.mpf(2 * i - 1) / 2) / float(s)
        hi_b = mpmath.inf if j == spec.n_entries - 1 else (mpmath.mpf(2 * i + 1) / 2) / float(s)
        exact = float(mpmath.ncdf(hi_b) - mpmath.ncdf(lo_b))
        assert abs(counts[j] / 2**bits - exact) <= 2 / 2**bits


def test_buffer_deterministic(tiny_table):
    a = build_noise_buffer(tiny_table, 50, 7, seed=3)
    b = build_noise_buffer(tiny_table, 50, 7, seed=3)
    c = build_noise_buffer(tiny_table, 50, 7, seed=4)
    assert a == b and a != c
    assert np.array_equal(uniform_draws(3, 0, 10), uniform_draws(3, 0, 10))


def test_buffer_chunking_does_not_change_contents(tiny_table):
    a = build_noise_buffer(tiny_table, 40, 9, seed=1)
    b = build_noise_buffer(tiny_table, 40, 9, seed=1, chunk=7)
    assert a == b


def test_buffer_matches_single_draws(tiny_table):
    buf = build_noise_buffer(tiny_table, 20, 5, seed=9)
    u = uniform_draws(9, 0, 100, 8)
    offs = buf.offsets().reshape(-1)
    fails = set(buf.fail_flat.tolist())
    for p in range(100):
        o = draw_offset(int(u[p]), tiny_table)
        if p in fails:
            assert o is FAILURE
        else:
            assert o == offs[p]


def test_pixel_level_failure_resolution(tiny_table):
    spec = tiny_table.spec
    buf = build_noise_buffer(tiny_table, 400, 1, seed=2)
    assert buf.fail_flat.size > 0
    for x in range(5):
        vals, failed = buf.apply(QuantizedImage([x], 4))
        for r in range(buf.n):
            flat = r
            if flat in set(buf.fail_flat.tolist()):
                k = list(buf.fail_flat).index(flat)
                lo_v = shift_clamp(x, spec.t_min + int(buf.index[r, 0]), spec)
                hi_v = shift_clamp(x, spec.t_min + int(buf.fail_hi[k]), spec)
                assert failed[r] == (lo_v != hi_v)
            else:
                assert not failed[r]


def test_failure_rate_within_bound(tiny_table):
    buf = build_noise_buffer(tiny_table, 20000, 1, seed=5)
    rate = buf.fail_flat.size / buf.n
    assert rate == pytest.approx(12 / 256, abs=0.01)


def test_large_buffer_has_no_failures(half_sigma_table):
    buf = build_noise_buffer(half_sigma_table, 1000, 3072, seed=0)
    assert buf.fail_flat.size == 0
    offs = buf.offsets()
    assert offs.min() >= half_sigma_table.spec.t_min and offs.max() <= half_sigma_table.spec.t_max
    assert abs(offs.std() / 255 - 0.5) < 0.005


def test_buffer_file_round_trip(tmp_path, tiny_table):
    buf = build_noise_buffer(tiny_table, 30, 4, seed=11, stream=2)
    path = tmp_path / "n.bin"
    write_noise(buf, path)
    assert read_noise(path) == buf
    data = bytearray(path.read_bytes())
    data[40] ^= 1
    with pytest.raises(ChecksumError):
        noise_from_bytes(bytes(data))
    with pytest.raises(FormatError):
        noise_from_bytes(bytes(path.read_bytes()[:12]))


def test_apply_rejects_mismatch(tiny_table):
    buf = build_noise_buffer(tiny_table, 5, 3)
    with pytest.raises(SpecMismatchError):
        buf.apply(QuantizedImage([1, 2], 4))
    with pytest.raises(SpecMismatchError):
        buf.apply(QuantizedImage([1, 2, 3], 255))


def test_with_failures_marks_rows(tiny_table):
    buf = build_noise_buffer(tiny_table, 10, 3, seed=0)
    mask = np.zeros((10, 3), dtype=bool)
    mask[4, 1] = True
    _, failed = buf.with_failures(mask).apply(QuantizedImage([2, 2, 2], 4))
    assert failed[4]


def test_quantized_image_validation():
    with pytest.raises(ValueError):
        QuantizedImage([0, 256])
    with pytest.raises(ValueError):
        QuantizedImage([0.5])
    im = QuantizedImage(np.array([[1, 2], [3, 4]]), 4)
    assert im.d == 4 and im == QuantizedImage([1, 2, 3, 4], 4)
