import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from freqrand.errors import DegenerateInputError, StructuralError
from freqrand.freq import band_pass_decompose
from freqrand.histmatch import build_cdf, match_fc, match_rows, match_values, variant_pairs


def scalar_match(source, reference, n_bins):
    """Slow reference implementation, one value at a time with plain loops.

    Source CDF: counts of full bins below the value's bin plus a linear share
    of its own bin. Reference inverse: walk the cumulative knots up to the
    last one not above q, then interpolate inside the next bin.
    """
    s_lo, s_hi = min(source), max(source)
    r_lo, r_hi = min(reference), max(reference)
    sw = (s_hi - s_lo) / n_bins
    rw = (r_hi - r_lo) / n_bins

    def bin_of(x, lo, w):
        return min(max(int(np.floor((x - lo) / w)), 0), n_bins - 1)

    s_counts = [0] * n_bins
    for x in source:
        s_counts[bin_of(x, s_lo, sw)] += 1
    r_counts = [0] * n_bins
    for x in reference:
        r_counts[bin_of(x, r_lo, rw)] += 1
    r_cum = [0.0]
    for cnt in r_counts:
        r_cum.append(r_cum[-1] + cnt / len(reference))

    out = []
    for x in source:
        k = bin_of(x, s_lo, sw)
        frac = min(max((x - s_lo) / sw - k, 0.0), 1.0)
        q = (sum(s_counts[:k]) + frac * s_counts[k]) / len(source)
        j = 0
        while j < n_bins and r_cum[j + 1] <= q:
            j += 1
        step = r_cum[min(j + 1, n_bins)] - r_cum[j]
        f = (q - r_cum[j]) / step if step > 0 else 0.0
        out.append(r_lo + (j + min(max(f, 0.0), 1.0)) * rw)
    return np.array(out)


def ks(a, b):
    a, b = np.sort(a), np.sort(b)
    grid = np.concatenate([a, b])
    return np.max(np.abs(np.searchsorted(a, grid, "right") / a.size - np.searchsorted(b, grid, "right") / b.size))


samples = arrays(np.float64, st.integers(2, 60), elements=st.floats(-50, 50, allow_nan=False, width=64))


def test_three_points_map_onto_three_points():
    out = match_values([1.0, 2.0, 3.0], [10.0, 20.0, 30.0], n_bins=256)
    np.testing.assert_allclose(out, [10.0, 20.0, 30.0], atol=1e-9)


@given(samples, samples, st.sampled_from([1, 4, 16, 256]))
def test_matches_scalar_reference(source, reference, n_bins):
    if np.ptp(source) < 1e-6 or np.ptp(reference) < 1e-6:
        return
    np.testing.assert_allclose(match_values(source, reference, n_bins), scalar_match(source, reference, n_bins),
                               atol=1e-9 * (1 + np.abs(reference).max()))


@given(samples)
def test_self_match_within_one_bin(source):
    out = match_values(source, source)
    width = np.ptp(source) / 256
    assert np.max(np.abs(out - source)) <= width + 1e-12


@given(samples, samples)
def test_output_is_monotone_and_in_reference_range(source, reference):
    out = match_values(source, reference)
    order = np.argsort(source, kind="stable")
    assert np.all(np.diff(out[order]) >= -1e-9 * (1 + np.abs(reference).max()))
    assert out.min() >= reference.min() - 1e-9 and out.max() <= reference.max() + 1e-9


@given(samples, samples, st.floats(0.1, 10), st.floats(-5, 5))
def test_affine_reference_commutes(source, reference, a, b):
    if np.ptp(reference) < 1e-3 or np.ptp(source) < 1e-3:
        return
    lhs = match_values(source, a * reference + b)
    rhs = a * match_values(source, reference) + b
    np.testing.assert_allclose(lhs, rhs, atol=1e-6 * (1 + a * np.abs(reference).max() + abs(b)))


def test_ks_improves_on_large_sets(rng):
    for dist in range(6):
        source = rng.normal(size=5000) * (1 + dist)
        reference = rng.gamma(2.0 + dist, size=4096)
        out = match_values(source, reference)
        assert ks(out, reference) <= ks(source, reference)
        assert ks(out, reference) < 0.02


def test_constant_reference_collapses_source():
    out = match_values([0.0, 1.0, 5.0], [7.0, 7.0])
    np.testing.assert_array_equal(out, 7.0)


def test_constant_source_maps_to_reference_median():
    out = match_values([3.0, 3.0, 3.0], [1.0, 2.0, 10.0, 11.0])
    np.testing.assert_allclose(out, 6.0)


@pytest.mark.parametrize("source,reference", [([], [1.0]), ([1.0], []), ([np.nan, 1.0], [1.0, 2.0])])
def test_unusable_samples_raise(source, reference):
    with pytest.raises(DegenerateInputError):
        match_values(source, reference)


@given(samples, st.integers(1, 300))
def test_cdf_invariants(x, n_bins):
    cdf = build_cdf(x, n_bins)
    assert cdf.bin_edges.shape == (n_bins + 1,)
    assert np.all(np.diff(cdf.bin_edges) > 0)
    assert np.all(np.diff(cdf.cumulative) >= 0)
    assert cdf.cumulative[-1] == pytest.approx(1.0)
    assert cdf.degenerate == bool(np.ptp(x) <= 1e-9 * max(1.0, np.abs(x).max()))


def test_cdf_counts(rng):
    x = np.array([0.0, 0.1, 0.2, 0.9, 1.0])
    cdf = build_cdf(x, 10)
    assert cdf.bin_width == pytest.approx(0.1)
    # 0.1 and 0.2 land on left edges of bins 1 and 2; 1.0 sits in the last bin
    np.testing.assert_allclose(cdf.cumulative[:3], [0.2, 0.4, 0.6])
    assert cdf.cumulative[8] == pytest.approx(0.6)
    assert cdf.cumulative[9] == pytest.approx(1.0)


@given(st.integers(1, 5), st.integers(2, 40), st.integers(0, 10**6))
def test_rows_match_independently(rows, n, seed):
    r = np.random.default_rng(seed)
    src = r.normal(size=(rows, n))
    ref = r.exponential(size=(rows, n + 3))
    got = match_rows(src, ref)
    for i in range(rows):
        np.testing.assert_array_equal(got[i], match_values(src[i], ref[i]))


def test_match_rows_validates_shapes():
    with pytest.raises(StructuralError):
        match_rows(np.zeros((2, 3)), np.zeros((3, 3)))


def test_variant_pairs_widths():
    m64 = np.ones(64, dtype=int)
    m64[[0, 40]] = 0
    v = variant_pairs(m64)
    assert v.shape == (3, 64) and v.sum() == 6 and v[:, 40].all()
    m192 = np.ones(192, dtype=int)
    m192[64 + 5] = 0
    v = variant_pairs(m192)
    assert v.sum() == 1 and v[1, 5]
    with pytest.raises(StructuralError):
        variant_pairs(np.ones(100))


def test_match_fc_touches_only_variant_pairs(rng):
    src = band_pass_decompose(rng.uniform(size=(32, 32, 3)))
    ref = band_pass_decompose(rng.uniform(size=(32, 32, 3)) ** 2)
    mask = np.ones(192, dtype=int)
    mask[[0, 64 + 3, 128 + 63]] = 0
    out = match_fc(src, ref, mask)
    variant = variant_pairs(mask)
    for c in range(3):
        for b in range(64):
            if variant[c, b]:
                np.testing.assert_array_equal(out.band(c, b), match_values(src.band(c, b), ref.band(c, b)))
            else:
                np.testing.assert_array_equal(out.band(c, b), src.band(c, b))


def test_match_fc_shape_mismatch():
    a = band_pass_decompose(np.zeros((8, 8, 3)))
    b = band_pass_decompose(np.zeros((16, 8, 3)))
    with pytest.raises(StructuralError):
        match_fc(a, b, np.zeros(64))
