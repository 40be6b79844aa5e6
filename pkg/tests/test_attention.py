import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from anra.attention import EXP_CLAMP, compute_rtc, confidence_mask, quantile_keep
from anra.errors import DegenerateAttentionError, EmptyFieldError, ParameterError
from anra.field import GridSpec, ScalarField


def field(vals, mask=None):
    v = np.atleast_2d(np.asarray(vals, dtype=np.float64))
    return ScalarField(GridSpec(v.shape[1], v.shape[0]), v, mask)


def test_hand_example():
    # exp gives 1, 2, 3 -> 0, 1, 2 -> 0, 1/3, 2/3
    w = compute_rtc(field([0.0, np.log(2), np.log(3)])).weights.values[0]
    assert np.allclose(w, [0, 1 / 3, 2 / 3], atol=1e-15)


def test_sign_is_ignored():
    a = compute_rtc(field([-1.0, 0.5, 2.0])).weights.values
    b = compute_rtc(field([1.0, -0.5, -2.0])).weights.values
    assert np.array_equal(a, b)


def test_single_pixel_is_degenerate():
    with pytest.raises(DegenerateAttentionError):
        compute_rtc(field([[3.0]]))


def test_uniform_is_degenerate():
    with pytest.raises(DegenerateAttentionError):
        compute_rtc(field(np.full((4, 4), 0.3)))


def test_all_masked_is_empty():
    with pytest.raises(EmptyFieldError):
        compute_rtc(field(np.zeros((2, 2)), np.zeros((2, 2), bool)))


def test_masked_pixels_excluded():
    m = np.array([[True, True, False]])
    r = compute_rtc(field([[0.0, np.log(2), 50.0]], m))
    assert r.weights.values[0, 2] == 0.0
    assert np.allclose(r.weights.values[0, :2], [0, 1])


def test_exp_clamp_counts():
    r = compute_rtc(field([0.0, 1.0, 1e4]))
    assert r.clamped == 1
    assert np.all(np.isfinite(r.weights.values))
    assert r.weights.values.sum() == pytest.approx(1.0, abs=1e-12)
    assert EXP_CLAMP == 700


rates = arrays(np.float64, st.tuples(st.integers(2, 12), st.integers(2, 12)),
               elements=st.floats(-20, 20, allow_nan=False))


@settings(max_examples=100, deadline=None)
@given(rates)
def test_rtc_invariants(v):
    f = field(v)
    try:
        r = compute_rtc(f)
    except DegenerateAttentionError:
        assert np.ptp(np.exp(np.abs(v))) == 0
        return
    w = r.weights.values
    assert np.all(w >= 0)
    assert w.min() == 0.0
    assert abs(w.sum() - 1) < 1e-12
    # strictly increasing map: pairwise order is preserved
    e = np.exp(np.abs(v)).ravel()
    ww = w.ravel()
    order = np.argsort(e, kind="stable")
    assert np.all(np.diff(ww[order]) >= 0)


def test_confidence_mask_examples():
    rtc = compute_rtc(field([0.0, np.log(2), np.log(3)]))
    cut = confidence_mask(rtc, 0.5)
    # median of [0, 1/3, 2/3] is 1/3 and ties are kept
    assert cut.kept.tolist() == [[False, True, True]]
    assert cut.retained_mass == pytest.approx(1.0)
    assert np.allclose(cut.weights.values[0], [0, 1 / 3, 2 / 3])


def test_confidence_mask_sorting_oracle():
    rng = np.random.default_rng(5)
    rtc = compute_rtc(field(rng.normal(size=(9, 11))))
    w = rtc.weights.values.ravel()
    for q in (0.1, 0.5, 0.9, 0.975):
        thr = np.sort(w)[int(np.floor(q * (w.size - 1)))]
        cut = confidence_mask(rtc, q)
        assert np.array_equal(cut.kept.ravel(), w >= thr)
        assert cut.retained_mass == pytest.approx(sum(x for x in w if x >= thr), rel=1e-12)


def test_confidence_mask_small_quantile_keeps_all():
    rng = np.random.default_rng(0)
    rtc = compute_rtc(field(rng.normal(size=(6, 6))))
    cut = confidence_mask(rtc, 1e-9)
    # the zero-weight minimum pixel sits exactly at the quantile
    assert cut.kept.sum() == 36
    assert cut.retained_mass == pytest.approx(1.0, abs=1e-12)


def test_uniform_stays_uniform_after_cut():
    w = np.full(10, 0.1)
    keep = quantile_keep(w, 0.7)
    assert keep.all()
    kept = w[keep] / w[keep].sum()
    assert np.allclose(kept, kept[0])


@pytest.mark.parametrize("q", [0.0, 1.0, -0.1, 1.5])
def test_quantile_bounds(q):
    rtc = compute_rtc(field([0.0, 1.0, 2.0]))
    with pytest.raises(ParameterError):
        confidence_mask(rtc, q)


@settings(max_examples=50, deadline=None)
@given(rates, st.floats(0.01, 0.99))
def test_cut_renormalizes(v, q):
    try:
        rtc = compute_rtc(field(v))
    except DegenerateAttentionError:
        return
    cut = confidence_mask(rtc, q)
    w = rtc.weights.values
    assert cut.kept.any()
    assert abs(cut.weights.values[cut.kept].sum() - 1) < 1e-12
    assert cut.retained_mass == pytest.approx(w[cut.kept].sum(), rel=1e-12)
    assert np.all(w[cut.kept] >= w[~cut.kept].max(initial=-1))
