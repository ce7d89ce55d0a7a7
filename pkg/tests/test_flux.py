import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from weakclose.flux import (
    FluxError,
    FluxRangeError,
    IntervalSet,
    LinearFlux,
    PiecewiseLinearFlux,
    RationalBumpFlux,
    SampledFlux,
    Window,
    eval_flux,
    eval_flux_derivative,
    flux_from_dict,
    gamma_interval,
    hollig_flux,
    load_sampled_csv,
    monotone_mask,
    monotone_mask_bruteforce,
    monotone_set,
)


def test_point_values():
    assert eval_flux(RationalBumpFlux(4, 1), 1.0) == pytest.approx(2.0, abs=1e-15)
    assert eval_flux(LinearFlux(1.0), 3.0) == 3.0
    H = hollig_flux()
    assert eval_flux(H, 5.0) == pytest.approx(2.0)
    assert eval_flux(H, 2.0) == pytest.approx(2.0)
    assert eval_flux(H, 3.0) == pytest.approx(1.0)
    assert eval_flux(H, -1.0) == pytest.approx(-1.0)


def test_derivatives():
    assert eval_flux_derivative(RationalBumpFlux(4, 1), 0.0) == pytest.approx(4.0)
    assert eval_flux_derivative(LinearFlux(-2.5), 7.0) == -2.5
    H = hollig_flux()
    assert eval_flux_derivative(H, 2.5) == pytest.approx(-1.0)
    # knots average the one-sided slopes
    assert eval_flux_derivative(H, 2.0) == pytest.approx(0.0)
    assert eval_flux_derivative(H, 3.0) == pytest.approx(-0.25)


def test_bump_derivative_matches_central_difference():
    f = RationalBumpFlux(3.0, 0.7)
    p = np.linspace(-4, 4, 41)
    h = 1e-6
    assert np.allclose(f.derivative(p), (f(p + h) - f(p - h)) / (2 * h), atol=1e-7)


def test_sampled_interpolation_and_range_error():
    f = SampledFlux([0.0, 1.0, 3.0], [0.0, 2.0, 0.0])
    assert eval_flux(f, 0.5) == pytest.approx(1.0)
    assert eval_flux(f, 2.0) == pytest.approx(1.0)
    with pytest.raises(FluxRangeError, match=r"\[0.0, 3.0\]"):
        f(3.5)
    assert f.h_d == pytest.approx(3e-4)
    assert eval_flux_derivative(f, 0.5) == pytest.approx(2.0)
    assert eval_flux_derivative(f, 2.0) == pytest.approx(-1.0)


def test_construction_errors(tmp_path):
    with pytest.raises(FluxError, match="strictly increasing"):
        PiecewiseLinearFlux([(0, 0), (0, 1)])
    with pytest.raises(FluxError, match="row 2"):
        SampledFlux([0, 1, 1], [0, 1, 2])
    with pytest.raises(FluxError):
        SampledFlux([0], [0])
    with pytest.raises(FluxError, match="growth bound"):
        LinearFlux(3.0, growth_c1=1.0)
    bad = tmp_path / "bad.csv"
    bad.write_text("p,sigma\n0,0\n1,1\n0.5,2\n")
    with pytest.raises(FluxError, match="line 4"):
        load_sampled_csv(bad)
    nohead = tmp_path / "empty.csv"
    nohead.write_text("")
    with pytest.raises(FluxError, match="header"):
        load_sampled_csv(nohead)


def test_sampled_csv_roundtrip(tmp_path):
    path = tmp_path / "f.csv"
    path.write_text("p,sigma\n-1,-1\n0,0\n2,1\n")
    f = flux_from_dict({"kind": "sampled", "csv": "f.csv"}, tmp_path)
    assert eval_flux(f, 1.0) == pytest.approx(0.5)


def test_fingerprint_stable_and_distinct():
    assert RationalBumpFlux().fingerprint() == RationalBumpFlux(4.0, 1.0).fingerprint()
    assert RationalBumpFlux().fingerprint() != RationalBumpFlux(3.0).fingerprint()
    assert len(LinearFlux().fingerprint()) == 16


def test_window_validation():
    with pytest.raises(ValueError):
        Window(1.0, 0.0)
    with pytest.raises(ValueError):
        Window(0.0, 1.0, 8)
    w = Window(-1.0, 1.0, 17, 0.5)
    assert w.h == pytest.approx(0.125)
    assert w.n_pad == 4
    assert len(w.padded_grid) == 25


def test_interval_set_invariants():
    with pytest.raises(ValueError):
        IntervalSet(((1.0, 0.0),))
    with pytest.raises(ValueError):
        IntervalSet(((0.0, 2.0), (1.0, 3.0)))
    a = IntervalSet(((0.0, 2.0),), True, False)
    b = IntervalSet(((1.0, 3.0),), True, True)
    c = a.intersect(b)
    assert c.intervals == ((1.0, 2.0),)
    assert c.truncated_lo and not c.truncated_hi
    assert IntervalSet().empty
    assert a.margin(0.5) == 0.5
    assert a.margin(-1.0) == -1.0


def test_lambda_rational_bump_is_origin():
    lam = monotone_set(RationalBumpFlux(4, 1), Window(-6, 6, 257, 3.0))
    assert len(lam.intervals) == 1
    lo, hi = lam.intervals[0]
    assert lo == hi and abs(lo) <= 1.5 * 12 / 256
    assert not lam.truncated_lo and not lam.truncated_hi


def test_lambda_linear_is_window():
    lam = monotone_set(LinearFlux(1.0), Window(-6, 6, 257))
    assert lam.intervals == ((-6.0, 6.0),)
    assert lam.truncated_lo and lam.truncated_hi


def test_lambda_hollig_against_bruteforce():
    H = hollig_flux()
    win = Window(-2, 8, 2000)
    lam = monotone_set(H, win)
    # brute force on a wide grid so both rays are represented
    q = np.linspace(-40, 60, 4001)
    mask = monotone_mask_bruteforce(H, q)
    inside = (q >= -2) & (q <= 8)
    kept = q[inside & mask]
    assert kept[kept < 3].max() == pytest.approx(1.0, abs=0.03)
    assert kept[kept > 3].min() == pytest.approx(5.0, abs=0.03)
    h = win.h
    assert len(lam.intervals) == 2
    (a0, b0), (a1, b1) = lam.intervals
    assert a0 == -2 and b1 == pytest.approx(8.0)
    assert abs(b0 - 1.0) <= 2 * h and abs(a1 - 5.0) <= 2 * h
    assert lam.truncated_lo and lam.truncated_hi


def test_gamma_examples():
    H = hollig_flux()
    win = Window(-2, 8, 1025)
    lam = monotone_set(H, win)
    g3 = gamma_interval(H, lam, 3.0, (-10, 10))
    assert abs(g3.lo - 1.0) <= 2 * win.h and abs(g3.hi - 2.0) <= 2 * win.h * 1.0
    bump = RationalBumpFlux()
    lamb = monotone_set(bump, Window(-6, 6, 257))
    g2 = gamma_interval(bump, lamb, 2.0, (-3.0, 3.0))
    assert g2.intervals == ((0.0, 3.0),) and g2.truncated_hi
    lin = LinearFlux(1.0)
    wl = Window(-6, 6, 257)
    gl = gamma_interval(lin, monotone_set(lin, wl), 0.5, (-6, 6))
    assert gl.contains(0.5, 1e-12) and gl.width <= 2 * wl.h + 1e-12


def test_gamma_empty_lambda_is_window():
    g = gamma_interval(LinearFlux(), IntervalSet(), 0.3, (-2.0, 2.0))
    assert g.intervals == ((-2.0, 2.0),) and g.truncated_lo and g.truncated_hi


# property tests

def _end_slopes_ok(ks):
    p, s = zip(*ks)
    ends = ((s[1] - s[0]) / (p[1] - p[0]), (s[-1] - s[-2]) / (p[-1] - p[-2]))
    return all(e == 0 or abs(e) >= 0.01 for e in ends)


knot_lists = (
    st.lists(
        st.tuples(st.floats(-3, 3, allow_nan=False), st.floats(-3, 3, allow_nan=False)),
        min_size=2, max_size=6,
    )
    .map(lambda ks: sorted({round(p, 3): s for p, s in ks}.items()))
    .filter(lambda ks: len(ks) >= 2)
    .filter(_end_slopes_ok)
)


@settings(max_examples=80, deadline=None)
@given(knot_lists)
def test_monotone_scan_matches_pairwise_definition(knots):
    f = PiecewiseLinearFlux(knots)
    win = Window(-4, 4, 161)
    q, scan = monotone_mask(f, win)
    # far samples stand in for the analytic tails: the end segments are linear
    far = np.linspace(4, 1e5, 200)[1:]
    wide = np.concatenate([-far[::-1], q, far])
    brute = monotone_mask_bruteforce(f, wide, eps=1e-9)[len(far):len(far) + len(q)]
    assert np.array_equal(scan, brute)


@settings(max_examples=60, deadline=None)
@given(st.floats(-5.5, 5.5), st.floats(0.5, 6.0), st.floats(0.3, 3.0))
def test_gamma_contains_sigma(p, amp, scale):
    f = RationalBumpFlux(amp, scale)
    win = Window(-6, 6, 257)
    lam = monotone_set(f, win)
    g = gamma_interval(f, lam, p, (-50, 50))
    assert not g.empty
    assert g.contains(float(f(p)), 2 * win.h * f.lipschitz(-6, 6))


@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 5.0), st.floats(-5.0, 5.0))
def test_gamma_singleton_inside_lambda(a, p):
    f = LinearFlux(a)
    win = Window(-6, 6, 257)
    g = gamma_interval(f, monotone_set(f, win), p, (-100, 100))
    assert g.width <= 4 * win.h * a + 1e-12


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(0, 2)), min_size=0, max_size=4))
def test_interval_intersection_commutes(raw):
    ivs = []
    x = -10.0
    for start, width in sorted(raw):
        lo = max(start, x + 0.01)
        ivs.append((lo, lo + width))
        x = lo + width
    A = IntervalSet(tuple(ivs))
    B = IntervalSet(((-1.0, 1.5),))
    assert A.intersect(B) == B.intersect(A)
    for lo, hi in A.intersect(B).intervals:
        assert -1.0 <= lo <= hi <= 1.5


def test_lambda_refinement_stable():
    H = hollig_flux()
    ends = []
    for n in (257, 513, 1025):
        win = Window(-2, 8, n)
        lam = monotone_set(H, win)
        ends.append((lam.intervals[0][1], lam.intervals[1][0], win.h))
    for b0, a1, h in ends:
        assert abs(b0 - 1) <= h and abs(a1 - 5) <= h
