import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from weakclose._conjugate import conj_rows
from weakclose.flux import LinearFlux, RationalBumpFlux, Window, hollig_flux
from weakclose.hulls import (
    EnvelopeRangeError,
    EnvelopeTable,
    LaminateCertificate,
    _dual_axis,
    biconjugate_bruteforce,
    convex_envelope,
    default_zero_tol,
    g_eval,
    g_lambda_upper,
    legendre_conjugate_1d,
    residual_surface,
    sigma_interval,
    z_interval,
)


def _F(surface, p, beta):
    i = int(np.argmin(np.abs(surface.p_axis - p)))
    j = int(np.argmin(np.abs(surface.beta_axis - beta)))
    return surface.values[i, j]


def test_residual_surface_values(bump_surface, linear_surface):
    assert _F(linear_surface, 2.0, 2.0) == pytest.approx(0.0, abs=1e-24)
    # the padded bump axis is not aligned with p = 1; compare at the nearest node
    i = int(np.argmin(np.abs(bump_surface.p_axis - 1.0)))
    q = bump_surface.p_axis[i]
    assert _F(bump_surface, q, 0.0) == pytest.approx((4 * q / (1 + q * q)) ** 2, rel=1e-14)
    assert abs(_F(bump_surface, q, 0.0) - 4.0) <= 8 * abs(q - 1) ** 2 + 1e-12
    H = residual_surface(hollig_flux(), Window(-2, 8, 257), Window(0, 4, 257))
    assert _F(H, 3.0, 1.0) == pytest.approx(0.0, abs=1e-24)
    assert np.all(bump_surface.values >= 0)
    assert bump_surface.values[bump_surface.inner_p, bump_surface.inner_beta].shape == (257, 257)


def test_conjugate_quadratic_self_dual():
    x = np.linspace(-4, 4, 257)
    s, fs = legendre_conjugate_1d(x, 0.5 * x**2)
    h = x[1] - x[0]
    inner = np.abs(s) <= 3.5
    assert np.max(np.abs(fs[inner] - 0.5 * s[inner] ** 2)) <= 2 * h * h


def test_conjugate_of_zero_is_support_function():
    x = np.linspace(-1, 1, 65)
    s = np.linspace(-3, 3, 61)
    _, fs = legendre_conjugate_1d(x, np.zeros_like(x), s)
    assert np.allclose(fs, np.abs(s), atol=1e-14)


def test_double_conjugate_fixes_convex_samples():
    x = np.linspace(-2, 2, 129)
    f = np.abs(x) ** 3 + 0.3 * x
    h = x[1] - x[0]
    # dual lattice must contain every chord slope to reproduce the nodes
    slopes = np.diff(f) / h
    s = np.unique(np.concatenate([slopes, [slopes[0] - 1, slopes[-1] + 1]]))
    _, fs = legendre_conjugate_1d(x, f, s)
    _, back = legendre_conjugate_1d(s, fs, x)
    assert np.max(np.abs(back - f)) <= 1e-12 * np.max(np.abs(f))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=3, max_size=30), st.integers(1, 40))
def test_conj_rows_matches_direct_max(vals, m):
    f = np.array(vals)
    x = np.linspace(-1, 1, len(f))
    s = np.linspace(-7, 7, m) if m > 1 else np.array([0.3])
    out, arg = conj_rows(x, f[None, :], s)
    direct = np.max(s[:, None] * x[None, :] - f[None, :], axis=1)
    assert np.allclose(out[0], direct, atol=1e-12)
    assert np.allclose(s * x[arg[0]] - f[arg[0]], direct, atol=1e-12)
    # Fenchel-Young
    assert np.all(f[None, :] + out[0][:, None] >= s[:, None] * x[None, :] - 1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(5, 9), st.integers(4, 8))
def test_biconjugate_matches_bruteforce(seed, n, m):
    rng = np.random.default_rng(seed)
    P = np.linspace(-1, 1, n)
    B = np.linspace(-0.5, 0.5, m)
    F = rng.uniform(0, 2, (n, m))
    from weakclose.hulls import SurfaceTable
    surf = SurfaceTable(P, B, F, slice(0, n), slice(0, m))
    env = convex_envelope(surf, flag_boundary=False)
    S = _dual_axis(F, 0, P[1] - P[0])
    T = _dual_axis(F, 1, B[1] - B[0])
    brute = biconjugate_bruteforce(P, B, F, S, T)
    assert np.allclose(env.values, np.minimum(brute, F), atol=1e-10)
    assert np.all(env.values <= F + 1e-12)


def test_linear_envelope_exact(linear_env):
    P, B = np.meshgrid(linear_env.p_axis, linear_env.beta_axis, indexing="ij")
    err = np.abs(linear_env.values - (P - B) ** 2)
    ok = ~linear_env.boundary
    assert ok.mean() > 0.9
    assert err[ok].max() <= 1e-9 * linear_env.meta["max_F"]


def _midpoint_violation(g):
    """Largest ``g(mid) - (g(lo) + g(hi)) / 2`` along axes and both diagonals."""
    n0, n1 = g.shape
    viol = 0.0
    for di, dj in ((1, 0), (0, 1), (1, 1), (1, -1)):
        j_lo = max(0, -2 * dj)
        j_hi = n1 - max(0, 2 * dj)
        rows = n0 - 2 * di
        lo = g[:rows, j_lo:j_hi]
        mid = g[di:di + rows, j_lo + dj:j_hi + dj]
        hi = g[2 * di:2 * di + rows, j_lo + 2 * dj:j_hi + 2 * dj]
        viol = max(viol, float(np.max(mid - 0.5 * (lo + hi))))
    return viol


def test_envelope_invariants(bump_env, bump_surface):
    g = bump_env.values
    F = bump_surface.values[bump_surface.inner_p, bump_surface.inner_beta]
    assert np.all(g >= -1e-12) and np.all(g <= F + 1e-12)
    assert _midpoint_violation(g) <= 1e-9 * bump_env.meta["max_F"]
    # the helper does detect the nonconvexity of F itself
    assert _midpoint_violation(F) > 1e-3


def test_envelope_idempotent(bump_env):
    again = convex_envelope(bump_env.as_surface(), dual=(bump_env.dual_s, bump_env.dual_t), flag_boundary=False)
    scale = float(np.max(bump_env.values))
    assert np.max(np.abs(again.values - bump_env.values)) <= 1e-12 * max(scale, 1.0)


def test_bump_strip(bump_env):
    h = bump_env.h_beta
    strip = np.abs(bump_env.beta_axis) <= 1.9 + 1e-12
    assert np.max(bump_env.values[:, strip]) <= 1e-12
    assert g_eval(bump_env, 0.0, 1.0) == pytest.approx(0.0, abs=1e-12)
    z = z_interval(bump_env, 1.7)
    assert abs(z.lo + 2) <= 2 * h and abs(z.hi - 2) <= 2 * h
    assert not z.truncated_lo and not z.truncated_hi


def test_bump_sigma(bump, bump_env, bump_lambda):
    h = bump_env.h_beta
    s0 = sigma_interval(bump, bump_env, bump_lambda, 0.0)
    assert abs(s0.lo + 2) <= 2 * h and abs(s0.hi - 2) <= 2 * h
    s2 = sigma_interval(bump, bump_env, bump_lambda, 2.0)
    assert s2.lo == 0.0 and abs(s2.hi - 2) <= 2 * h
    sm = sigma_interval(bump, bump_env, bump_lambda, -2.0)
    assert abs(sm.lo + 2) <= 2 * h and sm.hi == 0.0


def test_hollig_zero_set(hollig_env):
    col_b = hollig_env.beta_axis
    g3 = g_eval(hollig_env, np.full(len(col_b), 3.0), col_b)
    below = col_b <= 2.5 - 2 * hollig_env.h_beta
    assert np.max(g3[below]) <= default_zero_tol(hollig_env, 3.0)
    assert g_eval(hollig_env, 3.0, 3.0) > 0.1
    z = z_interval(hollig_env, 3.0)
    assert z.truncated_lo and not z.truncated_hi
    assert z.hi == pytest.approx(2.5, abs=2 * hollig_env.h_beta)
    # frozen: this grid gives 2.5059 (within one beta step)
    assert z.hi == pytest.approx(2.505906, abs=1e-5)


def test_hollig_sigma(hollig_env, hollig_lambda):
    s = sigma_interval(hollig_flux(), hollig_env, hollig_lambda, 1.5)
    assert abs(s.lo - 1.0) <= 0.05 and abs(s.hi - 1.5) <= 0.05


def test_linear_zero_set_is_point(linear_env):
    tol = default_zero_tol(linear_env, 0.0)
    z = z_interval(linear_env, 0.0, tol)
    assert abs(z.lo) <= 2 * math.sqrt(tol) and abs(z.hi) <= 2 * math.sqrt(tol)


def test_g_eval_nodes_and_range(bump_env):
    i, j = 40, 200
    assert g_eval(bump_env, bump_env.p_axis[i], bump_env.beta_axis[j]) == pytest.approx(bump_env.values[i, j], abs=1e-15)
    with pytest.raises(EnvelopeRangeError, match="outside envelope window"):
        g_eval(bump_env, 7.0, 0.0)


def test_sigma_contains_flux_value(bump, bump_env, bump_lambda, hollig_env, hollig_lambda):
    for flux, env, lam, ps in (
        (bump, bump_env, bump_lambda, np.linspace(-5.5, 5.5, 23)),
        (hollig_flux(), hollig_env, hollig_lambda, np.linspace(-1.5, 7.5, 19)),
    ):
        for p in ps:
            val = float(flux(p))
            if not env.beta_axis[0] <= val <= env.beta_axis[-1]:
                continue
            tol = 2 * env.h_beta + 2 * env.h_p * flux.lipschitz(-6, 8)
            assert z_interval(env, p).contains(val, tol)
            assert sigma_interval(flux, env, lam, p).contains(val, tol)


def test_g_lambda_examples(bump):
    val, cert = g_lambda_upper(bump, 0.7, float(bump(0.7)), 2.0)
    assert val == 0.0 and cert.a == 0.0 and cert.b == 0.0
    val, cert = g_lambda_upper(bump, 0.0, 1.0, 4.0)
    assert val <= 1e-3
    # many laminates reach beta = 1; check the one returned is consistent
    assert cert.a > 0 > cert.b
    assert cert.theta * cert.a**2 + (1 - cert.theta) * cert.b**2 < 16.0
    assert (cert.achieved_beta - 1.0) ** 2 == pytest.approx(val, abs=1e-15)
    assert cert.theta == pytest.approx(-cert.b / (cert.a - cert.b))
    val, _ = g_lambda_upper(LinearFlux(1.0), 0.0, 1.0, 3.0)
    assert val == pytest.approx(1.0)
    with pytest.raises(ValueError):
        g_lambda_upper(bump, 0.0, 1.0, 0.0)


def test_mean_bound_is_not_a_g_lambda_bound(bump):
    # mean-flux laminates reach beta < 0 at p > 0 although Sigma(p) is [0, 2]
    mean, cert = g_lambda_upper(bump, 0.1, -0.5, 6.0)
    assert mean <= 1e-3 and cert.a > 0 > cert.b
    pw, _ = g_lambda_upper(bump, 0.1, -0.5, 6.0, pointwise=True)
    # default search radius 4; frozen 0.10592
    assert pw == pytest.approx(0.10592495, abs=1e-7)


def test_pointwise_bound_examples(bump):
    assert g_lambda_upper(bump, 0.7, float(bump(0.7)), 2.0, pointwise=True)[0] == 0.0
    # sigma = 1 only at p > 0: the bound stays positive for a bounded search
    assert g_lambda_upper(bump, 0.0, 1.0, 4.0, pointwise=True)[0] > 0.2
    # around p = 2 both sigma = 1.6 preimages (0.5 and 2) straddle p = 1
    val, cert = g_lambda_upper(bump, 1.0, 1.6, 4.0, (4.0, 801), pointwise=True)
    assert val <= 1e-3 and cert.a > 0 > cert.b


def test_certificate_invariants(bump):
    c = LaminateCertificate.build(bump, 0.0, 1.0, 1.0, -2.0, 2.0 / 3.0)
    assert c.theta * c.a + (1 - c.theta) * c.b == pytest.approx(0.0, abs=1e-15)
    assert c.achieved_beta == pytest.approx(0.8)
    assert c.residual == pytest.approx(0.2)
    assert c.gradients == pytest.approx((1.0, -2.0))


@settings(max_examples=30, deadline=None)
@given(st.floats(-5.0, 5.0), st.floats(-2.8, 2.8), st.floats(0.5, 6.0))
def test_g_below_g_lambda(bump_env, bump_lambda, p, beta, lam):
    bump = RationalBumpFlux()
    val, cert = g_lambda_upper(bump, p, beta, lam, (4.0, 201))
    slack = 2 * max(bump_env.h_p, bump_env.h_beta) ** 2 * 20
    assert g_eval(bump_env, p, beta) <= val + slack
    tol = default_zero_tol(bump_env, p)
    # the membership implication needs the pointwise laminate bound
    pw, _ = g_lambda_upper(bump, p, beta, lam, (4.0, 201), pointwise=True)
    assert pw >= val - 1e-15
    if pw < tol:
        S = sigma_interval(bump, bump_env, bump_lambda, p)
        assert S.contains(beta, 2 * bump_env.h_beta + 2 * bump_env.h_p * 4)


def test_envelope_table_roundtrip(tmp_path, linear_env):
    linear_env.to_csv(tmp_path / "env.csv")
    head = (tmp_path / "env.csv").read_text().splitlines()
    assert head[0] == "p,beta,g,boundary_flag"
    assert len(head) == 1 + 257 * 257
    linear_env.save(tmp_path / "env.npz")
    back = EnvelopeTable.load(tmp_path / "env.npz")
    assert np.array_equal(back.values, linear_env.values)
    assert np.array_equal(back.boundary, linear_env.boundary)
    assert back.meta["fingerprint"] == linear_env.meta["fingerprint"]


def test_refinement_moves_endpoints_by_order_h():
    H = hollig_flux()
    tops = []
    for n in (129, 257):
        env = convex_envelope(residual_surface(H, Window(-2, 8, n, 30.0), Window(0, 4, n, 1.0)))
        tops.append((z_interval(env, 3.0).hi, env.h_beta))
    (a, ha), (b, hb) = tops
    assert abs(a - b) <= 2 * ha
    assert abs(b - 2.5) <= abs(a - 2.5) + hb
