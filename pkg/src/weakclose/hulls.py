"""Convex envelope of ``(p, beta) -> |sigma(p) - beta|^2`` and its level sets.

The envelope is the discrete biconjugate ``F**`` computed by four passes of
the 1-D conjugate (along beta, along p, then back). The dual grids are
centred on zero with the primal spacing, which makes the biconjugate exact
whenever the true gradients of a convex input fall on the dual lattice.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from ._conjugate import conj_rows
from .flux import FluxModel, FluxRangeError, IntervalSet, Window, gamma_interval

__all__ = [
    "SurfaceTable",
    "EnvelopeTable",
    "LaminateCertificate",
    "residual_surface",
    "legendre_conjugate_1d",
    "convex_envelope",
    "biconjugate_bruteforce",
    "g_eval",
    "default_zero_tol",
    "z_interval",
    "sigma_interval",
    "g_lambda_upper",
]


class EnvelopeRangeError(FluxRangeError):
    pass


@dataclass(frozen=True)
class SurfaceTable:
    """Values ``F[i, j]`` on a padded tensor grid.

    ``inner_p`` / ``inner_beta`` are slices selecting the unpadded window.
    """

    p_axis: np.ndarray
    beta_axis: np.ndarray
    values: np.ndarray
    inner_p: slice
    inner_beta: slice
    fingerprint: str = ""
    # set when values are (sigma(p) - beta)^2 for every real beta, so the
    # beta pass of the conjugate has the closed form t sigma + t^2 / 4
    sigma: np.ndarray | None = None

    @property
    def h_p(self) -> float:
        return float(self.p_axis[1] - self.p_axis[0])

    @property
    def h_beta(self) -> float:
        return float(self.beta_axis[1] - self.beta_axis[0])


@dataclass(frozen=True)
class EnvelopeTable:
    p_axis: np.ndarray
    beta_axis: np.ndarray
    values: np.ndarray
    boundary: np.ndarray
    dual_s: np.ndarray
    dual_t: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def h_p(self) -> float:
        return float(self.p_axis[1] - self.p_axis[0])

    @property
    def h_beta(self) -> float:
        return float(self.beta_axis[1] - self.beta_axis[0])

    def as_surface(self) -> SurfaceTable:
        return SurfaceTable(
            self.p_axis, self.beta_axis, self.values,
            slice(0, len(self.p_axis)), slice(0, len(self.beta_axis)),
            self.meta.get("fingerprint", ""),
        )

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["p", "beta", "g", "boundary_flag"])
            for i, p in enumerate(self.p_axis):
                for j, b in enumerate(self.beta_axis):
                    w.writerow([repr(float(p)), repr(float(b)), repr(float(self.values[i, j])), int(self.boundary[i, j])])

    def save(self, path) -> None:
        np.savez_compressed(
            path, p_axis=self.p_axis, beta_axis=self.beta_axis, values=self.values,
            boundary=self.boundary, dual_s=self.dual_s, dual_t=self.dual_t,
            meta_keys=np.array(list(self.meta.keys())),
            meta_vals=np.array([str(v) for v in self.meta.values()]),
        )

    @classmethod
    def load(cls, path) -> "EnvelopeTable":
        with np.load(path) as z:
            meta = dict(zip(z["meta_keys"].tolist(), z["meta_vals"].tolist()))
            return cls(z["p_axis"], z["beta_axis"], z["values"], z["boundary"], z["dual_s"], z["dual_t"], meta)


@dataclass(frozen=True)
class LaminateCertificate:
    """Two-gradient witness: offsets ``a``, ``b`` around ``achieved_p`` with
    zero mean, so the gradients are ``achieved_p + a`` and ``achieved_p + b``."""

    a: float
    b: float
    theta: float
    achieved_p: float
    achieved_beta: float
    residual: float

    @property
    def gradients(self) -> tuple[float, float]:
        return self.achieved_p + self.a, self.achieved_p + self.b

    @classmethod
    def build(cls, flux: FluxModel, p: float, beta: float, a: float, b: float, theta: float):
        mean_flux = theta * float(flux(p + a)) + (1.0 - theta) * float(flux(p + b))
        return cls(a, b, theta, p + theta * a + (1.0 - theta) * b, mean_flux, abs(mean_flux - beta))


def residual_surface(flux: FluxModel, window_p: Window, window_beta: Window) -> SurfaceTable:
    """``F(p_i, beta_j) = (sigma(p_i) - beta_j)^2`` on the padded grids."""
    p = window_p.padded_grid
    lo, hi = flux.domain()
    keep = (p >= lo) & (p <= hi)
    first = int(np.argmax(keep))
    p = p[keep]
    beta = window_beta.padded_grid
    i0 = window_p.n_pad - first
    j0 = window_beta.n_pad
    if i0 < 0:
        raise EnvelopeRangeError(f"p window starts below the flux domain {flux.domain()}")
    if i0 + window_p.n_p > len(p):
        raise EnvelopeRangeError(f"p window ends above the flux domain {flux.domain()}")
    values = (flux(p)[:, None] - beta[None, :]) ** 2
    return SurfaceTable(
        p, beta, values,
        slice(i0, i0 + window_p.n_p), slice(j0, j0 + window_beta.n_p),
        flux.fingerprint(),
        flux(p),
    )


def legendre_conjugate_1d(x, f, s=None):
    """Discrete conjugate ``f*(s_i) = max_j (s_i x_j - f_j)``.

    The dual grid defaults to ``x`` itself. Returns ``(s, fstar)``.
    """
    x = np.ascontiguousarray(x, dtype=float)
    f = np.ascontiguousarray(f, dtype=float)
    s = x if s is None else np.ascontiguousarray(s, dtype=float)
    out, _ = conj_rows(x, f[None, :], s)
    return s, out[0]


def _dual_axis(values: np.ndarray, axis: int, h: float) -> np.ndarray:
    slopes = np.abs(np.diff(values, axis=axis)) / h
    extent = float(np.max(slopes)) if slopes.size else 0.0
    k = int(math.ceil(extent / h)) + 1
    return h * np.arange(-k, k + 1, dtype=float)


def _biconjugate(P, B, F, S, T, Pi, Bi, sigma=None):
    # F*(s, t) = max_i (s p_i + max_j (t beta_j - F_ij))
    if sigma is None:
        H1, _ = conj_rows(B, F, T)
    else:
        H1 = sigma[:, None] * T[None, :] + 0.25 * T[None, :] ** 2
    Fstar, _ = conj_rows(P, np.ascontiguousarray(-H1.T), S)
    # F**(p, beta) = max_l (p s_l + max_k (beta t_k - F*_kl))
    K1, _ = conj_rows(T, np.ascontiguousarray(Fstar.T), Bi)
    G, _ = conj_rows(S, np.ascontiguousarray(-K1.T), Pi)
    return G.T.copy()


def convex_envelope(surface: SurfaceTable, dual: tuple | None = None, flag_boundary: bool = True) -> EnvelopeTable:
    """Discrete biconjugate of ``surface``, restricted to its unpadded window.

    ``dual`` optionally fixes the dual grids ``(s, t)``; by default they are
    centred at zero with the primal spacing and cover every difference
    quotient of the table.

    A cell is flagged boundary-affected when its value moves by more than
    ``1e-9 max F`` once the outer half of the pad is dropped, i.e. when the
    hull there leans on samples near the padded edge.
    """
    P = np.ascontiguousarray(surface.p_axis, dtype=float)
    B = np.ascontiguousarray(surface.beta_axis, dtype=float)
    F = np.ascontiguousarray(surface.values, dtype=float)
    if dual is None:
        S = _dual_axis(F, 0, surface.h_p)
        T = _dual_axis(F, 1, surface.h_beta)
    else:
        S, T = (np.ascontiguousarray(d, dtype=float) for d in dual)
    ip, ib = surface.inner_p, surface.inner_beta
    Pi = np.ascontiguousarray(P[ip])
    Bi = np.ascontiguousarray(B[ib])
    sig = None if surface.sigma is None else np.ascontiguousarray(surface.sigma, dtype=float)
    g = _biconjugate(P, B, F, S, T, Pi, Bi, sig)
    # the hull never exceeds the samples; clip rounding overshoot
    g = np.minimum(g, F[ip, ib])
    max_F = float(np.max(F))

    boundary = np.zeros(g.shape, dtype=bool)
    if flag_boundary:
        cp = (ip.start + 1) // 2, (len(P) - ip.stop + 1) // 2
        cb = (ib.start + 1) // 2, (len(B) - ib.stop + 1) // 2
        ps = slice(cp[0], len(P) - cp[1])
        bs = slice(cb[0], len(B) - cb[1])
        g_in = _biconjugate(
            np.ascontiguousarray(P[ps]), np.ascontiguousarray(B[bs]),
            np.ascontiguousarray(F[ps, bs]), S, T, Pi, Bi,
            None if sig is None else np.ascontiguousarray(sig[ps]),
        )
        g_in = np.minimum(g_in, F[ip, ib])
        boundary = np.abs(g_in - g) > 1e-9 * max_F
        # cells on the window edge itself are always exposed
        if ip.start == 0:
            boundary[0, :] = True
        if ip.stop == len(P):
            boundary[-1, :] = True
        if sig is None and ib.start == 0:
            boundary[:, 0] = True
        if sig is None and ib.stop == len(B):
            boundary[:, -1] = True
    meta = {
        "fingerprint": surface.fingerprint,
        "pad_p": int(ip.start),
        "pad_beta": int(ib.start),
        "h_p": surface.h_p,
        "h_beta": surface.h_beta,
        "max_F": max_F,
    }
    return EnvelopeTable(Pi.copy(), Bi.copy(), g, boundary, S, T, meta)


def biconjugate_bruteforce(P, B, F, S, T) -> np.ndarray:
    """Direct O(N^2 M^2) biconjugate over the same dual grids. Test oracle."""
    P, B, F, S, T = (np.asarray(a, dtype=float) for a in (P, B, F, S, T))
    lin = S[:, None, None, None] * P[None, None, :, None] + T[None, :, None, None] * B[None, None, None, :]
    Fstar = np.max(lin - F[None, None, :, :], axis=(2, 3))       # (m_s, m_t)
    lin2 = P[:, None, None, None] * S[None, None, :, None] + B[None, :, None, None] * T[None, None, None, :]
    return np.max(lin2 - Fstar[None, None, :, :], axis=(2, 3))   # (n_p, n_b)


def g_eval(env: EnvelopeTable, p, beta):
    """Bilinear interpolation of the envelope table."""
    p = np.asarray(p, dtype=float)
    beta = np.asarray(beta, dtype=float)
    P, B = env.p_axis, env.beta_axis
    eps = 1e-9 * max(env.h_p, env.h_beta)
    bad = (p < P[0] - eps) | (p > P[-1] + eps) | (beta < B[0] - eps) | (beta > B[-1] + eps)
    if np.any(bad):
        idx = np.flatnonzero(np.ravel(bad))[0]
        raise EnvelopeRangeError(
            f"query (p={np.ravel(p * np.ones_like(beta))[idx]}, beta={np.ravel(beta * np.ones_like(p))[idx]}) "
            f"outside envelope window [{P[0]}, {P[-1]}] x [{B[0]}, {B[-1]}]"
        )
    fi = np.clip((p - P[0]) / env.h_p, 0, len(P) - 1)
    fj = np.clip((beta - B[0]) / env.h_beta, 0, len(B) - 1)
    i = np.minimum(np.floor(fi).astype(int), len(P) - 2)
    j = np.minimum(np.floor(fj).astype(int), len(B) - 2)
    u, w = fi - i, fj - j
    V = env.values
    out = (
        (1 - u) * (1 - w) * V[i, j] + u * (1 - w) * V[i + 1, j]
        + (1 - u) * w * V[i, j + 1] + u * w * V[i + 1, j + 1]
    )
    return float(out) if out.ndim == 0 else out


def _column(env: EnvelopeTable, p: float) -> np.ndarray:
    return g_eval(env, np.full(len(env.beta_axis), p), env.beta_axis)


def default_zero_tol(env: EnvelopeTable, p: float) -> float:
    """``10 h_beta^2 kappa`` with ``kappa`` the local quadratic coefficient
    of the envelope along beta (half its largest second difference)."""
    col = _column(env, p)
    h = env.h_beta
    second = np.diff(col, 2) / h**2
    i = int(np.clip(np.rint((p - env.p_axis[0]) / env.h_p), 0, len(env.p_axis) - 1))
    clean = ~(env.boundary[i, :-2] | env.boundary[i, 1:-1] | env.boundary[i, 2:])
    if clean.any():
        second = second[clean]
    kappa = 0.5 * float(np.max(second)) if second.size else 1.0
    kappa = max(kappa, 1e-12)
    return 10.0 * h * h * kappa


def z_interval(env: EnvelopeTable, p: float, tol: float | None = None) -> IntervalSet:
    """Zero set ``Z(p)`` of the envelope column at ``p`` as one interval.

    Nodes with ``g <= tol`` count as inside. Each finite endpoint is then
    placed where the local quadratic model ``g ~ kappa d^2`` vanishes, by
    extrapolating ``sqrt(g)`` linearly from the first two outside nodes;
    without that step the interval overshoots by ``sqrt(tol / kappa)``.
    """
    if tol is None:
        tol = default_zero_tol(env, p)
    col = _column(env, p)
    B = env.beta_axis
    n = len(B)
    idx = np.flatnonzero(col <= tol)
    if idx.size == 0:
        return IntervalSet((), False, False, env.h_beta)
    j0, j1 = int(idx[0]), int(idx[-1])
    root = np.sqrt(np.maximum(col, 0.0))

    def edge(j_in, step):
        o1, o2 = j_in + step, j_in + 2 * step
        if not (0 <= o2 < n) or root[o2] <= root[o1]:
            return float(B[j_in])
        x = float(B[o1] - (B[o2] - B[o1]) * root[o1] / (root[o2] - root[o1]))
        lo, hi = sorted((float(B[j0] if step > 0 else B[j1]), float(B[o1])))
        return min(max(x, lo), hi)

    lo = float(B[0]) if j0 == 0 else edge(j0, -1)
    hi = float(B[-1]) if j1 == n - 1 else edge(j1, +1)
    if lo > hi:
        lo = hi = 0.5 * (lo + hi)
    return IntervalSet(((lo, hi),), j0 == 0, j1 == n - 1, env.h_beta)


def sigma_interval(
    flux: FluxModel,
    env: EnvelopeTable,
    lambda_set: IntervalSet,
    p: float,
    tol: float | None = None,
) -> IntervalSet:
    """``Sigma(p) = Gamma(p) & Z(p)`` on the envelope's beta window."""
    window = (float(env.beta_axis[0]), float(env.beta_axis[-1]))
    gam = gamma_interval(flux, lambda_set, p, window)
    return gam.intersect(z_interval(env, p, tol))


def g_lambda_upper(
    flux: FluxModel,
    p: float,
    beta: float,
    lam: float,
    search: tuple[float, int] = (4.0, 401),
    pointwise: bool = False,
) -> tuple[float, LaminateCertificate]:
    """Laminate bound for ``g_lambda(p, beta)`` over two-gradient laminates.

    Offsets ``a > 0 > b`` on a uniform grid of ``[-G, G]`` with zero-mean
    weight ``theta = -b / (a - b)`` and ``theta a^2 + (1 - theta) b^2 < lam^2``.
    The trivial laminate ``a = b = 0`` is always admissible.

    By default a laminate is scored by ``|mean flux - beta|^2``, which bounds
    the envelope ``g`` from above. In one space dimension the divergence-free
    field vanishes, so ``g_lambda`` itself integrates the squared misfit
    pointwise; ``pointwise=True`` scores
    ``theta (sigma_a - beta)^2 + (1 - theta) (sigma_b - beta)^2`` instead,
    a true upper bound for ``g_lambda``.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    G, n = search
    grid = np.linspace(-G, G, int(n))
    A = grid[grid > 0][:, None]
    Bv = grid[grid < 0][None, :]
    theta = -Bv / (A - Bv)
    energy = theta * A**2 + (1.0 - theta) * Bv**2
    sa, sb = flux(p + A), flux(p + Bv)
    if pointwise:
        score = theta * (sa - beta) ** 2 + (1.0 - theta) * (sb - beta) ** 2
    else:
        score = (theta * sa + (1.0 - theta) * sb - beta) ** 2
    val = np.where(energy < lam**2, score, np.inf)
    best = (float(flux(p)) - beta) ** 2
    cert = LaminateCertificate.build(flux, p, beta, 0.0, 0.0, 1.0)
    if val.size:
        i, j = np.unravel_index(int(np.argmin(val)), val.shape)
        if val[i, j] < best:
            best = float(val[i, j])
            cert = LaminateCertificate.build(flux, p, beta, float(A[i, 0]), float(Bv[0, j]), float(theta[i, j]))
    return best, cert
