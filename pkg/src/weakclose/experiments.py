"""Laminate sequences, the closure verdict and the div-curl check.

A laminate for ``(p, beta)`` is a pair of offsets ``a``, ``b`` of opposite
sign with weight ``theta = -b / (a - b)`` so that ``theta a + (1 - theta) b = 0``
and ``theta sigma(p + a) + (1 - theta) sigma(p + b) = beta``. The sequence
``u^j = p x + phi_j(x) eta_j(t)`` uses the sawtooth ``phi_j`` of period
``L / j`` with those two slopes; ``eta_j`` ramps from 0 to 1 over one period
at both time ends so that ``u^j`` keeps the affine boundary trace.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .fields import FieldPair, ScalarField, SpaceTimeGrid, cell_average, cell_dt, cell_dx, cell_mean
from .flux import FluxModel, IntervalSet, Window, monotone_set
from .hulls import (
    EnvelopeTable,
    LaminateCertificate,
    convex_envelope,
    residual_surface,
    sigma_interval,
)
from .residual import approx_residual

__all__ = [
    "BracketError",
    "SetAnalysis",
    "SequenceSpec",
    "BlockRow",
    "ClosureVerdict",
    "DivCurlRow",
    "thread_cap",
    "analyze_sets",
    "solve_laminate",
    "sawtooth",
    "build_laminate_sequence",
    "interior_blocks",
    "verify_theorem1",
    "divcurl_convergence",
    "bump_test_function",
    "affine_subsolution",
    "heat_solution",
]


class BracketError(ValueError):
    pass


def thread_cap() -> int:
    """Worker cap from ``WEAKCLOSE_THREADS`` (default: CPU count)."""
    raw = os.environ.get("WEAKCLOSE_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    return max(1, n) if raw else max(1, os.cpu_count() or 1)


def _pmap(fn, items):
    items = list(items)
    workers = min(thread_cap(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


@dataclass(frozen=True)
class SetAnalysis:
    flux: FluxModel
    lambda_set: IntervalSet
    env: EnvelopeTable

    def sigma(self, p: float) -> IntervalSet:
        return sigma_interval(self.flux, self.env, self.lambda_set, p)


def analyze_sets(flux: FluxModel, window_p: Window, window_beta: Window) -> SetAnalysis:
    lam = monotone_set(flux, Window(window_p.p_min, window_p.p_max, window_p.n_p))
    env = convex_envelope(residual_surface(flux, window_p, window_beta))
    return SetAnalysis(flux, lam, env)


@dataclass(frozen=True)
class SequenceSpec:
    p: float
    beta: float
    cert: LaminateCertificate
    grid: SpaceTimeGrid
    flux_fingerprint: str = ""

    def __post_init__(self):
        c = self.cert
        if abs(c.theta * c.a + (1.0 - c.theta) * c.b) > 1e-12 * (1.0 + abs(c.a) + abs(c.b)):
            raise ValueError("laminate offsets must have zero weighted mean")

    def period(self, j: int) -> float:
        return self.grid.L / j


def solve_laminate(
    flux: FluxModel,
    p: float,
    beta: float,
    bracket: tuple[float, float] | None = None,
    search: tuple[float, float, int] = (-6.0, 6.0, 769),
    tol: float = 1e-10,
) -> LaminateCertificate:
    """Two-gradient laminate with mean gradient ``p`` and mean flux ``beta``.

    ``a`` is the search-grid point whose flux lies furthest beyond ``beta``
    (on the side away from ``sigma(p)``); ``b`` of the opposite sign is found
    by bisection inside ``bracket`` (default: first sign change scanning
    outward from 0 on the search grid).
    """
    s0 = float(flux(p))
    if abs(s0 - beta) <= 1e-12 * (1.0 + abs(beta)):
        return LaminateCertificate.build(flux, p, beta, 0.0, 0.0, 1.0)
    side = 1.0 if beta > s0 else -1.0
    grid = np.linspace(*search[:2], int(search[2]))
    grid = grid[grid != 0.0]
    a = float(grid[int(np.argmax(side * (flux(p + grid) - beta)))])

    def resid(b):
        th = -b / (a - b)
        return th * float(flux(p + a)) + (1.0 - th) * float(flux(p + b)) - beta

    if bracket is None:
        cand = grid[grid * a < 0]
        cand = cand[np.argsort(np.abs(cand))]
        vals = np.array([resid(float(b)) for b in cand])
        hit = np.flatnonzero(np.sign(vals[1:]) * np.sign(vals[:-1]) <= 0)
        if hit.size == 0:
            raise BracketError(
                f"no laminate for (p={p}, beta={beta}) with a={a} and b in "
                f"[{search[0]}, {search[1]}]; widen the search window"
            )
        bracket = (float(cand[hit[0]]), float(cand[hit[0] + 1]))
    lo, hi = sorted(float(x) for x in bracket)
    if lo * a >= 0 or hi * a >= 0:
        raise BracketError(f"bracket {bracket} must lie strictly on the side opposite a={a}")
    r_lo, r_hi = resid(lo), resid(hi)
    if r_lo * r_hi > 0:
        raise BracketError(
            f"no sign change of the laminate residual on {bracket} "
            f"({r_lo:.3g}, {r_hi:.3g}); change the window"
        )
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        r_mid = resid(mid)
        if r_mid == 0.0:
            lo = hi = mid
            break
        if (r_mid > 0) == (r_lo > 0):
            lo, r_lo = mid, r_mid
        else:
            hi = mid
    b = 0.5 * (lo + hi)
    return LaminateCertificate.build(flux, p, beta, a, b, -b / (a - b))


def sawtooth(x: np.ndarray, a: float, b: float, theta: float, period: float) -> np.ndarray:
    """Continuous periodic ``phi`` with ``phi(0) = 0``, slope ``a`` then ``b``."""
    s = np.mod(x, period)
    # exact zeros at period multiples despite rounding in mod
    s = np.where(np.isclose(s, period, rtol=0, atol=1e-12 * period), 0.0, s)
    k = theta * period
    return np.where(s <= k, a * s, a * k + b * (s - k))


def _ramp(t: np.ndarray, T: float, width: float) -> np.ndarray:
    return np.clip(np.minimum(t, T - t) / width, 0.0, 1.0)


def build_laminate_sequence(spec: SequenceSpec, j: int) -> ScalarField:
    if j < 1:
        raise ValueError("j must be a positive integer")
    g = spec.grid
    c = spec.cert
    X, T = g.nodes()
    P = spec.period(j)
    u = spec.p * X + sawtooth(X, c.a, c.b, c.theta, P) * _ramp(T, g.T, P * g.T / g.L)
    return ScalarField(g, u)


def interior_blocks(grid: SpaceTimeGrid, period: float, periods_per_block: int = 4):
    """Cell slices and block size for block averages away from the layer.

    One period is dropped at every edge; blocks span an integer number of
    periods (at most ``periods_per_block``) in both directions.
    """
    layer = int(math.ceil(period / grid.h_x))
    n = grid.n_x + 1 - 2 * layer
    periods_inside = int(math.floor(n * grid.h_x / period + 1e-9))
    m = max(1, min(periods_per_block, periods_inside))
    k = max(1, int(round(m * period / grid.h_x)))
    nb = n // k
    if nb < 1:
        raise ValueError(f"grid too coarse for period {period}")
    sx = slice(layer, layer + nb * k)
    layer_t = int(math.ceil(period * grid.T / grid.L / grid.h_t))
    nt = grid.n_t + 1 - 2 * layer_t
    kt = k if k <= nt else nt
    st = slice(layer_t, layer_t + (nt // kt) * kt)
    return sx, st, (k, kt)


@dataclass(frozen=True)
class BlockRow:
    j: int
    block_x: float
    block_t: float
    du_star: float
    sigma_bar: float
    sigma_lo: float
    sigma_hi: float
    inside: bool
    margin: float


@dataclass
class ClosureVerdict:
    rows: list = field(default_factory=list)
    residuals: list = field(default_factory=list)   # (j, residual)
    threshold: float = 0.95

    @property
    def pass_fraction(self) -> float:
        if not self.rows:
            return 0.0
        return sum(r.inside for r in self.rows) / len(self.rows)

    @property
    def residual_decreasing(self) -> bool:
        r = [x for _, x in self.residuals]
        return all(b < a for a, b in zip(r, r[1:]))

    @property
    def passed(self) -> bool:
        return self.pass_fraction >= self.threshold

    def to_csv(self, path) -> None:
        cols = ["j", "block_x", "block_t", "du_star", "sigma_bar", "sigma_lo", "sigma_hi", "inside", "margin"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in self.rows:
                w.writerow([
                    r.j, repr(r.block_x), repr(r.block_t), repr(r.du_star), repr(r.sigma_bar),
                    repr(r.sigma_lo), repr(r.sigma_hi), int(r.inside), repr(r.margin),
                ])

    def residuals_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["j", "residual_hm1"])
            for j, r in self.residuals:
                w.writerow([j, repr(float(r))])


def _sigma_hull(sets: SetAnalysis, p: float, delta: float, n: int = 5) -> IntervalSet:
    """Hull of ``Sigma(p')`` over ``|p' - p| <= delta`` (sampled)."""
    los, his = [], []
    for q in np.linspace(p - delta, p + delta, n) if delta > 0 else [p]:
        s = sets.sigma(float(q))
        if not s.empty:
            los.append(s.lo)
            his.append(s.hi)
    if not los:
        return IntervalSet((), False, False, sets.env.h_beta)
    return IntervalSet(((min(los), max(his)),), False, False, sets.env.h_beta)


def verify_theorem1(
    spec: SequenceSpec,
    js,
    flux: FluxModel,
    sets: SetAnalysis,
    claimed_sigma: float | None = None,
    periods_per_block: int = 4,
    cg_tol: float = 1e-10,
    with_residual: bool = True,
) -> ClosureVerdict:
    """Blockwise check ``sigma_bar in Sigma(Du*)`` plus the residual per ``j``.

    ``Du*`` carries a proxy error of at most ``2 max|phi_j| / block width``
    (block edges need not sit on period multiples), so membership is tested
    against ``Sigma`` over that ``p``-neighbourhood. ``claimed_sigma``
    replaces the observed ``sigma_bar`` (negative control).
    """
    g = spec.grid
    c = spec.cert

    def run(j):
        u = build_laminate_sequence(spec, j).values
        P = spec.period(j)
        sx, st, blk = interior_blocks(g, P, periods_per_block)
        Du = cell_dx(u, g)
        du_star = cell_average(Du[sx, st], blk)
        sig_bar = cell_average(flux(Du)[sx, st], blk)
        amp = max(abs(c.a), abs(c.b)) * max(c.theta, 1.0 - c.theta) * P
        delta = 2.0 * amp / (blk[0] * g.h_x)
        xs = cell_average(np.broadcast_to(g.xc[:, None], g.cell_shape)[sx, st], blk)
        ts = cell_average(np.broadcast_to(g.tc[None, :], g.cell_shape)[sx, st], blk)
        rows = []
        cache = {}
        for (i, k), d in np.ndenumerate(du_star):
            key = round(float(d), 12)
            if key not in cache:
                cache[key] = _sigma_hull(sets, float(d), delta)
            S = cache[key]
            sb = float(sig_bar[i, k]) if claimed_sigma is None else float(claimed_sigma)
            inside = S.contains(sb)
            rows.append(BlockRow(
                j, float(xs[i, k]), float(ts[i, k]), float(d), sb,
                S.lo, S.hi, bool(inside), float(S.margin(sb)),
            ))
        res = approx_residual(u, flux, g, cg_tol) if with_residual else math.nan
        return rows, (j, res)

    out = _pmap(run, js)
    verdict = ClosureVerdict()
    for rows, res in out:
        verdict.rows.extend(rows)
        verdict.residuals.append(res)
    return verdict


@dataclass(frozen=True)
class DivCurlRow:
    j: int
    lhs: float
    rhs: float
    abs_diff: float
    oracle: float
    oracle_diff: float


def bump_test_function(grid: SpaceTimeGrid, center=(0.5, 0.5), radius=(0.25, 0.25)) -> np.ndarray:
    """Smooth compactly supported ``phi`` at cell centres."""
    X, T = grid.cells()

    def psi(s):
        out = np.zeros_like(s)
        m = np.abs(s) < 1.0
        out[m] = np.exp(1.0 - 1.0 / (1.0 - s[m] ** 2))
        return out

    return psi((X - center[0]) / radius[0]) * psi((T - center[1]) / radius[1])


def _expand(block_vals: np.ndarray, blk) -> np.ndarray:
    return np.repeat(np.repeat(block_vals, blk[0], axis=0), blk[1], axis=1)


def divcurl_convergence(
    spec: SequenceSpec,
    js,
    flux: FluxModel,
    phi: np.ndarray | None = None,
    periods_per_block: int = 4,
    constant: bool = False,
) -> list:
    """``int phi V^j.W^j`` against ``int phi V*.W*`` for each ``j``.

    ``V = (sigma(Du), -u)`` and ``W = (Du, u_t)``; the starred fields are
    block averages on the interior region. ``oracle`` is the periodic mean
    ``theta sigma(p+a)(p+a) + (1-theta) sigma(p+b)(p+b)`` times ``int phi``,
    i.e. the limit the products themselves approach. ``constant=True``
    uses ``u^j = p x`` for every ``j``.
    """
    g = spec.grid
    c = spec.cert
    A = g.cell_area
    phi = bump_test_function(g) if phi is None else np.asarray(phi, dtype=float)
    pa, pb = spec.p + c.a, spec.p + c.b
    if constant:
        prod_mean = float(flux(spec.p)) * spec.p
    else:
        prod_mean = c.theta * float(flux(pa)) * pa + (1.0 - c.theta) * float(flux(pb)) * pb
    oracle = prod_mean * float(np.sum(phi)) * A

    def run(j):
        if constant:
            X, _ = g.nodes()
            u = spec.p * X
        else:
            u = build_laminate_sequence(spec, j).values
        Du = cell_dx(u, g)
        ut = cell_dt(u, g)
        uc = cell_mean(u)
        sig = flux(Du)
        lhs = float(np.sum(phi * (sig * Du - uc * ut)) * A)
        sx, st, blk = interior_blocks(g, spec.period(j), periods_per_block)
        star = lambda f: _expand(cell_average(f[sx, st], blk), blk)
        vw = star(sig) * star(Du) - star(uc) * star(ut)
        rhs = float(np.sum(phi[sx, st] * vw) * A)
        return DivCurlRow(j, lhs, rhs, abs(lhs - rhs), oracle, abs(lhs - oracle))

    return _pmap(run, js)


def divcurl_to_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["j", "lhs", "rhs", "abs_diff", "oracle", "oracle_diff"])
        for r in rows:
            w.writerow([r.j, repr(r.lhs), repr(r.rhs), repr(r.abs_diff), repr(r.oracle), repr(r.oracle_diff)])


def affine_subsolution(p: float, beta: float, grid: SpaceTimeGrid) -> FieldPair:
    """``u = p x``, ``v = p x^2 / 2 + beta t``; ``u = div v`` holds cellwise."""
    X, T = grid.nodes()
    u = p * X
    v = 0.5 * p * X**2 + beta * T
    mismatch = float(np.max(np.abs(cell_mean(u) - cell_dx(v, grid))))
    if mismatch > 1e-10 * (1.0 + abs(p)):
        raise AssertionError(f"affine anchor violates u = div v by {mismatch}")
    return FieldPair(grid, u, v, u, v)


def heat_solution(grid: SpaceTimeGrid) -> tuple[np.ndarray, np.ndarray]:
    """Exact pair for ``sigma(p) = p``: ``u = e^{-pi^2 t} sin(pi x)``, ``v_x = u``, ``v_t = u_x``."""
    X, T = grid.nodes()
    decay = np.exp(-np.pi**2 * T)
    return decay * np.sin(np.pi * X), -decay * np.cos(np.pi * X) / np.pi
