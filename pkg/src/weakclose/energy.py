"""The functional ``I(u, v)``, its relaxation and a descent minimizer.

All terms use the cell stencils of :mod:`weakclose.fields`:

    Du = cell_dx(u), v_t = cell_dt(v), div v = cell_dx(v), u_c = cell_mean(u)

with midpoint quadrature ``sum_cells (.) h_x h_t``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .fields import (
    FieldPair,
    SpaceTimeGrid,
    boundary_mask,
    cell_dt,
    cell_dt_T,
    cell_dx,
    cell_dx_T,
    cell_mean,
    cell_mean_T,
    impose_boundary,
)
from .flux import FluxModel
from .hulls import EnvelopeRangeError, EnvelopeTable, g_eval

log = logging.getLogger(__name__)

__all__ = [
    "EnergyError",
    "EnergyBreakdown",
    "DescentRecord",
    "DescentTrajectory",
    "MinimizeOptions",
    "energy_I",
    "energy_relaxed",
    "grad_energy_I",
    "minimize_I",
    "anchor_consistency",
]


class EnergyError(RuntimeError):
    pass


@dataclass(frozen=True)
class EnergyBreakdown:
    flux_term: float
    div_term: float

    @property
    def total(self) -> float:
        return self.flux_term + self.div_term


def _cell_fields(w: FieldPair):
    g = w.grid
    return cell_dx(w.u, g), cell_dt(w.v, g), cell_dx(w.v, g), cell_mean(w.u)


def _first_bad_cell(arr: np.ndarray, grid: SpaceTimeGrid) -> str:
    i, j = np.unravel_index(int(np.flatnonzero(~np.isfinite(arr))[0]), arr.shape)
    return f"cell ({i}, {j}) at x={grid.xc[i]:.6g}, t={grid.tc[j]:.6g}"


def energy_I(w: FieldPair, flux: FluxModel) -> EnergyBreakdown:
    Du, vt, divv, uc = _cell_fields(w)
    A = w.grid.cell_area
    r1 = vt - flux(Du)
    r2 = uc - divv
    return EnergyBreakdown(float(np.sum(r1 * r1) * A), float(np.sum(r2 * r2) * A))


def energy_relaxed(w: FieldPair, env: EnvelopeTable) -> EnergyBreakdown:
    """Same quadrature as :func:`energy_I` with ``g(Du, v_t)`` in the flux slot."""
    Du, vt, divv, uc = _cell_fields(w)
    g = w.grid
    P, B = env.p_axis, env.beta_axis
    out = (Du < P[0]) | (Du > P[-1]) | (vt < B[0]) | (vt > B[-1])
    if np.any(out):
        i, j = np.argwhere(out)[0]
        raise EnvelopeRangeError(
            f"cell ({i}, {j}) at x={g.xc[i]:.6g}, t={g.tc[j]:.6g} has (Du, v_t) = "
            f"({Du[i, j]:.6g}, {vt[i, j]:.6g}) outside the envelope window "
            f"[{P[0]}, {P[-1]}] x [{B[0]}, {B[-1]}]"
        )
    A = g.cell_area
    r2 = uc - divv
    return EnergyBreakdown(float(np.sum(g_eval(env, Du, vt)) * A), float(np.sum(r2 * r2) * A))


def grad_energy_I(w: FieldPair, flux: FluxModel) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of the discrete ``I`` with respect to node values of ``(u, v)``.

    Boundary entries are zero since those nodes are fixed.
    """
    g = w.grid
    Du, vt, divv, uc = _cell_fields(w)
    A = g.cell_area
    r1 = 2.0 * A * (vt - flux(Du))
    r2 = 2.0 * A * (uc - divv)
    gu = cell_dx_T(-r1 * flux.slope(Du), g) + cell_mean_T(r2)
    gv = cell_dt_T(r1, g) - cell_dx_T(r2, g)
    m = boundary_mask(g)
    gu[m] = 0.0
    gv[m] = 0.0
    return gu, gv


def anchor_consistency(anchor_u: np.ndarray, anchor_v: np.ndarray, grid: SpaceTimeGrid) -> float:
    """Max cell mismatch ``|u_c - div v|`` of an anchor pair."""
    return float(np.max(np.abs(cell_mean(anchor_u) - cell_dx(anchor_v, grid))))


@dataclass(frozen=True)
class MinimizeOptions:
    max_iter: int = 2000
    tol_I: float = 0.0
    init_noise: float = 0.1
    seed: int = 0
    armijo_c: float = 1e-4
    shrink: float = 0.5
    initial_step: float = 1.0
    max_backtracks: int = 60
    anchor_tol: float = 1e-8
    # roundoff-level gradients at an exact minimum count as zero
    grad_tol: float = 1e-12

    @classmethod
    def from_dict(cls, d: dict | None) -> "MinimizeOptions":
        return cls(**(d or {}))


@dataclass(frozen=True)
class DescentRecord:
    iter: int
    I: float
    flux_term: float
    div_term: float
    grad_norm: float
    step: float
    residual_Hm1: float = math.nan


@dataclass
class DescentTrajectory:
    records: list = field(default_factory=list)
    final: FieldPair | None = None
    accepted: int = 0
    stop_reason: str = ""

    @property
    def I(self) -> np.ndarray:
        return np.array([r.I for r in self.records])

    def to_csv(self, path) -> None:
        cols = ["iter", "I", "flux_term", "div_term", "grad_norm", "step", "residual_Hm1"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in self.records:
                w.writerow([r.iter] + [repr(float(getattr(r, c))) for c in cols[1:]])


def minimize_I(
    anchor: tuple[np.ndarray, np.ndarray],
    flux: FluxModel,
    grid: SpaceTimeGrid,
    opts: MinimizeOptions | None = None,
    residual_every: int = 0,
    residual_fn=None,
) -> DescentTrajectory:
    """Armijo gradient descent on ``I`` over ``anchor + H^1_0``.

    Starts from the anchor plus seeded uniform noise of amplitude
    ``init_noise`` on interior nodes. ``residual_fn(u)`` (optional) is
    evaluated every ``residual_every`` records for the trajectory table.
    """
    opts = opts or MinimizeOptions()
    ua, va = (np.asarray(a, dtype=float) for a in anchor)
    mismatch = anchor_consistency(ua, va, grid)
    if mismatch > opts.anchor_tol:
        log.warning("anchor violates u = div v by %.3g on the grid", mismatch)
    rng = np.random.default_rng(opts.seed)
    interior = ~boundary_mask(grid)
    u = ua.copy()
    v = va.copy()
    if opts.init_noise > 0:
        k = int(interior.sum())
        u[interior] += opts.init_noise * rng.uniform(-1.0, 1.0, k)
        v[interior] += opts.init_noise * rng.uniform(-1.0, 1.0, k)
    w = impose_boundary(FieldPair(grid, u, v, ua, va), (ua, va))

    def evaluate(wc):
        e = energy_I(wc, flux)
        if not math.isfinite(e.total):
            Du = cell_dx(wc.u, grid)
            bad = ~np.isfinite(flux(Du)) | ~np.isfinite(cell_dt(wc.v, grid))
            where = _first_bad_cell(np.where(bad, np.nan, 0.0), grid) if bad.any() else "unknown cell"
            raise EnergyError(f"non-finite energy at {where}")
        return e

    traj = DescentTrajectory()
    e = evaluate(w)

    def record(it, e, gnorm, step):
        res = math.nan
        if residual_fn is not None and residual_every and it % residual_every == 0:
            res = float(residual_fn(w.u))
        traj.records.append(DescentRecord(it, e.total, e.flux_term, e.div_term, gnorm, step, res))

    for it in range(opts.max_iter + 1):
        gu, gv = grad_energy_I(w, flux)
        g2 = float(np.sum(gu * gu) + np.sum(gv * gv))
        gnorm = math.sqrt(g2)
        if it == opts.max_iter or e.total <= opts.tol_I or gnorm <= opts.grad_tol:
            record(it, e, gnorm, 0.0)
            traj.stop_reason = (
                "tol_I" if e.total <= opts.tol_I else "stationary" if gnorm <= opts.grad_tol else "max_iter"
            )
            break
        step = opts.initial_step
        for _ in range(opts.max_backtracks):
            trial = FieldPair(grid, w.u - step * gu, w.v - step * gv, ua, va)
            et = energy_I(trial, flux)
            if math.isfinite(et.total) and et.total <= e.total - opts.armijo_c * step * g2:
                break
            step *= opts.shrink
        else:
            record(it, e, gnorm, 0.0)
            traj.stop_reason = "line_search"
            break
        record(it, e, gnorm, step)
        w, e = trial, evaluate(trial)
        traj.accepted += 1
    traj.final = w
    return traj
