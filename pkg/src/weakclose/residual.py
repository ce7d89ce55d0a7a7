"""Discrete ``H^{-1}(Omega_T)`` norms and the residual bound ``<= sqrt(I)``.

The ``H^1_0`` inner product is the 5-point one,

    (phi, psi) = sum_xedges dphi dpsi / h_x^2 A + sum_tedges dphi dpsi / h_t^2 A,

with ``A = h_x h_t``. It dominates the cell-averaged gradient norm used by
the energy, so the residual never exceeds ``sqrt(I)`` on a given grid.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .energy import energy_I
from .fields import FieldPair, SpaceTimeGrid, cell_dt_T, cell_dx, cell_dx_T, cell_mean
from .flux import FluxModel

__all__ = [
    "SolverError",
    "DualFunctional",
    "ResidualReport",
    "laplacian_apply",
    "cg_solve",
    "hminus1_norm",
    "approx_residual",
    "residual_functional",
    "lemma_bound_check",
]


class SolverError(RuntimeError):
    def __init__(self, message: str, history: list[float]):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class DualFunctional:
    """``<F, phi> = sum_cells (-a phi_t - b Dphi) A + sum_nodes source phi A``.

    ``a`` and ``b`` are cell arrays; ``source`` is an optional node array.
    """

    grid: SpaceTimeGrid
    a: np.ndarray | None = None
    b: np.ndarray | None = None
    source: np.ndarray | None = None

    def __post_init__(self):
        for name, arr, shape in (
            ("a", self.a, self.grid.cell_shape),
            ("b", self.b, self.grid.cell_shape),
            ("source", self.source, self.grid.shape),
        ):
            if arr is not None and arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")

    def load_vector(self) -> np.ndarray:
        """Node array ``f`` with ``<F, phi> = sum f phi`` for interior ``phi``,
        restricted to the interior nodes."""
        g = self.grid
        A = g.cell_area
        f = np.zeros(g.shape)
        if self.a is not None:
            f -= A * cell_dt_T(self.a, g)
        if self.b is not None:
            f -= A * cell_dx_T(self.b, g)
        if self.source is not None:
            f += A * self.source
        return f[1:-1, 1:-1]

    def scaled(self, c: float) -> "DualFunctional":
        s = lambda x: None if x is None else c * x
        return DualFunctional(self.grid, s(self.a), s(self.b), s(self.source))


@dataclass(frozen=True)
class ResidualReport:
    residual_hm1: float
    sqrt_I: float
    slack: float
    cg_iters: int
    cg_tol: float
    violated: bool

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)


def laplacian_apply(phi: np.ndarray, grid: SpaceTimeGrid) -> np.ndarray:
    """``A (-Delta_h) phi`` on interior nodes with zero Dirichlet data."""
    cx = grid.h_t / grid.h_x
    ct = grid.h_x / grid.h_t
    p = np.pad(phi, 1)
    return (
        cx * (2.0 * phi - p[2:, 1:-1] - p[:-2, 1:-1])
        + ct * (2.0 * phi - p[1:-1, 2:] - p[1:-1, :-2])
    )


def cg_solve(f: np.ndarray, grid: SpaceTimeGrid, tol: float = 1e-10, max_iter: int | None = None):
    """Unpreconditioned CG for ``laplacian_apply(phi) = f``.

    Stops when ``|r| <= tol |f|``. Returns ``(phi, iterations)``.
    """
    if max_iter is None:
        max_iter = 10 * grid.n_x * grid.n_t
    x = np.zeros_like(f)
    bnorm = math.sqrt(float(np.sum(f * f)))
    if bnorm == 0.0:
        return x, 0
    r = f.copy()
    d = r.copy()
    rr = float(np.sum(r * r))
    history = [math.sqrt(rr) / bnorm]
    for it in range(1, max_iter + 1):
        Ad = laplacian_apply(d, grid)
        alpha = rr / float(np.sum(d * Ad))
        x += alpha * d
        r -= alpha * Ad
        rr_new = float(np.sum(r * r))
        history.append(math.sqrt(rr_new) / bnorm)
        if history[-1] <= tol:
            return x, it
        d = r + (rr_new / rr) * d
        rr = rr_new
    raise SolverError(f"CG did not reach relative residual {tol} in {max_iter} iterations", history)


def _solve(F: DualFunctional, cg_tol: float):
    f = F.load_vector()
    phi, iters = cg_solve(f, F.grid, cg_tol)
    return math.sqrt(max(float(np.sum(f * phi)), 0.0)), iters


def hminus1_norm(F: DualFunctional, grid: SpaceTimeGrid | None = None, cg_tol: float = 1e-10) -> float:
    """``sup <F, phi> / |phi|_{H^1_0}`` through the Riesz representer."""
    if grid is not None and grid != F.grid:
        raise ValueError("functional and grid disagree")
    if not cg_tol > 0:
        raise ValueError("cg_tol must be positive")
    return _solve(F, cg_tol)[0]


def residual_functional(u: np.ndarray, flux: FluxModel, grid: SpaceTimeGrid) -> DualFunctional:
    """``u_t - div sigma(Du)`` in divergence form: ``a = u_c``, ``b = -sigma(Du)``."""
    u = np.asarray(u, dtype=float)
    return DualFunctional(grid, a=cell_mean(u), b=-flux(cell_dx(u, grid)))


def approx_residual(u, flux: FluxModel, grid: SpaceTimeGrid, cg_tol: float = 1e-10) -> float:
    values = getattr(u, "values", u)
    return hminus1_norm(residual_functional(values, flux, grid), grid, cg_tol)


def lemma_bound_check(w: FieldPair, flux: FluxModel, cg_tol: float = 1e-10) -> ResidualReport:
    """Both sides of ``|u_t - div sigma(Du)|_{H^-1} <= sqrt(I(u, v))``."""
    res, iters = _solve(residual_functional(w.u, flux, w.grid), cg_tol)
    sqrt_I = math.sqrt(energy_I(w, flux).total)
    slack = sqrt_I - res
    violated = slack < -(cg_tol * sqrt_I + 1e-10)
    return ResidualReport(res, sqrt_I, slack, iters, cg_tol, bool(violated))
