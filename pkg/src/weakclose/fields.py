"""Uniform space-time grids on ``(0, L) x (0, T)`` and staggered differences.

Node arrays have shape ``(n_x + 2, n_t + 2)`` (boundary layer included).
Cell quantities live on ``(n_x + 1, n_t + 1)`` and are built from one box
stencil: the forward difference along one axis averaged along the other.
With that choice

    sum_cells div(v) * phi_t  ==  sum_cells v_t * D(phi)

holds to rounding for every ``phi`` vanishing on the boundary.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "ShapeError",
    "SpaceTimeGrid",
    "ScalarField",
    "FieldPair",
    "diff",
    "cell_dx",
    "cell_dt",
    "cell_mean",
    "cell_dx_T",
    "cell_dt_T",
    "cell_mean_T",
    "impose_boundary",
    "cell_average",
    "boundary_mask",
]


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class SpaceTimeGrid:
    L: float = 1.0
    T: float = 1.0
    n_x: int = 64
    n_t: int = 64

    def __post_init__(self):
        if not (self.L > 0 and self.T > 0):
            raise ValueError("L and T must be positive")
        if self.n_x < 8 or self.n_t < 8:
            raise ValueError(f"need n_x, n_t >= 8, got {self.n_x} x {self.n_t}")

    @property
    def h_x(self) -> float:
        return self.L / (self.n_x + 1)

    @property
    def h_t(self) -> float:
        return self.T / (self.n_t + 1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_x + 2, self.n_t + 2)

    @property
    def cell_shape(self) -> tuple[int, int]:
        return (self.n_x + 1, self.n_t + 1)

    @property
    def x(self) -> np.ndarray:
        return self.h_x * np.arange(self.n_x + 2)

    @property
    def t(self) -> np.ndarray:
        return self.h_t * np.arange(self.n_t + 2)

    @property
    def xc(self) -> np.ndarray:
        return self.h_x * (np.arange(self.n_x + 1) + 0.5)

    @property
    def tc(self) -> np.ndarray:
        return self.h_t * (np.arange(self.n_t + 1) + 0.5)

    @property
    def area(self) -> float:
        return self.L * self.T

    @property
    def cell_area(self) -> float:
        return self.h_x * self.h_t

    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.t, indexing="ij")

    def cells(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.xc, self.tc, indexing="ij")

    def tabulate(self, fn) -> np.ndarray:
        X, T = self.nodes()
        return np.asarray(fn(X, T), dtype=float) * np.ones(self.shape)

    def refined(self, factor: int = 2) -> "SpaceTimeGrid":
        return replace(self, n_x=factor * (self.n_x + 1) - 1, n_t=factor * (self.n_t + 1) - 1)


def boundary_mask(grid: SpaceTimeGrid) -> np.ndarray:
    m = np.zeros(grid.shape, dtype=bool)
    m[0, :] = m[-1, :] = m[:, 0] = m[:, -1] = True
    return m


@dataclass(frozen=True)
class ScalarField:
    """Values on a grid; ``loc`` is one of node, xedge, tedge, cell."""

    grid: SpaceTimeGrid
    values: np.ndarray
    loc: str = "node"

    def __post_init__(self):
        expected = {
            "node": self.grid.shape,
            "xedge": (self.grid.n_x + 1, self.grid.n_t + 2),
            "tedge": (self.grid.n_x + 2, self.grid.n_t + 1),
            "cell": self.grid.cell_shape,
        }.get(self.loc)
        if expected is None:
            raise ValueError(f"unknown field location {self.loc!r}")
        if self.values.shape != expected:
            raise ShapeError(f"{self.loc} field on {self.grid} needs shape {expected}, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        g = self.grid
        xs = g.x if self.loc in ("node", "tedge") else g.xc
        ts = g.t if self.loc in ("node", "xedge") else g.tc
        return np.meshgrid(xs, ts, indexing="ij")

    def to_csv(self, path) -> None:
        X, T = self.coords()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "t", "value"])
            for x, t, val in zip(X.ravel(), T.ravel(), self.values.ravel()):
                w.writerow([repr(float(x)), repr(float(t)), repr(float(val))])

    def save(self, path) -> None:
        g = self.grid
        np.savez(path, header=np.array([g.L, g.T, g.n_x, g.n_t], dtype=float), loc=np.array(self.loc), values=self.values)

    @classmethod
    def load(cls, path) -> "ScalarField":
        with np.load(path) as z:
            L, T, nx, nt = z["header"]
            return cls(SpaceTimeGrid(float(L), float(T), int(nx), int(nt)), z["values"], str(z["loc"]))


# VectorField in one space dimension is a single component
VectorField = ScalarField


@dataclass(frozen=True)
class FieldPair:
    """``w = (u, v)`` with the fixed boundary trace ``(u_bar, v_bar)``."""

    grid: SpaceTimeGrid
    u: np.ndarray
    v: np.ndarray
    anchor_u: np.ndarray
    anchor_v: np.ndarray

    def boundary_error(self) -> float:
        m = boundary_mask(self.grid)
        return float(max(np.max(np.abs(self.u - self.anchor_u)[m]), np.max(np.abs(self.v - self.anchor_v)[m])))

    def with_interior(self, u: np.ndarray, v: np.ndarray) -> "FieldPair":
        return impose_boundary(FieldPair(self.grid, u, v, self.anchor_u, self.anchor_v), (self.anchor_u, self.anchor_v))


def diff(field: ScalarField, axis: str) -> ScalarField:
    """Forward difference of a node field along ``x`` or ``t``."""
    g = field.grid
    if field.loc != "node":
        raise ValueError("diff expects a node field")
    if axis == "x":
        return ScalarField(g, np.diff(field.values, axis=0) / g.h_x, "xedge")
    if axis == "t":
        return ScalarField(g, np.diff(field.values, axis=1) / g.h_t, "tedge")
    raise ValueError(f"axis must be 'x' or 't', got {axis!r}")


def _avg0(a):
    return 0.5 * (a[1:, :] + a[:-1, :])


def _avg1(a):
    return 0.5 * (a[:, 1:] + a[:, :-1])


def _avg0_T(r):
    out = np.zeros((r.shape[0] + 1, r.shape[1]))
    out[:-1] += 0.5 * r
    out[1:] += 0.5 * r
    return out


def _avg1_T(r):
    out = np.zeros((r.shape[0], r.shape[1] + 1))
    out[:, :-1] += 0.5 * r
    out[:, 1:] += 0.5 * r
    return out


def _diff0_T(r, h):
    out = np.zeros((r.shape[0] + 1, r.shape[1]))
    out[:-1] -= r
    out[1:] += r
    return out / h


def _diff1_T(r, h):
    out = np.zeros((r.shape[0], r.shape[1] + 1))
    out[:, :-1] -= r
    out[:, 1:] += r
    return out / h


def cell_dx(a: np.ndarray, grid: SpaceTimeGrid) -> np.ndarray:
    """Cell-centred ``d/dx`` of a node array."""
    return _avg1(np.diff(a, axis=0)) / grid.h_x


def cell_dt(a: np.ndarray, grid: SpaceTimeGrid) -> np.ndarray:
    return _avg0(np.diff(a, axis=1)) / grid.h_t


def cell_mean(a: np.ndarray) -> np.ndarray:
    """Four-corner average of a node array."""
    return _avg0(_avg1(a))


def cell_dx_T(r: np.ndarray, grid: SpaceTimeGrid) -> np.ndarray:
    """Adjoint of :func:`cell_dx` (cell array to node array)."""
    return _diff0_T(_avg1_T(r), grid.h_x)


def cell_dt_T(r: np.ndarray, grid: SpaceTimeGrid) -> np.ndarray:
    return _diff1_T(_avg0_T(r), grid.h_t)


def cell_mean_T(r: np.ndarray) -> np.ndarray:
    return _avg1_T(_avg0_T(r))


def impose_boundary(raw: FieldPair, anchor: tuple[np.ndarray, np.ndarray]) -> FieldPair:
    """Overwrite boundary nodes of ``u`` and ``v`` with the anchor trace."""
    ua, va = (np.asarray(a, dtype=float) for a in anchor)
    if ua.shape != raw.u.shape or va.shape != raw.v.shape:
        raise ShapeError("anchor and field shapes differ")
    m = boundary_mask(raw.grid)
    u = np.where(m, ua, raw.u)
    v = np.where(m, va, raw.v)
    return FieldPair(raw.grid, u, v, ua, va)


def cell_average(field, block: tuple[int, int]):
    """Block means of a 2-D array (or :class:`ScalarField`)."""
    arr = field.values if isinstance(field, ScalarField) else np.asarray(field, dtype=float)
    kx, kt = block
    nx, nt = arr.shape
    if kx < 1 or kt < 1 or nx % kx or nt % kt:
        raise ShapeError(f"block {block} does not divide field shape {arr.shape}")
    out = arr.reshape(nx // kx, kx, nt // kt, kt).mean(axis=(1, 3))
    return out
