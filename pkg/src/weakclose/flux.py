"""Scalar diffusion fluxes, the monotonicity set and the half-space set.

A flux is a callable ``sigma(p)`` together with enough tail information to
answer ``inf_{q >= x} sigma(q)`` and ``sup_{q <= x} sigma(q)`` beyond a
finite scan window. The monotonicity set ``Lambda`` and the sets
``Gamma(p)`` are computed on a truncated grid and carry truncation flags.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "FluxError",
    "FluxRangeError",
    "FluxModel",
    "LinearFlux",
    "PiecewiseLinearFlux",
    "RationalBumpFlux",
    "SampledFlux",
    "Window",
    "IntervalSet",
    "hollig_flux",
    "flux_from_dict",
    "load_sampled_csv",
    "eval_flux",
    "eval_flux_derivative",
    "monotone_mask",
    "monotone_set",
    "monotone_mask_bruteforce",
    "gamma_interval",
]


class FluxError(ValueError):
    """Invalid flux construction."""


class FluxRangeError(ValueError):
    """Query outside the domain where a table is defined."""


# Growth constant is verified on this window when no evaluation window is given.
_GROWTH_CHECK = (-100.0, 100.0)


class FluxModel:
    """Base class. Subclasses implement ``_eval``, ``_deriv`` and the tails."""

    kind: str = "abstract"
    has_derivative: bool = True

    def __init__(self, growth_c1: float | None = None, check_window=None):
        lo, hi = check_window if check_window is not None else self._check_window()
        q = np.linspace(lo, hi, 4001)
        ratio = float(np.max(np.abs(self._eval(q)) / (np.abs(q) + 1.0)))
        if growth_c1 is None:
            growth_c1 = max(ratio, 1e-12) * (1.0 + 1e-9)
        elif not growth_c1 > 0:
            raise FluxError(f"growth_c1 must be positive, got {growth_c1}")
        elif ratio > growth_c1 * (1.0 + 1e-12):
            raise FluxError(
                f"growth bound |sigma(p)| <= {growth_c1}(|p|+1) violated on "
                f"[{lo}, {hi}] (observed constant {ratio:.6g})"
            )
        self.growth_c1 = float(growth_c1)

    def _check_window(self) -> tuple[float, float]:
        return _GROWTH_CHECK

    def __call__(self, p):
        return self._eval(np.asarray(p, dtype=float))

    def derivative(self, p):
        return self._deriv(np.asarray(p, dtype=float))

    def slope(self, p):
        """Derivative of the evaluated function itself, for exact chain rules."""
        return self.derivative(p)

    def tail_inf(self, x: float) -> float:
        """``inf`` of sigma over ``[x, inf)``; ``+inf`` if nothing is known there."""
        raise NotImplementedError

    def tail_sup(self, x: float) -> float:
        """``sup`` of sigma over ``(-inf, x]``; ``-inf`` if nothing is known there."""
        raise NotImplementedError

    def domain(self) -> tuple[float, float]:
        return (-math.inf, math.inf)

    def to_dict(self) -> dict:
        raise NotImplementedError

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def lipschitz(self, lo: float, hi: float, n: int = 4001) -> float:
        q = np.linspace(lo, hi, n)
        return float(np.max(np.abs(self.derivative(q))))

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.to_dict().items() if k != "kind")
        return f"{type(self).__name__}({args})"


class LinearFlux(FluxModel):
    kind = "linear"

    def __init__(self, a: float = 1.0, growth_c1: float | None = None):
        self.a = float(a)
        super().__init__(growth_c1)

    def _eval(self, p):
        return self.a * p

    def _deriv(self, p):
        return np.full_like(p, self.a)

    def tail_inf(self, x):
        return self.a * x if self.a >= 0 else -math.inf

    def tail_sup(self, x):
        return self.a * x if self.a >= 0 else math.inf

    def to_dict(self):
        return {"kind": self.kind, "a": self.a}


class RationalBumpFlux(FluxModel):
    """``sigma(p) = A p / (1 + (p/s)^2)``; decays to zero at both ends."""

    kind = "rational_bump"

    def __init__(self, amplitude: float = 4.0, scale: float = 1.0, growth_c1: float | None = None):
        if not scale > 0:
            raise FluxError("rational-bump scale must be positive")
        self.amplitude = float(amplitude)
        self.scale = float(scale)
        super().__init__(growth_c1)

    def _eval(self, p):
        r = p / self.scale
        return self.amplitude * p / (1.0 + r * r)

    def _deriv(self, p):
        r2 = (p / self.scale) ** 2
        return self.amplitude * (1.0 - r2) / (1.0 + r2) ** 2

    def _candidates(self, x, right):
        vals = [float(self._eval(np.float64(x))), 0.0]
        for c in (-self.scale, self.scale):
            if (c >= x) if right else (c <= x):
                vals.append(float(self._eval(np.float64(c))))
        return vals

    def tail_inf(self, x):
        return min(self._candidates(x, right=True))

    def tail_sup(self, x):
        return max(self._candidates(x, right=False))

    def to_dict(self):
        return {"kind": self.kind, "A": self.amplitude, "s": self.scale}


class PiecewiseLinearFlux(FluxModel):
    """Linear interpolation through knots, extended by the end segments."""

    kind = "piecewise_linear"

    def __init__(self, knots: Sequence[Sequence[float]], growth_c1: float | None = None):
        arr = np.asarray(knots, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 2:
            raise FluxError("piecewise-linear flux needs at least two (p, sigma) knots")
        if np.any(np.diff(arr[:, 0]) <= 0):
            raise FluxError("piecewise-linear knots must be strictly increasing in p")
        self.p_knots = arr[:, 0].copy()
        self.s_knots = arr[:, 1].copy()
        self.slopes = np.diff(self.s_knots) / np.diff(self.p_knots)
        super().__init__(growth_c1)

    def _segment(self, p):
        return np.clip(np.searchsorted(self.p_knots, p, side="right") - 1, 0, len(self.slopes) - 1)

    def _eval(self, p):
        k = self._segment(p)
        return self.s_knots[k] + self.slopes[k] * (p - self.p_knots[k])

    def _deriv(self, p):
        k = self._segment(p)
        d = self.slopes[k].astype(float)
        # averaged one-sided slopes at interior knots
        j = np.searchsorted(self.p_knots, p)
        jc = np.clip(j, 0, len(self.p_knots) - 1)
        at_knot = (self.p_knots[jc] == p) & (jc > 0) & (jc < len(self.p_knots) - 1)
        if np.any(at_knot):
            jj = jc[at_knot]
            d = np.where(at_knot, 0.0, d)
            d[at_knot] = 0.5 * (self.slopes[jj - 1] + self.slopes[jj])
        return d

    def tail_inf(self, x):
        if self.slopes[-1] < 0:
            return -math.inf
        vals = [float(self._eval(np.float64(x)))]
        vals += [float(s) for p, s in zip(self.p_knots, self.s_knots) if p >= x]
        return min(vals)

    def tail_sup(self, x):
        if self.slopes[0] < 0:
            return math.inf
        vals = [float(self._eval(np.float64(x)))]
        vals += [float(s) for p, s in zip(self.p_knots, self.s_knots) if p <= x]
        return max(vals)

    def to_dict(self):
        return {
            "kind": self.kind,
            "knots": [[float(p), float(s)] for p, s in zip(self.p_knots, self.s_knots)],
        }


class SampledFlux(FluxModel):
    """Tabulated flux with linear interpolation inside the table range.

    The derivative is a centered difference of the interpolant with step
    ``h_d`` (default ``1e-4`` times the table span), one-sided at the ends.
    """

    kind = "sampled"
    has_derivative = False

    def __init__(self, p, sigma, growth_c1: float | None = None, h_d: float | None = None):
        p = np.asarray(p, dtype=float)
        sigma = np.asarray(sigma, dtype=float)
        if p.ndim != 1 or p.shape != sigma.shape or p.size < 2:
            raise FluxError("sampled flux needs matching 1-D columns with at least 2 points")
        bad = np.flatnonzero(np.diff(p) <= 0)
        if bad.size:
            raise FluxError(f"sampled table p column not strictly increasing at row {bad[0] + 1}")
        self.p_table = p
        self.s_table = sigma
        span = p[-1] - p[0]
        self.h_d = float(h_d) if h_d is not None else 1e-4 * span
        super().__init__(growth_c1)

    def _check_window(self):
        return (float(self.p_table[0]), float(self.p_table[-1]))

    def domain(self):
        return (float(self.p_table[0]), float(self.p_table[-1]))

    def _eval(self, p):
        lo, hi = self.p_table[0], self.p_table[-1]
        if np.any(p < lo) or np.any(p > hi) or not np.all(np.isfinite(p)):
            raise FluxRangeError(f"p outside sampled table range [{lo}, {hi}]")
        return np.interp(p, self.p_table, self.s_table)

    def _deriv(self, p):
        lo, hi = self.p_table[0], self.p_table[-1]
        a = np.clip(p - self.h_d, lo, hi)
        b = np.clip(p + self.h_d, lo, hi)
        return (self._eval(b) - self._eval(a)) / (b - a)

    def slope(self, p):
        # segment slope of the interpolant; knots get the mean of both sides
        p = np.asarray(p, dtype=float)
        self._eval(p)
        seg = np.diff(self.s_table) / np.diff(self.p_table)
        right = np.clip(np.searchsorted(self.p_table, p, side="right") - 1, 0, seg.size - 1)
        left = np.clip(np.searchsorted(self.p_table, p, side="left") - 1, 0, seg.size - 1)
        return 0.5 * (seg[left] + seg[right])

    def tail_inf(self, x):
        if x > self.p_table[-1]:
            return math.inf
        return float(np.min(self._eval(np.concatenate([[max(x, self.p_table[0])], self.p_table[self.p_table >= x]]))))

    def tail_sup(self, x):
        if x < self.p_table[0]:
            return -math.inf
        return float(np.max(self._eval(np.concatenate([[min(x, self.p_table[-1])], self.p_table[self.p_table <= x]]))))

    def to_dict(self):
        return {"kind": self.kind, "p": self.p_table.tolist(), "sigma": self.s_table.tolist(), "h_d": self.h_d}


def hollig_flux() -> PiecewiseLinearFlux:
    """Hollig-type flux: ``p`` up to 2, ``4 - p`` on [2, 3], ``(p - 1)/2`` after."""
    return PiecewiseLinearFlux([(0.0, 0.0), (2.0, 2.0), (3.0, 1.0), (5.0, 2.0)])


def load_sampled_csv(path, growth_c1=None, h_d=None) -> SampledFlux:
    """Read a two-column ``p,sigma`` CSV with a header row."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 2:
            raise FluxError(f"{path}: missing 'p,sigma' header")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                p, s = float(row[0]), float(row[1])
            except (ValueError, IndexError) as exc:
                raise FluxError(f"{path}, line {lineno}: cannot parse {row!r}") from exc
            if rows and p <= rows[-1][0]:
                raise FluxError(f"{path}, line {lineno}: p column not strictly increasing")
            rows.append((p, s))
    arr = np.asarray(rows, dtype=float).reshape(-1, 2)
    return SampledFlux(arr[:, 0], arr[:, 1], growth_c1=growth_c1, h_d=h_d)


def flux_from_dict(spec: dict, base_dir: Path | None = None) -> FluxModel:
    kind = spec["kind"]
    c1 = spec.get("growth_c1")
    if kind == "linear":
        return LinearFlux(spec.get("a", 1.0), growth_c1=c1)
    if kind == "rational_bump":
        return RationalBumpFlux(spec.get("A", 4.0), spec.get("s", 1.0), growth_c1=c1)
    if kind == "piecewise_linear":
        return PiecewiseLinearFlux(spec["knots"], growth_c1=c1)
    if kind == "hollig":
        return hollig_flux()
    if kind == "sampled":
        if "csv" in spec:
            path = Path(spec["csv"])
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            return load_sampled_csv(path, growth_c1=c1, h_d=spec.get("h_d"))
        return SampledFlux(spec["p"], spec["sigma"], growth_c1=c1, h_d=spec.get("h_d"))
    raise FluxError(f"unknown flux kind {kind!r}")


def eval_flux(flux: FluxModel, p):
    out = flux(p)
    return float(out) if np.ndim(out) == 0 else out


def eval_flux_derivative(flux: FluxModel, p):
    out = flux.derivative(p)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class Window:
    """Uniform grid ``p_min..p_max`` with ``n_p`` nodes, extended by ``pad`` per side."""

    p_min: float
    p_max: float
    n_p: int = 257
    pad: float = 0.0

    def __post_init__(self):
        if not self.p_min < self.p_max:
            raise ValueError(f"window needs p_min < p_max, got [{self.p_min}, {self.p_max}]")
        if self.n_p < 16:
            raise ValueError(f"window needs n_p >= 16, got {self.n_p}")
        if self.pad < 0:
            raise ValueError("pad must be nonnegative")

    @classmethod
    def padded(cls, p_min, p_max, n_p=257, frac=0.25):
        return cls(p_min, p_max, n_p, frac * (p_max - p_min))

    @property
    def h(self) -> float:
        return (self.p_max - self.p_min) / (self.n_p - 1)

    @property
    def n_pad(self) -> int:
        return int(round(self.pad / self.h))

    @property
    def grid(self) -> np.ndarray:
        return self.p_min + self.h * np.arange(self.n_p)

    @property
    def padded_grid(self) -> np.ndarray:
        k = self.n_pad
        return self.p_min + self.h * np.arange(-k, self.n_p + k)


@dataclass(frozen=True)
class IntervalSet:
    """Finite union of closed intervals restricted to a window.

    ``step`` is the grid spacing the set was resolved on (0 when exact).
    """

    intervals: tuple = ()
    truncated_lo: bool = False
    truncated_hi: bool = False
    step: float = 0.0

    def __post_init__(self):
        ivs = tuple((float(a), float(b)) for a, b in self.intervals)
        for a, b in ivs:
            if a > b:
                raise ValueError(f"interval with lo > hi: ({a}, {b})")
        for (_, b0), (a1, _) in zip(ivs, ivs[1:]):
            if not a1 > b0:
                raise ValueError("intervals must be sorted and disjoint")
        object.__setattr__(self, "intervals", ivs)

    @property
    def empty(self) -> bool:
        return not self.intervals

    @property
    def lo(self) -> float:
        return self.intervals[0][0] if self.intervals else math.nan

    @property
    def hi(self) -> float:
        return self.intervals[-1][1] if self.intervals else math.nan

    @property
    def width(self) -> float:
        return self.hi - self.lo if self.intervals else 0.0

    def contains(self, x: float, tol: float = 0.0) -> bool:
        return any(a - tol <= x <= b + tol for a, b in self.intervals)

    def margin(self, x: float) -> float:
        """Signed distance inside the hull ``[lo, hi]``; negative when outside."""
        if self.empty:
            return -math.inf
        return min(x - self.lo, self.hi - x)

    def intersect(self, other: "IntervalSet") -> "IntervalSet":
        out = []
        for a0, b0 in self.intervals:
            for a1, b1 in other.intervals:
                a, b = max(a0, a1), min(b0, b1)
                if a <= b:
                    out.append((a, b))
        out.sort()
        merged = []
        for a, b in out:
            if merged and a <= merged[-1][1]:
                merged[-1] = (merged[-1][0], max(merged[-1][1], b))
            else:
                merged.append((a, b))
        if not merged:
            return IntervalSet((), False, False, max(self.step, other.step))
        # truncation survives only where both parents are unbounded
        lo_flag = self.truncated_lo and other.truncated_lo
        hi_flag = self.truncated_hi and other.truncated_hi
        return IntervalSet(tuple(merged), lo_flag, hi_flag, max(self.step, other.step))

    def to_dict(self) -> dict:
        return {
            "intervals": [list(iv) for iv in self.intervals],
            "truncated_lo": self.truncated_lo,
            "truncated_hi": self.truncated_hi,
        }


def mask_to_intervals(grid: np.ndarray, mask: np.ndarray, h: float, degenerate_tol: float | None = None) -> IntervalSet:
    """Collapse runs of ``True`` into intervals; runs narrower than
    ``degenerate_tol`` (default ``1.5 h``) become zero-width points."""
    if degenerate_tol is None:
        degenerate_tol = 1.5 * h
    m = np.asarray(mask, dtype=bool)
    if not m.any():
        return IntervalSet((), False, False, h)
    edges = np.diff(np.concatenate([[0], m.astype(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1) - 1
    ivs = []
    for a, b in zip(starts, stops):
        lo, hi = float(grid[a]), float(grid[b])
        if hi - lo < degenerate_tol:
            mid = 0.5 * (lo + hi)
            lo = hi = mid
        ivs.append((lo, hi))
    return IntervalSet(tuple(ivs), bool(m[0]), bool(m[-1]), h)


def _scan_grid(flux: FluxModel, window: Window) -> np.ndarray:
    q = window.padded_grid
    lo, hi = flux.domain()
    return q[(q >= lo) & (q <= hi)]


def monotone_mask(flux: FluxModel, window: Window) -> tuple[np.ndarray, np.ndarray]:
    """Window grid and the mask of points kept in ``Lambda``.

    ``p`` is kept when ``sup_{q<p} sigma(q) <= sigma(p) <= inf_{q>p} sigma(q)``;
    the sup/inf run over the padded scan plus the flux's analytic tails.
    """
    q = _scan_grid(flux, window)
    s = flux(q)
    eps = 1e-12 * (1.0 + float(np.max(np.abs(s))))
    left = np.empty_like(s)
    left[0] = flux.tail_sup(float(q[0]))
    left[1:] = np.maximum(np.maximum.accumulate(s[:-1]), left[0])
    right = np.empty_like(s)
    right[-1] = flux.tail_inf(float(q[-1]))
    right[:-1] = np.minimum(np.minimum.accumulate(s[::-1][:-1])[::-1], right[-1])
    keep = (left <= s + eps) & (s <= right + eps)
    inside = (q >= window.p_min - 1e-12) & (q <= window.p_max + 1e-12)
    return q[inside], keep[inside]


def monotone_set(flux: FluxModel, window: Window) -> IntervalSet:
    """Grid approximation of ``Lambda`` on the window (see :func:`monotone_mask`)."""
    q, keep = monotone_mask(flux, window)
    return mask_to_intervals(q, keep, window.h)


def monotone_mask_bruteforce(flux: FluxModel, q: np.ndarray, eps: float | None = None) -> np.ndarray:
    """Pairwise definition on the grid itself, O(n^2). Test oracle only."""
    s = flux(q)
    prod = (s[None, :] - s[:, None]) * (q[None, :] - q[:, None])
    if eps is None:
        eps = 1e-12 * (1.0 + float(np.max(np.abs(s)))) * (1.0 + float(np.max(np.abs(q))))
    return np.all(prod >= -eps, axis=1)


def gamma_interval(
    flux: FluxModel,
    lambda_set: IntervalSet,
    p: float,
    beta_window: tuple[float, float],
) -> IntervalSet:
    """1-D ``Gamma(p)``: bounded below by ``sigma(q)`` for ``q in Lambda, q < p``
    and above by ``sigma(q)`` for ``q in Lambda, q > p``, clipped to ``beta_window``."""
    b_lo, b_hi = float(beta_window[0]), float(beta_window[1])
    step = lambda_set.step
    if lambda_set.empty:
        return IntervalSet(((b_lo, b_hi),), True, True, step)
    pts = []
    for a, b in lambda_set.intervals:
        if step > 0 and b > a:
            n = int(math.floor((b - a) / step + 0.5))
            pts.append(a + step * np.arange(n + 1))
            pts.append(np.array([b]))
        else:
            pts.append(np.array([a, b]))
    q = np.unique(np.concatenate(pts))
    s = flux(q)
    tie = 1e-12 * (1.0 + abs(p))
    lower, upper = -math.inf, math.inf
    below, above = q < p - tie, q > p + tie
    if below.any():
        lower = float(np.max(s[below]))
    if above.any():
        upper = float(np.min(s[above]))
    if lambda_set.truncated_lo and lambda_set.lo < p - tie:
        lower = max(lower, flux.tail_sup(lambda_set.lo))
    if lambda_set.truncated_hi and lambda_set.hi > p + tie:
        upper = min(upper, flux.tail_inf(lambda_set.hi))
    lo_flag = lower < b_lo or math.isinf(lower)
    hi_flag = upper > b_hi or math.isinf(upper)
    lo, hi = max(lower, b_lo), min(upper, b_hi)
    if lo > hi:
        return IntervalSet((), False, False, step)
    return IntervalSet(((lo, hi),), lo_flag, hi_flag, step)
