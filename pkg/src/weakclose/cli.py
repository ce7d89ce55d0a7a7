"""``weakclose <command> --config <path>`` entry point.

Exit codes: 0 success, 2 verdict failure, 1 error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import svg
from .config import ConfigError, RunConfig, parse_config
from .energy import MinimizeOptions, energy_I, minimize_I
from .experiments import (
    BracketError,
    SequenceSpec,
    analyze_sets,
    build_laminate_sequence,
    divcurl_convergence,
    divcurl_to_csv,
    heat_solution,
    solve_laminate,
    verify_theorem1,
)
from .fields import FieldPair, ScalarField, cell_dx, cell_mean
from .flux import FluxModel, Window, monotone_set
from .hulls import convex_envelope, gamma_interval, residual_surface, z_interval
from .residual import approx_residual, lemma_bound_check

log = logging.getLogger("weakclose")

COMMANDS = ("analyze-flux", "convexify", "sets", "minimize", "laminate", "verify-thm1", "divcurl", "residual")
EXIT_OK, EXIT_ERROR, EXIT_VERDICT = 0, 1, 2


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def _lambda_window(cfg: RunConfig) -> Window:
    wp = cfg.window_p()
    return Window(wp.p_min, wp.p_max, wp.n_p, wp.pad)


def _anchor(cfg: RunConfig):
    grid = cfg.grid()
    a = cfg["anchor"]
    if a["kind"] == "heat":
        return heat_solution(grid)
    X, T = grid.nodes()
    p, beta = a["p"], a["beta"]
    return p * X, 0.5 * p * X**2 + beta * T


# commands


def cmd_analyze_flux(cfg: RunConfig, flux: FluxModel, out: Path) -> int:
    win = _lambda_window(cfg)
    lam = monotone_set(flux, win)
    p = win.grid
    s = flux(p)
    mask = np.array([lam.contains(float(x), 1e-12) for x in p])
    _write_csv(out / "flux.csv", ["p", "sigma", "dsigma", "in_lambda"],
               [(float(a), float(b), float(c), int(m)) for a, b, c, m in zip(p, s, flux.derivative(p), mask)])
    _write_json(out / "lambda.json", {"fingerprint": flux.fingerprint(), "flux": flux.to_dict(), "lambda": lam.to_dict()})
    shade = [(a, b) if b > a else (a - win.h, b + win.h) for a, b in lam.intervals]
    (out / "flux.svg").write_text(svg.line_plot([(p, s, "sigma")], "flux and monotonicity set", "p", "sigma", shade))
    return EXIT_OK


def _envelope(cfg: RunConfig, flux: FluxModel, out: Path | None = None):
    env = convex_envelope(residual_surface(flux, cfg.window_p(), cfg.window_beta()))
    if out is not None:
        env.to_csv(out / "envelope.csv")
        env.save(out / f"envelope-{flux.fingerprint()}.npz")
    return env


def cmd_convexify(cfg: RunConfig, flux: FluxModel, out: Path) -> int:
    env = _envelope(cfg, flux, out)
    tol = cfg["window"]["zero_tol"]
    ps = env.p_axis[:: max(1, len(env.p_axis) // 128)]
    zs = [z_interval(env, float(p), tol) for p in ps]
    lo = [z.lo if not z.empty else math.nan for z in zs]
    hi = [z.hi if not z.empty else math.nan for z in zs]
    _write_json(out / "envelope.json", {
        "fingerprint": flux.fingerprint(),
        "shape": list(env.values.shape),
        "boundary_fraction": float(np.mean(env.boundary)),
        "max_g": float(np.max(env.values)),
        "meta": {k: env.meta[k] for k in sorted(env.meta)},
    })
    (out / "envelope.svg").write_text(svg.heatmap(
        env.values, env.p_axis, env.beta_axis, "convex envelope g with Z(p) boundary", "p", "beta",
        curves=[(ps, lo), (ps, hi)],
    ))
    return EXIT_OK


def _default_points(win: Window, extra) -> list[float]:
    base = np.linspace(win.p_min, win.p_max, 25)
    pts = sorted({round(float(x), 12) for x in np.concatenate([base, np.asarray(extra, dtype=float)])})
    return [p for p in pts if win.p_min <= p <= win.p_max]


def _figure_labels(flux, lam, win):
    # corners of the gap between the first two Lambda components
    ivs = lam.intervals
    for (_, p1), (p2, _) in zip(ivs, ivs[1:]):
        s1, s2 = float(flux(p1)), float(flux(p2))
        q = np.linspace(p1, p2, 401)
        k = int(np.argmax(flux(q)))
        return [(p1, s1, "A"), (p2, s1, "B"), (p2, s2, "C"), (p1, s2, "D"), (float(q[k]), float(flux(q[k])), "E")]
    return []


def cmd_sets(cfg: RunConfig, flux: FluxModel, out: Path) -> int:
    win = _lambda_window(cfg)
    lam = monotone_set(flux, win)
    env = _envelope(cfg, flux)
    tol = cfg["window"]["zero_tol"]
    bw = (float(env.beta_axis[0]), float(env.beta_axis[-1]))
    rows = [("", "lambda", a, b, int(lam.truncated_lo and i == 0), int(lam.truncated_hi and i == len(lam.intervals) - 1))
            for i, (a, b) in enumerate(lam.intervals)]
    bands = []
    for p in _default_points(win, cfg["sets"]["points"]):
        gam = gamma_interval(flux, lam, p, bw)
        z = z_interval(env, p, tol)
        sig = gam.intersect(z)
        for kind, s in (("gamma", gam), ("z", z), ("sigma", sig)):
            if s.empty:
                rows.append((p, kind, "", "", 0, 0))
            else:
                rows.append((p, kind, s.lo, s.hi, int(s.truncated_lo), int(s.truncated_hi)))
        if not sig.empty:
            bands.append((p, sig.lo, sig.hi))
    _write_csv(out / "sets.csv", ["p", "set_kind", "lo", "hi", "truncated_lo", "truncated_hi"], rows)
    labels = _figure_labels(flux, lam, win)
    if not labels and len(lam.intervals) == 1:
        p0 = lam.intervals[0][0]
        s0 = gamma_interval(flux, lam, p0, bw).intersect(z_interval(env, p0, tol))
        if not s0.empty:
            labels = [(p0, s0.hi, "A"), (p0, s0.lo, "B")]
    pg = np.linspace(win.p_min, win.p_max, 401)
    (out / "sets.svg").write_text(svg.set_diagram(pg, flux(pg), bands, labels, "Sigma(p) in the (p, beta) plane", bw))
    return EXIT_OK


def cmd_minimize(cfg: RunConfig, flux: FluxModel, out: Path) -> int:
    grid = cfg.grid()
    ua, va = _anchor(cfg)
    m = cfg["minimize"]
    opts = MinimizeOptions(max_iter=m["max_iter"], tol_I=m["tol_I"], init_noise=m["init_noise"], seed=cfg["seed"])
    cg_tol = cfg["residual"]["cg_tol"]
    traj = minimize_I((ua, va), flux, grid, opts, m["residual_every"],
                      (lambda u: approx_residual(u, flux, grid, cg_tol)) if m["residual_every"] else None)
    traj.to_csv(out / "trajectory.csv")
    w = traj.final
    A = grid.cell_area
    I0 = energy_I(FieldPair(grid, ua, va, ua, va), flux).total
    rep = lemma_bound_check(w, flux, cg_tol)
    _write_json(out / "minimize.json", {
        "I_anchor": I0,
        "I_final": traj.records[-1].I,
        "accepted_steps": traj.accepted,
        "stop_reason": traj.stop_reason,
        "u_l2_deviation": float(np.sqrt(np.sum((cell_mean(w.u) - cell_mean(ua)) ** 2) * A)),
        "du_l2": float(np.sqrt(np.sum(cell_dx(w.u, grid) ** 2) * A)),
        "residual_hm1": rep.residual_hm1,
        "sqrt_I": rep.sqrt_I,
        "seed": cfg["seed"],
    })
    ScalarField(grid, w.u).to_csv(out / "u_final.csv")
    ScalarField(grid, w.v).to_csv(out / "v_final.csv")
    it = [r.iter for r in traj.records]
    (out / "descent.svg").write_text(svg.line_plot(
        [(it, [r.I for r in traj.records], "I"), (it, [r.flux_term for r in traj.records], "flux term"),
         (it, [max(r.div_term, 1e-300) for r in traj.records], "div term")],
        "descent on I", "iteration", "energy", log_y=True))
    (out / "u.svg").write_text(svg.heatmap(w.u, grid.x, grid.t, "terminal u", "x", "t", log=False))
    return EXIT_OK


def _laminate_spec(cfg: RunConfig, flux: FluxModel) -> SequenceSpec:
    e = cfg["experiment"]
    bracket = tuple(e["bracket"]) if "bracket" in e else None
    cert = solve_laminate(flux, e["p"], e["beta"], bracket)
    return SequenceSpec(e["p"], e["beta"], cert, cfg.grid(), flux.fingerprint())


def _cert_json(spec: SequenceSpec) -> dict:
    c = spec.cert
    return {"p": spec.p, "beta": spec.beta, "a": c.a, "b": c.b, "theta": c.theta,
            "achieved_p": c.achieved_p, "achieved_beta": c.achieved_beta, "residual": c.residual,
            "gradients": list(c.gradients)}


def cmd_laminate(cfg: RunConfig, flux: FluxModel, out: Path) -> int:
    spec = _laminate_spec(cfg, flux)
    j = cfg["experiment"]["laminate_j"]
    u = build_laminate_sequence(spec, j)
    _write_json(out / "laminate.json", {**_cert_json(spec), "j": j, "fingerprint": flux.fingerprint()})
    u.to_csv(out / "u_laminate.csv")
    g = spec.grid
    row = cell_dx(u.values, g)[:, g.n_t // 2]
    (out / "laminate.svg").write_text(svg.line_plot(
        [(g.xc, row, "Du"), (g.xc, flux(row), "sigma(Du)")], f"laminate j={j} at t=T/2", "x", "value"))
    return EXIT_OK


def cmd_verify(cfg: RunConfig, flux: FluxModel, out: Path) -> int:
    e = cfg["experiment"]
    spec = _laminate_spec(cfg, flux)
    sets = analyze_sets(flux, cfg.window_p(), cfg.window_beta())
    verdict = verify_theorem1(spec, e["js"], flux, sets, e["claimed_sigma"], e["periods_per_block"],
                              cfg["residual"]["cg_tol"])
    verdict.threshold = e["threshold"]
    verdict.to_csv(out / "verdict.csv")
    verdict.residuals_to_csv(out / "residuals.csv")
    passed = verdict.passed and verdict.residual_decreasing
    _write_json(out / "verdict.json", {
        "pass_fraction": verdict.pass_fraction,
        "threshold": verdict.threshold,
        "blocks": len(verdict.rows),
        "closure_passed": verdict.passed,
        "residual_decreasing": verdict.residual_decreasing,
        "residuals": [[j, r] for j, r in verdict.residuals],
        "claimed_sigma": e["claimed_sigma"],
        "laminate": _cert_json(spec),
        "passed": passed,
    })
    js = [j for j, _ in verdict.residuals]
    (out / "residual.svg").write_text(svg.line_plot(
        [(js, [r for _, r in verdict.residuals], "H^-1 residual")], "laminate residual", "j", "residual", log_y=True))
    return EXIT_OK if passed else EXIT_VERDICT


def cmd_divcurl(cfg: RunConfig, flux: FluxModel, out: Path) -> int:
    e = cfg["experiment"]
    spec = _laminate_spec(cfg, flux)
    rows = divcurl_convergence(spec, e["js"], flux, periods_per_block=e["periods_per_block"])
    divcurl_to_csv(rows, out / "divcurl.csv")
    diffs = [r.abs_diff for r in rows]
    decreasing = all(b < a for a, b in zip(diffs, diffs[1:]))
    passed = decreasing and diffs[-1] <= e["divcurl_tol"]
    _write_json(out / "divcurl.json", {
        "decreasing": decreasing, "final_abs_diff": diffs[-1], "tolerance": e["divcurl_tol"], "passed": passed,
        "oracle": rows[0].oracle, "final_oracle_diff": rows[-1].oracle_diff,
    })
    js = [r.j for r in rows]
    (out / "divcurl.svg").write_text(svg.line_plot(
        [(js, [max(d, 1e-300) for d in diffs], "|lhs - V*.W*|"), (js, [max(r.oracle_diff, 1e-300) for r in rows], "|lhs - oracle|")],
        "div-curl check", "j", "difference", log_y=True))
    return EXIT_OK if passed else EXIT_VERDICT


def cmd_residual(cfg: RunConfig, flux: FluxModel, out: Path) -> int:
    r = cfg["residual"]
    grid = cfg.grid()
    if r["field"] == "laminate":
        spec = _laminate_spec(cfg, flux)
        u = build_laminate_sequence(spec, r["j"]).values
        res = approx_residual(u, flux, grid, r["cg_tol"])
        report = {"residual_hm1": res, "sqrt_I": None, "slack": None, "cg_iters": None, "violated": False}
    else:
        ua, va = heat_solution(grid) if r["field"] == "heat" else _anchor(cfg)
        rep = lemma_bound_check(FieldPair(grid, ua, va, ua, va), flux, r["cg_tol"])
        report = {"residual_hm1": rep.residual_hm1, "sqrt_I": rep.sqrt_I, "slack": rep.slack,
                  "cg_iters": rep.cg_iters, "violated": rep.violated}
    limit = r["max_residual"]
    failed = report["violated"] or (limit is not None and report["residual_hm1"] > limit)
    _write_json(out / "residual.json", {**report, "cg_tol": r["cg_tol"], "max_residual": limit, "passed": not failed})
    return EXIT_VERDICT if failed else EXIT_OK


HANDLERS = {
    "analyze-flux": cmd_analyze_flux,
    "convexify": cmd_convexify,
    "sets": cmd_sets,
    "minimize": cmd_minimize,
    "laminate": cmd_laminate,
    "verify-thm1": cmd_verify,
    "divcurl": cmd_divcurl,
    "residual": cmd_residual,
}


class _Parser(argparse.ArgumentParser):
    # usage errors are errors (exit 1); exit 2 is reserved for verdict failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="weakclose", description="Weak closure sets and approximating sequences for forward-backward diffusion.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="JSON config path or inline JSON object")
    ap.add_argument("--out", help="output directory (default: config 'out')")
    ap.add_argument("--seed", type=int, help="unsigned 64-bit seed")
    ap.add_argument("--cg-tol", type=float, dest="cg_tol")
    ap.add_argument("--grid", type=int, nargs=2, metavar=("NX", "NT"))
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def run_command(cmd: str, cfg: RunConfig) -> int:
    out = Path(cfg["out"])
    if not out.is_absolute():
        out = Path.cwd() / out
    out.mkdir(parents=True, exist_ok=True)
    return HANDLERS[cmd](cfg, cfg.flux(), out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_ERROR
    try:
        cfg = parse_config(args.config).with_overrides(seed=args.seed, cg_tol=args.cg_tol, grid=args.grid, out=args.out)
        return run_command(args.command, cfg)
    except BracketError as exc:
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (ConfigError, OSError, ValueError, RuntimeError) as exc:
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
