"""Command-line front end: ``flks <experiment> --config run.yaml --out dir``.

Every run writes deterministic CSV series, a ``summary.json`` (config echo,
config hash, wall time, invariant results) and a ``run.log``.  Exit status is
0 on success, 1 on an invariant breach, 2 on a configuration error and 3 on a
solver failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np
from scipy.special import erf

from . import __version__
from .checks import CheckResult, run_invariant_suite
from .config import EXPERIMENTS, RunConfig, parse_config, velocity_kind
from .diagnostics import decay_fit, expected_decay_slope, lp_norm, track_entropy
from .errors import ConfigError, FLKSError, ParameterError
from .grid import line_grid, radial_grid
from .kinetic import KineticProblem, drift_free_control, epsilon_sweep
from .macro import (MacroParams, density_from_u, initial_state, mass_coordinate_state, max_stable_dt,
                    max_stable_dt_mass_coordinate, step_flks_density, step_mass_coordinate)
from .response import RESPONSES, FluxLimiter, VelocitySpace, build_scalar_chain, limiter_from_response
from .steady import critical_mass, nonexistence_probe_d_gt_2, solve_for_mass, sweep_b

log = logging.getLogger("flks")

EXIT_OK, EXIT_INVARIANT, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3


# ---------------------------------------------------------------------------
# output helpers

def write_csv(path: Path, header: list[str], rows) -> None:
    """Numbers as ``%.17g`` so identical runs give identical bytes."""
    def fmt(v):
        if isinstance(v, (bool, np.bool_)):
            return str(int(v))
        if isinstance(v, str):
            return v
        return "%.17g" % v
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_csv(path: Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"series: {path} is empty")
    cols = list(zip(*rows[1:])) if len(rows) > 1 else [()] * len(rows[0])
    return {h: np.array(c, dtype=float) for h, c in zip(rows[0], cols)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _check(name: str, value: float, threshold: float, passed: bool | None = None) -> CheckResult:
    ok = bool(value < threshold) if passed is None else bool(passed)
    if not ok:
        log.error("invariant %s breached: %.3e (threshold %.1e)", name, value, threshold)
    return CheckResult(name, float(value), float(threshold), ok)


# ---------------------------------------------------------------------------
# model construction from a config

def make_limiter(cfg: RunConfig) -> FluxLimiter:
    if cfg.limiter == "constant":
        return FluxLimiter.constant(cfg.phi_value, cfg.D)
    if cfg.response == "zero":
        raise ConfigError("response: zero gives phi = 0; use limiter: constant for a drift-free run")
    vel = VelocitySpace.disk() if velocity_kind(cfg) == "disk" else VelocitySpace.interval()
    return limiter_from_response(RESPONSES[cfg.response](), vel, cfg.lambda0, cfg.chi)


def _rng(cfg: RunConfig) -> np.random.Generator:
    return np.random.default_rng(cfg.seed)


def _bumps(cfg: RunConfig, k: int = 3):
    rng = _rng(cfg)
    centers = rng.uniform(-0.5, 0.5, k) * cfg.ic_width * 4
    weights = rng.uniform(0.5, 1.5, k)
    return centers, weights / weights.sum()


def radial_density(cfg: RunConfig, grid) -> np.ndarray:
    r = grid.centers
    if cfg.ic == "gaussian":
        rho = np.exp(-(r / cfg.ic_width) ** 2)
    elif cfg.ic == "bumps":
        centers, weights = _bumps(cfg)
        rho = sum(w * np.exp(-((r - abs(c)) / cfg.ic_width) ** 2) for c, w in zip(centers, weights))
    else:
        raise ConfigError("ic: radial runs accept gaussian or bumps")
    return rho * (cfg.M / grid.mass(rho))


def mass_profile(cfg: RunConfig):
    """Initial ``u(x)``, increasing from ``-M/2`` to ``M/2``."""
    h, w = 0.5 * cfg.M, cfg.ic_width
    if cfg.ic == "tanh":
        return lambda x: h * np.tanh(x / w)
    if cfg.ic == "gaussian":
        return lambda x: h * erf(x / w)
    centers, weights = _bumps(cfg)
    return lambda x: h * sum(wt * erf((x - c) / w) for c, wt in zip(centers, weights))


# ---------------------------------------------------------------------------
# experiments; each returns (results dict, invariant checks)

def run_evolve_1d(cfg: RunConfig, out: Path, jobs: int):
    lim = make_limiter(cfg)
    if cfg.alpha == 0 and cfg.tau == 0:
        return _evolve_mass_coordinate(cfg, out, lim)
    grid = line_grid(cfg.L, cfg.cells)
    rho0 = np.diff(mass_profile(cfg)(grid.edges)) / grid.dx
    return _evolve_density(cfg, out, lim, grid, rho0, "density")


def _evolve_mass_coordinate(cfg: RunConfig, out: Path, lim: FluxLimiter):
    chain = build_scalar_chain(lim, cfg.M)
    state = mass_coordinate_state(cfg.L, cfg.cells, cfg.M, mass_profile(cfg))
    s = np.linspace(0.0, chain.half, 4001)
    speed = float(np.max(s * lim(s)))
    dt_max = cfg.cfl * state.dx / speed if speed > 0 else np.inf
    dt = min(cfg.dt or 0.5 * dt_max, dt_max)
    nsteps = max(int(math.ceil(cfg.T_end / dt - 1e-12)), 1)
    dt = cfg.T_end / nsteps
    series, snaps = [], []

    def record(st, k):
        prof = density_from_u(st)
        series.append((st.t, st.u[-1] - st.u[0], np.max(prof.rho), np.sqrt(st.dx * np.sum(prof.rho ** 2)),
                       prof.clipped_mass))
        if k == 0 or k == nsteps or (cfg.snapshot_every and k % cfg.snapshot_every == 0):
            snaps.extend((st.t, x, r, u) for x, r, u in zip(prof.centers, prof.rho, 0.5 * (st.u[1:] + st.u[:-1])))

    record(state, 0)
    min_du = np.inf
    for k in range(1, nsteps + 1):
        state = step_mass_coordinate(state, chain, dt, cfg.cfl)
        min_du = min(min_du, float(np.min(np.diff(state.u))))
        if k % cfg.output_every == 0 or k == nsteps:
            record(state, k)
    write_csv(out / "series.csv", ["t", "mass", "linf", "l2", "clipped_mass"], series)
    write_csv(out / "snapshots.csv", ["t", "x", "rho", "u"], snaps)
    checks = [_check("monotone_u", max(0.0, -min_du), 1e-12, passed=min_du >= -1e-12)]
    res = {"form": "mass-coordinate", "dt": dt, "steps": nsteps, "limiter": lim.name,
           "final_linf": series[-1][2], "final_l2": series[-1][3]}
    if cfg.cross_check:
        grid = line_grid(cfg.L, cfg.cells)
        rho0 = np.diff(mass_profile(cfg)(grid.edges)) / grid.dx
        dres, _ = _evolve_density(cfg, None, lim, grid, rho0, "density", dt=dt)
        l1 = float(np.sum(np.abs(dres["rho"] - density_from_u(state).rho)) * grid.dx / cfg.M)
        res["cross_check_l1_relative"] = l1
        checks.append(_check("cross_check_l1", l1, 2e-3))
    return res, checks


def _evolve_density(cfg: RunConfig, out: Path | None, lim: FluxLimiter, grid, rho0, form: str,
                    dt: float | None = None):
    params = MacroParams(D=cfg.D, tau=cfg.tau, alpha=cfg.alpha, cfl=cfg.cfl)
    state = initial_state(grid, rho0, params)
    m0 = state.mass
    dt = dt or cfg.dt or 0.01
    series, snaps = [], []

    def record(st, k, last):
        series.append((st.t, st.mass, lp_norm(grid, st.rho, np.inf), lp_norm(grid, st.rho, 2), st.rho.min()))
        if k == 0 or last or (cfg.snapshot_every and k % cfg.snapshot_every == 0):
            snaps.extend((st.t, x, r, s) for x, r, s in zip(grid.centers, st.rho, st.S))

    record(state, 0, False)
    k, rmin, t_end = 0, float(rho0.min()), cfg.T_end
    while state.t < t_end * (1 - 1e-12):
        h = min(dt, t_end - state.t, max_stable_dt(state, lim, params))
        state = step_flks_density(state, lim, params, h)
        k += 1
        rmin = min(rmin, float(state.rho.min()))
        last = state.t >= t_end * (1 - 1e-12)
        if k % cfg.output_every == 0 or last:
            record(state, k, last)
    if out is not None:
        write_csv(out / "series.csv", ["t", "mass", "linf", "l2", "min_rho"], series)
        write_csv(out / "snapshots.csv", ["t", "r" if grid.kind == "radial" else "x", "rho", "S"], snaps)
    drift = abs(state.mass - m0) / m0
    checks = [_check("mass_drift", drift, 1e-10),
              _check("positivity", max(-rmin, 0.0), 1e-12, passed=rmin >= -params.neg_tol)]
    res = {"form": form, "grid": grid.kind, "steps": k, "limiter": lim.name, "mass_drift": drift,
           "final_linf": series[-1][2], "final_l2": series[-1][3], "rho": state.rho}
    return res, checks


def run_evolve_radial(cfg: RunConfig, out: Path, jobs: int):
    lim = make_limiter(cfg)
    grid = radial_grid(cfg.R, cfg.cells, cfg.d)
    res, checks = _evolve_density(cfg, out, lim, grid, radial_density(cfg, grid), "density")
    res.pop("rho")
    return res, checks


def run_kinetic_converge(cfg: RunConfig, out: Path, jobs: int):
    prob = KineticProblem(n=cfg.kinetic_cells, T=cfg.kinetic_T, lambda0=cfg.lambda0, chi=cfg.chi,
                          alpha=cfg.alpha, response=cfg.response)
    rows = epsilon_sweep(prob, cfg.epsilon, jobs=jobs)
    keys = ["epsilon", "error", "ratio_to_next", "steps", "mass_drift"]
    write_csv(out / "sweep.csv", keys, [[r[k] for k in keys] for r in rows])
    ctrl = drift_free_control(KineticProblem(n=cfg.kinetic_cells, T=cfg.control_T, lambda0=cfg.lambda0,
                                             chi=cfg.chi, alpha=cfg.alpha), cfg.control_epsilon)
    errs = [r["error"] for r in rows]
    checks = [_check("kinetic_mass_drift", max(r["mass_drift"] for r in rows), 1e-10)]
    failed = [r["status"] for r in rows if r["status"] != "ok"]
    checks.append(_check("kinetic_runs_ok", len(failed), 1, passed=not failed))
    res = {"sweep": [{k: r[k] for k in keys + ["status"]} for r in rows],
           "strictly_decreasing": bool(all(b < a for a, b in zip(errs, errs[1:]))),
           "first_to_last_ratio": errs[-1] / errs[0] if errs and errs[0] > 0 else None,
           "control": {"epsilon": ctrl.epsilon, "D": ctrl.D, "rel_l2_error": ctrl.rel_l2_error,
                       "mass_drift": ctrl.mass_drift}}
    return res, checks


def _a_values(cfg: RunConfig) -> np.ndarray:
    if cfg.a_values is not None:
        return np.asarray(cfg.a_values)
    return np.logspace(np.log10(cfg.a_min), np.log10(cfg.a_max), cfg.n_a)


def _sweep_rows(shots):
    return [(s.a, s.b, s.b_raw, s.b_check, s.monotone, s.lower_bound) for s in shots]


_SWEEP_HEADER = ["a", "b", "b_raw", "b_check", "monotone", "lower_bound"]


def _mass_solutions(cfg: RunConfig, lim: FluxLimiter) -> list[dict]:
    out = []
    for M in cfg.masses:
        sol = solve_for_mass(M, lim, tol=cfg.tol)
        out.append({"M": sol.M, "exists": sol.exists, "a": sol.a, "b": sol.b, "rel_error": sol.rel_error})
    return out


def run_steady_shoot(cfg: RunConfig, out: Path, jobs: int):
    lim = make_limiter(cfg)
    if cfg.d >= 3:
        pr = nonexistence_probe_d_gt_2(cfg.d, cfg.probe_a, lim, cfg.probe_r_max)
        write_csv(out / "probe.csv", ["r", "v", "rho"], zip(pr.r, pr.v, pr.rho))
        res = {"d": cfg.d, "a": pr.a, "growth_ratio": pr.growth_ratio, "min_rho_margin": pr.min_rho_margin,
               "rho_bounded_below": pr.rho_bounded_below}
        return res, []
    shots = sweep_b(_a_values(cfg), lim, jobs=jobs)
    write_csv(out / "sweep.csv", _SWEEP_HEADER, _sweep_rows(shots))
    bs = np.array([s.b for s in shots])
    bound = 4.0 / lim.phi0
    res = {"phi0": lim.phi0, "b_lower_bound": bound, "min_b": float(bs.min()),
           "all_above_bound": bool(np.all(bs > bound)), "all_monotone": all(s.monotone for s in shots),
           "masses": _mass_solutions(cfg, lim)}
    checks = [_check("monotone_trajectories", sum(not s.monotone for s in shots), 1)]
    return res, checks


def run_critical_mass(cfg: RunConfig, out: Path, jobs: int):
    lim = make_limiter(cfg)
    rep = critical_mass(lim, cfg.a_min, cfg.a_max, cfg.n_a, jobs=jobs)
    write_csv(out / "sweep.csv", _SWEEP_HEADER, _sweep_rows(rep.sweep))
    res = rep.as_dict()
    res["masses"] = _mass_solutions(cfg, lim)
    return res, []


def run_entropy_track(cfg: RunConfig, out: Path, jobs: int):
    lim = make_limiter(cfg)
    chain = build_scalar_chain(lim, cfg.M)
    x = np.linspace(-cfg.L, cfg.L, cfg.cells + 1)
    ubar = chain.A_inv(x)
    ends = (ubar[0], ubar[-1]) if cfg.steady_ends else None
    state = mass_coordinate_state(cfg.L, cfg.cells, cfg.M, mass_profile(cfg), ends=ends)
    if not cfg.steady_ends:
        ubar[0], ubar[-1] = -chain.half, chain.half
    dt_max = max_stable_dt_mass_coordinate(state, chain, cfg.cfl)
    dt = min(cfg.dt or 0.04, dt_max)
    rep = track_entropy(state, chain, ubar, cfg.T_end, dt, every=cfg.output_every)
    # the two transport distances are recorded side by side; their ratio is
    # flagged when it leaves [0.95, 1.05] while both are above rounding level
    with np.errstate(divide="ignore", invalid="ignore"):
        w2_ratio = np.where(rep.w2_quantile > 0, rep.w2_cdf / rep.w2_quantile, np.nan)
    live = rep.w2_quantile > 1e-8 * max(rep.w2_quantile[0], 1e-300)
    ratio_last = float(w2_ratio[live][-1]) if np.any(live) else float("nan")
    disagree = bool(np.any(np.abs(w2_ratio[live] - 1.0) > 0.05))
    if disagree:
        log.warning("w2_cdf and w2_quantile disagree (last ratio %.4f)", ratio_last)
    write_csv(out / "series.csv", ["t", "E", "dissipation", "w2_cdf", "w2_quantile", "w2_ratio"],
              zip(rep.t, rep.E, rep.dissipation, rep.w2_cdf, rep.w2_quantile, w2_ratio))
    write_csv(out / "rate.csv", ["t", "dE_dt", "minus_dissipation"],
              zip(rep.rate_t, -np.asarray(rep.rate_drop), -np.asarray(rep.rate_diss)))
    res = {"dt": rep.dt, "E0": rep.E[0], "E_final": rep.E[-1], "ratio": rep.ratio,
           "max_increase": rep.max_increase(), "w2": rep.w2, "w2_ratio_last": ratio_last,
           "w2_definitions_disagree": disagree, "rate_mismatch_after_t1": rep.rate_mismatch(),
           "steady_ends": cfg.steady_ends}
    slack = 1e-9
    checks = [_check("entropy_nonincreasing", rep.max_increase() / max(rep.E[0], 1e-300), slack,
                     passed=rep.is_nonincreasing(slack))]
    return res, checks


def run_decay_fit(cfg: RunConfig, out: Path, jobs: int):
    data = read_csv(Path(cfg.series))
    if "t" not in data or cfg.column not in data:
        raise ConfigError(f"column: series must have columns 't' and {cfg.column!r}; found {sorted(data)}")
    window = tuple(cfg.window) if cfg.window is not None else None
    fit = decay_fit(data["t"], data[cfg.column], window)
    p = {"linf": np.inf, "l2": 2.0}.get(cfg.column)
    res = {"column": cfg.column, "slope": fit.slope, "stderr": fit.stderr, "intercept": fit.intercept,
           "r2": fit.r2, "n": fit.n, "window": list(fit.window),
           "expected_slope": expected_decay_slope(cfg.d, p) if p is not None else None}
    write_csv(out / "fit.csv", ["slope", "stderr", "intercept", "r2", "n"],
              [(fit.slope, fit.stderr, fit.intercept, fit.r2, fit.n)])
    return res, []


RUNNERS = {"evolve-1d": run_evolve_1d, "evolve-radial": run_evolve_radial,
           "kinetic-converge": run_kinetic_converge, "steady-shoot": run_steady_shoot,
           "critical-mass": run_critical_mass, "entropy-track": run_entropy_track,
           "decay-fit": run_decay_fit}


# ---------------------------------------------------------------------------
# driver

def _attach_log(out: Path) -> logging.Handler:
    h = logging.FileHandler(out / "run.log", mode="w")
    h.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger()
    root.addHandler(h)
    root.setLevel(logging.INFO)
    return h


def run(cfg: RunConfig, out: Path, jobs: int = 1, config_path: str | None = None) -> int:
    """Run one experiment into ``out`` and return the exit status."""
    out.mkdir(parents=True, exist_ok=True)
    handler = _attach_log(out)
    t0 = time.perf_counter()
    summary = {"experiment": cfg.experiment, "version": __version__, "config_path": config_path,
               "config": cfg.echo(), "config_sha256": cfg.digest()}
    try:
        log.info("running %s (config sha256 %s)", cfg.experiment, summary["config_sha256"])
        try:
            res, checks = RUNNERS[cfg.experiment](cfg, out, jobs)
            res.pop("rho", None)
            status = EXIT_OK if all(c.passed for c in checks) else EXIT_INVARIANT
            summary.update(status="ok" if status == EXIT_OK else "invariant breach", results=res,
                           invariants=[c.as_dict() for c in checks])
        except (ConfigError, ParameterError) as exc:
            log.error("configuration error: %s", exc)
            summary.update(status="config error", error=str(exc))
            status = EXIT_CONFIG
        except (FLKSError, ArithmeticError) as exc:
            log.error("solver failure: %s: %s", type(exc).__name__, exc)
            summary.update(status="solver failure", error=f"{type(exc).__name__}: {exc}")
            status = EXIT_SOLVER
        summary["wall_time"] = time.perf_counter() - t0
        summary["exit_status"] = status
        (out / "summary.json").write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
        log.info("finished with status %d in %.2f s", status, summary["wall_time"])
        return status
    finally:
        logging.getLogger().removeHandler(handler)
        handler.close()


def run_checks(out: Path | None) -> int:
    t0 = time.perf_counter()
    results = run_invariant_suite()
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.value:.3e} < {r.threshold:.1e}")
    ok = all(r.passed for r in results)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        summary = {"experiment": "check", "version": __version__, "wall_time": time.perf_counter() - t0,
                   "invariants": [r.as_dict() for r in results], "status": "ok" if ok else "invariant breach"}
        (out / "summary.json").write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
    return EXIT_OK if ok else EXIT_INVARIANT


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="flks", description="Flux-limited Keller-Segel experiments.")
    ap.add_argument("--check", action="store_true", help="run the invariant suite only")
    ap.add_argument("--version", action="version", version=f"flks {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log to stderr as well")
    sub = ap.add_subparsers(dest="experiment")
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", help="YAML run configuration (defaults if omitted)")
        p.add_argument("--out", help="output directory (default: config 'out' or runs/<experiment>)")
        p.add_argument("--jobs", type=int, default=1, help="parallel workers for sweeps")
        p.add_argument("--check", dest="sub_check", action="store_true", help="run the invariant suite only")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    out_arg = getattr(args, "out", None)
    if args.check or getattr(args, "sub_check", False):
        return run_checks(Path(out_arg) if out_arg else None)
    if args.experiment is None:
        build_parser().print_usage(sys.stderr)
        print("flks: error: an experiment or --check is required", file=sys.stderr)
        return EXIT_CONFIG
    if args.jobs < 1:
        print("flks: error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = parse_config(args.config, args.experiment)
    except (ConfigError, ParameterError) as exc:
        print(f"flks: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(out_arg or cfg.out or Path("runs") / cfg.experiment)
    return run(cfg, out, args.jobs, args.config)


if __name__ == "__main__":
    sys.exit(main())
