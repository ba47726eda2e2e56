"""Command-line front end: ``ergobound <subcommand> --config <path> [--seed N] [--out DIR]``.

Every subcommand writes ``<subcommand>.json`` (validated against the report
schema), one or more RFC-4180 CSV tables and ``manifest.json``. Exit codes:
0 when every check passes, 2 when a bound check fails, 1 on input errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import mpmath as mp
import numpy as np

from . import __version__
from .bridge import BridgeError, TimeGrid, build_bridge_kernel, kernel_identity_residual, v_norm_profile, validate_marginals
from .config import REPORT_SCHEMA, ConfigError, RunConfig, load_config, validate
from .drift import check_dissipativity
from .ergodicity import BoundInputError
from .girsanov import transition_density
from .linop import (
    ModelError,
    cameron_martin_g,
    gaussian_logpdf,
    hs_integrability_diagnostic,
    is_stable,
    kalman_strong_feller,
    stationary_covariance,
)
from .lower_bounds import BoundVerificationError, delta_small_set, verification_grid
from .pipeline import (
    build_lower_bound,
    canonical_json,
    compute_bounds,
    cubic_family,
    linear_tv_curves,
    mp_str,
    scaled_bound,
)
from .rng import as_stream
from .sim import SimConfig, SimulationError, ergodicity_experiment, parameter_sweep, reference_sample, simulate_sde, two_chain_experiment

log = logging.getLogger("ergobound")

SUBCOMMANDS = ("check", "bridge-validate", "density", "lower-bound", "bounds", "simulate", "ergodicity-report", "sweep")
DEFAULT_TIMES = tuple(np.round(np.linspace(0.5, 5.0, 10), 10))
BURN_IN_CAP = 20.0


class Outcome:
    """What a subcommand produced: verdict, JSON results, CSV tables, notes."""

    def __init__(self):
        self.passed = True
        self.results: dict = {}
        self.tables: dict[str, tuple[list[str], list[list]]] = {}
        self.notes: list[str] = []

    def table(self, name, header, rows):
        self.tables[name] = (list(header), [list(r) for r in rows])

    def fail(self, why: str):
        self.passed = False
        self.notes.append(f"FAIL: {why}")


def _fmt(v):
    if isinstance(v, mp.mpf):
        return mp_str(v)
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _vec(text: str, d: int, what: str) -> np.ndarray:
    try:
        v = np.array([float(t) for t in text.split(",")])
    except ValueError:
        raise ConfigError(f"{what} must be comma-separated numbers, got {text!r}", f"argv.{what}") from None
    if v.size != d:
        raise ConfigError(f"{what} must have {d} components, got {v.size}", f"argv.{what}")
    return v


# --- subcommands -----------------------------------------------------------------------

def cmd_check(cfg: RunConfig, args) -> Outcome:
    out = Outcome()
    model, drift = cfg.model, cfg.drift
    reg = kalman_strong_feller(model)
    res = {"dimension": model.d, "kalman_rank": reg.kalman_rank, "strong_feller": reg.strong_feller}
    if not reg.strong_feller:
        out.fail("Kalman rank deficient; Q_t is singular")
    else:
        hs = hs_integrability_diagnostic(model)
        res["hs_integral"] = {"eps_ladder": list(hs.eps_ladder), "values": list(hs.hs_integral), "converged": hs.converged,
                             "extrapolated_limit": hs.hs_limit}
        out.table("hs_integral", ["eps", "integral"], zip(hs.eps_ladder, hs.hs_integral))
        if not hs.converged:
            out.fail("Hilbert-Schmidt integral not converged on the epsilon ladder")
        kernel = build_bridge_kernel(model, TimeGrid(cfg.grid_M, cfg.eps_end))
        prof = v_norm_profile(kernel)
        flagged = [t for t, _, f in prof if f]
        res["v_norm_max"] = max(n for _, n, _ in prof)
        res["v_norm_flagged_nodes"] = flagged
        res["kernel_identity_residual"] = kernel_identity_residual(kernel)
        out.table("v_norm", ["t", "norm_V", "flagged"], prof)
        if flagged:
            out.fail(f"||V_t|| >= 1 at {len(flagged)} interior nodes")
    res["A_stable"] = is_stable(model.A)
    if res["A_stable"]:
        res["stationary_covariance"] = stationary_covariance(model).tolist()
    try:
        drift.check_growth(model.d, as_stream(cfg.seed))
        res["growth_check"] = "ok"
    except ModelError as exc:
        res["growth_check"] = str(exc)
        out.fail("growth bound violated")
    if drift.has_dissipativity:
        try:
            res["dissipativity_max_margin"] = check_dissipativity(model, drift, as_stream(cfg.seed))
        except ModelError as exc:
            res["dissipativity_check"] = str(exc)
            out.fail("dissipativity inequality violated")
    else:
        out.notes.append("no dissipativity constants declared; growth-based bounds unavailable")
    out.results = res
    return out


def cmd_bridge_validate(cfg: RunConfig, args) -> Outcome:
    out = Outcome()
    d = cfg.model.d
    x = np.ones(d)
    y = np.zeros(d)
    kernel = build_bridge_kernel(cfg.model, TimeGrid(cfg.grid_M, cfg.eps_end))
    rows = validate_marginals(kernel, x, y, n_paths=cfg.n_paths, rng=as_stream(cfg.seed), batch_size=cfg.batch_size)
    resid = kernel_identity_residual(kernel)
    out.table("marginals", ["strategy", "t", "quantity", "estimate", "oracle", "stderr", "pass"],
              ([r["strategy"], r["t"], r["quantity"], r["estimate"], r["oracle"], r["stderr"], r["pass"]] for r in rows))
    n_fail = sum(not r["pass"] for r in rows)
    out.results = {"x": x.tolist(), "y": y.tolist(), "n_paths": cfg.n_paths, "comparisons": len(rows),
                   "failures": n_fail, "kernel_identity_residual": resid}
    if n_fail:
        out.fail(f"{n_fail} marginal comparisons outside 3 standard errors")
    if resid > 1e-8:
        out.fail(f"kernel identity residual {resid:.3g} > 1e-8")
    return out


def cmd_density(cfg: RunConfig, args) -> Outcome:
    out = Outcome()
    d = cfg.model.d
    x, y = _vec(args.x, d, "x"), _vec(args.y, d, "y")
    reference = cfg.density.get("reference", "vs_lebesgue")
    n = int(cfg.density.get("n_paths", cfg.n_paths))
    kernel = build_bridge_kernel(cfg.model, TimeGrid(cfg.grid_M, cfg.eps_end))
    stream = as_stream(cfg.seed)
    if reference == "h":
        from .girsanov import h_estimate

        est = h_estimate(kernel, cfg.drift, x, y, n, stream, cfg.batch_size, cfg.workers)
    else:
        est = transition_density(kernel, cfg.drift, x, y, n, stream, reference, cfg.batch_size, cfg.workers)
    res = {"x": x.tolist(), "y": y.tolist(), "reference": reference, "value": est.value, "stderr": est.stderr,
           "n_paths": est.n_paths, "ess": est.ess, "flags": list(est.flags),
           "g": float(cameron_martin_g(cfg.model, x, y))}
    row = [x.tolist(), y.tolist(), reference, est.value, est.stderr, "", ""]
    if cfg.drift.linear is not None and reference != "h":
        from .drift import closed_loop_model
        from .linop import gramian, semigroup

        cl = closed_loop_model(cfg.model, cfg.drift)
        logp = float(gaussian_logpdf(y, semigroup(cl, 1.0) @ x, gramian(cl, 1.0).Qt))
        if reference == "vs_mu1":
            logp -= float(gaussian_logpdf(y, np.zeros(d), kernel.G1.Qt))
        exact = float(np.exp(logp))
        rel = abs(est.value - exact) / exact
        res.update({"exact": exact, "relative_error": rel})
        row[5:] = [exact, rel]
        if rel > 0.05:
            out.fail(f"relative error {rel:.3g} against the exact linear density exceeds 5%")
    if est.flags:
        out.notes.extend(est.flags)
    out.table("density", ["x", "y", "reference", "value", "stderr", "exact", "relative_error"],
              [[";".join(map(repr, row[0])), ";".join(map(repr, row[1]))] + row[2:]])
    out.results = res
    return out


def cmd_lower_bound(cfg: RunConfig, args) -> Outcome:
    out = Outcome()
    stream = as_stream(cfg.seed)
    try:
        lbm = build_lower_bound(cfg.model, cfg.drift, cfg.bounds, stream)
    except BoundVerificationError as exc:
        out.fail(str(exc))
        out.results = {"verified": False}
        return out
    rep = lbm.report
    logb1, b2, b3, p = lbm.packaged
    R = cfg.bounds.R if cfg.bounds.R is not None else 1.0
    r = cfg.bounds.r if cfg.bounds.r is not None else np.inf
    delta = delta_small_set(lbm, R, r, cfg.bounds.n_delta, stream.spawn("delta"), cfg.confidence, cfg.bounds.delta_method)
    out.results = {
        "K": lbm.K, "m": lbm.m, "p": p, "eta": lbm.eta,
        "L_table": {f"{k:g}": v for k, v in rep.L_table.items()},
        "c_B1": rep.c_B1, "c_B1_sq": rep.c_B1_sq,
        "u_sup_moments": {f"{k:g}": v.value for k, v in rep.u_sup_moments.items()},
        "det_norm": rep.det_norm, "confidence": rep.confidence, "moment_paths": rep.n_paths,
        "packaged": {"log_b1": logb1, "b2": b2, "b3": b3, "p": p}, "verified": True,
        "delta": {"R": R, "r": None if not np.isfinite(r) else r, "value": mp_str(delta.delta),
                  "log": delta.log_delta, "method": delta.method, "vacuous": delta.vacuous},
    }
    xs, ys = verification_grid(cfg.model.d)
    pw = lbm.exponent(xs, ys)
    pk = lbm.packaged_exponent(xs, ys)
    out.table("exponent_grid", ["x1", "y1", "pointwise_log_l", "packaged_log_l"], zip(xs[:, 0], ys[:, 0], pw, pk))
    if delta.vacuous:
        out.notes.append("delta vacuous at the requested radii")
    return out


def cmd_bounds(cfg: RunConfig, args) -> Outcome:
    out = Outcome()
    rep = compute_bounds(cfg.model, cfg.drift, cfg.bounds, as_stream(cfg.seed))
    out.results = rep.to_dict()
    out.table("rates", ["theta", "one_minus_rho", "omega", "M"],
              ([r["theta"], r["one_minus_rho"], r["omega"], r["M"]] for r in rep.rate_table()))
    out.table("gap", ["norm", "lower_bound"], ([k, mp_str(v)] for k, v in rep.gap.items()))
    out.notes.extend(rep.footnotes)
    return out


def _sim_cfg(cfg: RunConfig, T: float | None = None) -> SimConfig:
    s = cfg.simulation
    h = float(s.get("h", 0.01))
    T = float(T if T is not None else s.get("T_max", 1.0))
    return SimConfig(h=h, T_max=h * np.ceil(T / h - 1e-9), n_paths=int(s.get("n_paths", 20_000)),
                     seed=cfg.seed, batch_size=cfg.batch_size, workers=cfg.workers)


def _x_list(cfg: RunConfig):
    d = cfg.model.d
    if "x_list" in cfg.simulation:
        xs = [np.asarray(x, float) for x in cfg.simulation["x_list"]]
        for k, x in enumerate(xs):
            if x.size != d:
                raise ConfigError(f"expected {d} components", f"$.simulation.x_list[{k}]")
        return xs
    e = np.zeros(d)
    e[0] = 2.0
    return [-e, e]


def cmd_simulate(cfg: RunConfig, args) -> Outcome:
    out = Outcome()
    sim = _sim_cfg(cfg)
    times = cfg.simulation.get("times", list(np.linspace(sim.T_max / 10, sim.T_max, 10)))
    rows = []
    summary = []
    for k, x in enumerate(_x_list(cfg)):
        t_rec, states = simulate_sde(cfg.model, cfg.drift, x, sim, as_stream(cfg.seed).spawn("simulate", k), times)
        for j, t in enumerate(t_rec):
            m = states[:, j].mean(axis=0)
            sd = states[:, j].std(axis=0, ddof=1)
            norm = np.linalg.norm(states[:, j], axis=1)
            rows.append([k, float(t), *m, *sd, norm.mean(), norm.std(ddof=1) / np.sqrt(norm.size)])
        summary.append({"x": x.tolist(), "final_mean": states[:, -1].mean(axis=0).tolist()})
    d = cfg.model.d
    out.table("moments", ["start", "t", *[f"mean{i}" for i in range(d)], *[f"sd{i}" for i in range(d)],
                          "mean_norm", "mean_norm_stderr"], rows)
    out.results = {"h": sim.h, "T_max": sim.T_max, "n_paths": sim.n_paths, "starts": summary}
    return out


def cmd_ergodicity_report(cfg: RunConfig, args) -> Outcome:
    out = Outcome()
    stream = as_stream(cfg.seed)
    rep = compute_bounds(cfg.model, cfg.drift, cfg.bounds, stream)
    times = np.asarray(cfg.simulation.get("times", DEFAULT_TIMES), dtype=float)
    xs = _x_list(cfg)
    sim = _sim_cfg(cfg)
    curves = []
    if cfg.drift.linear is not None:
        curves += linear_tv_curves(cfg.model, cfg.drift, scaled_bound(rep), xs, times, stream.spawn("v"))
        neg = linear_tv_curves(cfg.model, cfg.drift, scaled_bound(rep, 10.0), xs, times, stream.spawn("v"),
                               label="negative-control")
    else:
        wanted = 20 / rep.omega if rep.omega > 0 else mp.inf
        burn = float(cfg.simulation.get("burn_in", min(wanted, BURN_IN_CAP)))
        if burn < wanted:
            out.notes.append(f"burn-in {burn:g} used instead of 20/omega = {mp_str(wanted, 4)}; "
                             "checked by two-snapshot comparison")
        ref = reference_sample(cfg.model, cfg.drift, sim, burn, stream.spawn("reference"))
        curves += ergodicity_experiment(cfg.model, cfg.drift, scaled_bound(rep), xs, sim, times, ref, stream.spawn("v"))
        neg = ergodicity_experiment(cfg.model, cfg.drift, scaled_bound(rep, 10.0), xs, sim, times, ref,
                                    stream.spawn("v"), label="negative-control")
        if not ref.sufficient:
            out.notes.append("reference sample burn-in drift exceeds the noise floor")
    if rep.uniform is not None and len(xs) >= 2:
        curves.append(two_chain_experiment(cfg.model, cfg.drift, lambda t: rep.uniform_bound(t, 2.0), xs[:2], sim, times,
                                           stream.spawn("uniform"), "uniform"))
    for c in curves:
        if not c.verdict:
            out.fail(f"curve {c.label} exceeds its certified bound")
    neg_detected = any(not c.verdict for c in neg)
    if not neg_detected:
        out.notes.append("WARNING: negative control (omega x 10) does not violate the bound; at these constants "
                         "the comparison cannot detect an overstated rate")
    rows = []
    for c in curves + neg:
        rows += [[c.label, t, tv, se, mp_str(b)] for t, tv, se, b in c.rows()]
    out.table("tv_curves", ["curve", "t", "tv", "stderr", "bound"], rows)
    out.table("rates", ["theta", "one_minus_rho", "omega", "M"],
              ([r["theta"], r["one_minus_rho"], r["omega"], r["M"]] for r in rep.rate_table()))
    out.results = {"bounds": rep.to_dict(),
                   "curves": [{"label": c.label, "verdict": c.verdict, "notes": c.notes} for c in curves],
                   "negative_control": {"detected": neg_detected, "curves": [c.label for c in neg]}}
    out.notes.extend(rep.footnotes)
    return out


def cmd_sweep(cfg: RunConfig, args) -> Outcome:
    out = Outcome()
    if cfg.model.d != 1:
        raise ConfigError("the sweep family G_alpha(x) = -x^3 + alpha x needs a scalar model", "$.model")
    s = cfg.simulation
    alphas = s.get("alphas", [0.2, 0.1, 0.0])
    alpha0 = float(s.get("alpha0", 0.0))
    sim = _sim_cfg(cfg)
    res = parameter_sweep(cfg.model, cubic_family(), alphas, alpha0, sim, float(s.get("burn_in", 10.0)),
                          as_stream(cfg.seed), s.get("nbins"))
    out.table("sweep", ["alpha", "tv", "stderr"], zip(res.alphas, res.tv, res.stderr))
    out.results = {"alphas": res.alphas.tolist(), "tv": res.tv.tolist(), "stderr": res.stderr.tolist(),
                   "noise_floor": res.noise_floor.tv, "noise_floor_stderr": res.noise_floor.stderr,
                   "monotone": res.monotone, "at_floor": res.at_floor}
    if not res.monotone:
        out.fail("TV does not decrease as alpha approaches alpha0")
    if not res.at_floor:
        out.fail("TV at the closest alpha is above the estimator noise floor")
    return out


HANDLERS = {
    "check": cmd_check,
    "bridge-validate": cmd_bridge_validate,
    "density": cmd_density,
    "lower-bound": cmd_lower_bound,
    "bounds": cmd_bounds,
    "simulate": cmd_simulate,
    "ergodicity-report": cmd_ergodicity_report,
    "sweep": cmd_sweep,
}


# --- output ----------------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, mp.mpf):
        return mp_str(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    return obj


def write_outputs(sub: str, cfg: RunConfig, outcome: Outcome, out_dir: Path, emit_plots: bool) -> list[str]:
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = sub.replace("-", "_")
    files = []
    report = {
        "subcommand": sub,
        "verdict": "PASS" if outcome.passed else "FAIL",
        "seed": cfg.seed,
        "config_hash": cfg.hash,
        "version": __version__,
        "results": _jsonable(outcome.results),
        "notes": outcome.notes,
    }
    validate(report, REPORT_SCHEMA)
    if "json" in cfg.formats:
        (out_dir / f"{stem}.json").write_text(canonical_json(report) + "\n", encoding="utf-8")
        files.append(f"{stem}.json")
    if "csv" in cfg.formats:
        for name, (header, rows) in outcome.tables.items():
            fname = f"{stem}_{name}.csv"
            with open(out_dir / fname, "w", encoding="utf-8", newline="") as fh:
                w = csv.writer(fh, lineterminator="\r\n")
                w.writerow(header)
                for r in rows:
                    w.writerow([_fmt(v) for v in r])
            files.append(fname)
    if emit_plots:
        files.append(write_plot_script(stem, outcome, out_dir))
    manifest = {
        "subcommand": sub,
        "version": __version__,
        "seed": cfg.seed,
        "config_hash": cfg.hash,
        "config": cfg.raw,
        "files": files,
        "verdict": report["verdict"],
    }
    (out_dir / "manifest.json").write_text(canonical_json(manifest) + "\n", encoding="utf-8")
    return files


def write_plot_script(stem: str, outcome: Outcome, out_dir: Path) -> str:
    """A gnuplot script with one plot per CSV table (first column against the numeric rest)."""
    lines = ["# gnuplot script generated by ergobound", "set datafile separator ','", "set key autotitle columnhead",
             "set terminal pngcairo size 900,600"]
    for name, (header, rows) in outcome.tables.items():
        fname = f"{stem}_{name}.csv"
        numeric = [j for j in range(len(header)) if rows and all(isinstance(r[j], (int, float, np.floating)) and not isinstance(r[j], bool) for r in rows)]
        if len(numeric) < 2:
            continue
        xcol = numeric[0] + 1
        lines.append(f"set output '{stem}_{name}.png'")
        if name == "tv_curves":
            lines.append("set logscale y")
        plots = [f"'{fname}' using {xcol}:{j + 1} with linespoints" for j in numeric[1:]]
        lines.append("plot " + ", \\\n     ".join(plots))
        lines.append("unset logscale")
    path = out_dir / f"{stem}.gp"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path.name


# --- entry point -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ergobound", description="Certified ergodicity bounds for semilinear SDEs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True, metavar="subcommand")
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        if name == "density":
            p.add_argument("x", help="start state, comma-separated")
            p.add_argument("y", help="end state, comma-separated")
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--seed", type=int, default=None, help="override mc.seed")
        p.add_argument("--out", default=None, help="output directory (overrides output.directory)")
        p.add_argument("--emit-plots", action="store_true", help="also write a gnuplot script for the CSV tables")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors; those are input errors here
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.seed is not None and args.seed < 0:
            raise ConfigError("seed must be nonnegative", "argv.--seed")
        cfg = load_config(args.config, seed=args.seed, out=args.out)
        outcome = HANDLERS[args.subcommand](cfg, args)
        files = write_outputs(args.subcommand, cfg, outcome, Path(cfg.output_dir), args.emit_plots)
    except (ConfigError, ModelError, BoundInputError, BridgeError, SimulationError) as exc:
        print(f"ergobound: input error: {exc}", file=sys.stderr)
        return 1
    verdict = "PASS" if outcome.passed else "FAIL"
    print(f"{args.subcommand}: {verdict} ({', '.join(files)} in {cfg.output_dir})")
    for note in outcome.notes:
        if note.startswith("FAIL"):
            print(f"  {note}", file=sys.stderr)
    return 0 if outcome.passed else 2


if __name__ == "__main__":
    sys.exit(main())
