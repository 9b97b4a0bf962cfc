# harness.py
"""
Command-line entry point. One subcommand per experiment; each run writes its
CSV/JSON/SVG outputs and a manifest.json into <out>/<experiment>/.

    python harness.py cov --t 1 --s 1 --x 0 --y 0
    python harness.py simulate --config configs/simulate.yaml --seed 7 --threads 4
    python harness.py report --in runs

Exit status: 0 success, 2 invalid input or statistical refusal, 3 numerical failure.
"""

import argparse
import dataclasses
import logging
import math
import sys
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import special

import plot_utils
from config_loader import load_config, seed_of, spde_config
from data_utils import RunManifest, default_out_dir, write_csv, write_json
from sim_utils import DomainError, NumericalError, RefusalError, configure_logging, make_rng, stream_id
from slowpoints import exponent, gaussfield, kernels, slowset, spde
from slowpoints.report import build_report

logger = logging.getLogger("harness")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3
SINGLE_POINT_TARGET = 0.682689


# === RUNNERS ===

def _save_csv(manifest, name, df, table):
    path = write_csv(df, manifest.path(name), manifest.csv_meta(), table)
    manifest.add_output(path)


def _save_json(manifest, name, obj, schema):
    path = write_json(obj, manifest.path(name), schema)
    manifest.add_output(path)


def _save_svg(manifest, name, fig):
    path = plot_utils.export_svg(fig, manifest.path(name))
    if path is None:
        manifest.warn(f"{name} not rendered (static export unavailable)")
    else:
        manifest.add_output(path)


def run_cov(cfg, manifest, threads):
    b = cfg["cov"]
    q = kernels.KernelQuery(float(b["t"]), float(b["x"]), float(b["s"]), float(b["y"]))
    value = kernels.cov_h(q)
    row = {"t": q.t, "s": q.s, "x": q.x, "y": q.y, "cov": value}
    if b["check"]:
        row["cov_quad"] = kernels.cov_h_quad(q)
        row["rel_error"] = abs(value - row["cov_quad"]) / max(abs(row["cov_quad"]), 1e-300)
    rows = [row]

    n = int(b["oracle_triples"])
    if n:
        rng = make_rng(seed_of(cfg), stream_id("cov", 0))
        t, s, d = np.exp(rng.uniform(math.log(1e-3), math.log(4.0), size=(3, n)))
        for ti, si, di in zip(t, s, d):
            qi = kernels.KernelQuery(float(ti), 0.0, float(si), float(di))
            exact, quad = kernels.cov_h(qi), kernels.cov_h_quad(qi)
            rows.append({"t": qi.t, "s": qi.s, "x": 0.0, "y": qi.y, "cov": exact, "cov_quad": quad,
                         "rel_error": abs(exact - quad) / max(abs(quad), 1e-300)})

    print(f"{value:.6f}" + (f" {row['cov_quad']:.6f}" if b["check"] else ""))
    df = pd.DataFrame(rows)
    _save_csv(manifest, "covariance.csv", df, "covariance")
    checks = {"cov": value}
    if "rel_error" in df:
        checks["max_rel_error"] = float(df["rel_error"].max())
    _save_json(manifest, "summary.json", {"experiment": "cov", "checks": checks}, "summary")


def run_sample_h(cfg, manifest, threads):
    b = cfg["sample-h"]
    seed = seed_of(cfg)
    grid = gaussfield.build_grid(float(b["a"]), float(b["b"]), int(b["points_per_octave"]))
    factor = gaussfield.factor_covariance(grid, b["alpha"])
    cal = gaussfield.covariance_calibration(factor, int(b["n_paths"]), seed, int(b["batches"]))
    i, j = np.triu_indices(len(grid))
    df = pd.DataFrame({
        "i": i, "j": j, "t_i": grid.times[i], "t_j": grid.times[j],
        "empirical": cal["empirical"][i, j], "target": cal["target"][i, j],
        "se": cal["se"][i, j], "z": cal["z"][i, j],
    })
    _save_csv(manifest, "calibration.csv", df, "calibration")

    theta = float(b["theta"])
    single = exponent.estimate_survival(theta, 1.0, int(b["points_per_octave"]), int(b["single_point_trials"]),
                                        (seed[0], stream_id("single-point", seed[1])), threads)
    target = float(special.erf(theta / math.sqrt(2.0 * kernels.var_h(1.0))))
    sd = math.sqrt(target * (1.0 - target) / single.trials)
    _save_csv(manifest, "single_point.csv", exponent.records_frame([single]), "survival")

    checks = {
        "grid_points": len(grid),
        "jitter": factor.jitter_applied,
        "reproduction_error": factor.reproduction_error,
        "max_abs_z": cal["max_abs_z"],
        "within_5se": cal["max_abs_z"] <= 5.0,
        "single_point_p": single.p_hat,
        "single_point_target": target,
        "single_point_z": (single.p_hat - target) / sd,
    }
    logger.info("sampler: max |z| %.3g, single point %.6f vs %.6f", cal["max_abs_z"], single.p_hat, target)
    _save_json(manifest, "summary.json", {"experiment": "sample-h", "checks": checks}, "summary")


def _profile_json(profile, kind):
    out = {k: v for k, v in profile.items() if k != "table"}
    out["kind"] = kind
    return out


def run_simulate(cfg, manifest, threads):
    b = cfg["simulate"]
    config = spde_config(b["spde"], seed_of(cfg))
    runs = spde.run_ensemble(config, int(b["replicas"]), int(b["batch_size"]), threads)
    t_range = tuple(b["t_range"]) if b["t_range"] else None
    _, snapped, snap = config.snapped_checkpoints()

    profiles = []
    if b["profile"] in ("linearization", "both"):
        lin = spde.linearization_profile(runs, t_range)
        _save_csv(manifest, "linearization.csv", lin["table"], "linearization")
        _save_svg(manifest, "linearization.svg",
                  plot_utils.profile_figure(lin["table"], "l2_error", "l2_error_se", "‖E(t,0)‖₂"))
        profiles.append(_profile_json(lin, "linearization"))
    if b["profile"] in ("truncation", "both"):
        tr = spde.truncation_profile(runs, t_range)
        _save_csv(manifest, "truncation.csv", tr["table"], "truncation")
        _save_svg(manifest, "truncation.svg",
                  plot_utils.profile_figure(tr["table"], "l2_gap", "l2_gap_se", "‖u − ū‖₂"))
        for w in tr["warnings"]:
            manifest.warn(w)
        profiles.append(_profile_json(tr, "truncation"))

    _save_json(manifest, "profile.json", {
        "sigma": config.sigma.describe(),
        "stability_margin": config.stability_margin,
        "half_width": config.half_width,
        "checkpoints": snapped,
        "snap_distance": snap,
        "max_snap": float(np.max(np.abs(snap))),
        "profiles": profiles,
    }, "profile")


def run_exponent(cfg, manifest, threads):
    b = cfg["exponent"]
    seed = seed_of(cfg)
    budget = exponent.SurvivalBudget(tuple(float(r) for r in b["ratios"]), int(b["density"]), int(b["trials"]))
    curve, records = exponent.lambda_curve(b["thetas"], budget, seed, threads, b["alpha"], float(b["start"]))
    asym = exponent.asymptotic_check(curve)
    for w in curve.warnings + curve.violations:
        manifest.warn(w)

    _save_csv(manifest, "survival.csv", exponent.records_frame(records), "survival")
    if b["densities"]:
        sweep = exponent.density_sweep(float(b["sweep_theta"]), max(budget.ratios), b["densities"],
                                       budget.trials, seed, threads)
        _save_csv(manifest, "density.csv", exponent.records_frame(sweep), "survival")
    _save_json(manifest, "curve.json", {**curve.as_dict(), "asymptotic": asym}, "curve")
    _save_svg(manifest, "survival.svg", plot_utils.survival_figure(records))
    if curve.entries:
        _save_svg(manifest, "lambda.svg", plot_utils.lambda_figure(curve))


def run_smallball(cfg, manifest, threads):
    b = cfg["smallball-u"]
    seed = seed_of(cfg)
    f = exponent.F_CATALOG[b["f"]]
    grid = exponent.smallball_checkpoints(b["eps"], f, int(b["points_per_octave"]))
    config = spde_config(b["spde"], seed, checkpoints=grid)
    runs = spde.run_ensemble(config, int(b["replicas"]), int(b["batch_size"]), threads)

    g = b["gaussian"]
    gaussian = None
    try:
        records = exponent.survival_table([b["theta"]], g["ratios"], int(g["density"]), int(g["trials"]),
                                          (seed[0], stream_id("smallball-gaussian", seed[1])), threads)
        gaussian = exponent.fit_lambda(records)
    except RefusalError as e:
        logger.warning("gaussian reference unavailable: %s", e)
        manifest.warn(str(e))

    result = exponent.smallball_u(float(b["theta"]), b["eps"], f, runs, gaussian)
    for w in result["warnings"]:
        manifest.warn(w)
    _save_csv(manifest, "smallball.csv", result["table"], "smallball")
    _save_json(manifest, "smallball.json", {k: v for k, v in result.items() if k != "table"}, "smallball")


def run_localize(cfg, manifest, threads):
    b = cfg["localize-check"]
    rows = []
    for alpha in b["alphas"]:
        for t in b["times"]:
            q = kernels.LocalizationQuery(float(t), float(alpha))
            gap, bound = kernels.localization_l2(q), kernels.localization_bound(q)
            rows.append({
                "t": q.t, "alpha": q.alpha,
                "var_h": kernels.var_h(q.t), "var_h_alpha": kernels.var_h_alpha(q),
                "l2_gap": gap, "bound": bound, "within_bound": bool(0.0 <= gap <= bound),
            })
    df = pd.DataFrame(rows)
    _save_csv(manifest, "localization.csv", df, "localization")
    _save_svg(manifest, "localization.svg", plot_utils.localization_figure(df))
    checks = {"all_within_bound": bool(df["within_bound"].all()), "max_gap_over_bound": float((df["l2_gap"] / df["bound"]).max())}
    _save_json(manifest, "summary.json", {"experiment": "localize-check", "checks": checks}, "summary")


def run_slowset(cfg, manifest, threads):
    b = cfg["slowset"]
    seed = seed_of(cfg)
    config = spde_config(b["spde"], seed)
    runs = spde.run_ensemble(config, int(b["replicas"]), int(b["batch_size"]), threads)
    window = tuple(float(w) for w in b["window"])
    thetas = [float(t) for t in b["thetas"]]

    lam = b["lambda"]
    records = exponent.survival_table(thetas, lam["ratios"], int(lam["density"]), int(lam["trials"]),
                                      (seed[0], stream_id("slowset-lambda", seed[1])), threads)
    fits = {}
    for th in thetas:
        try:
            fits[th] = exponent.fit_lambda([r for r in records if r.theta == th])
        except RefusalError as e:
            manifest.warn(str(e))
    curve = exponent.curve_from_fits(list(fits.values()))
    theta_c = b["theta_c"] if b["theta_c"] is not None else curve.theta_c_hat

    stats = [spde.field_statistic(run, window) for run in runs]
    combined = dataclasses.replace(stats[0], values=np.concatenate([s.values for s in stats]))
    census_rows, comparisons = [], []
    for r in range(combined.values.shape[0]):
        for th in thetas:
            pts, census, est = slowset.census_pipeline(combined, th, b["n_max"], replica=r)
            census_rows.extend({"replica": r, "theta": th, **row} for row in census.as_rows())
            row = {"replica": r, "theta": th, "points": len(pts), "dimension": None}
            if est is not None and th in fits:
                row.update(slowset.dimension_vs_theory(est, fits[th], th, theta_c))
            elif est is not None:
                row.update({"dimension": est.slope, "dimension_se": est.se})
            comparisons.append(row)
            if r == 0:
                theory = 1.0 - 2.0 * fits[th].lambda_hat if th in fits else None
                _save_svg(manifest, f"census_theta{th:g}.svg",
                          plot_utils.census_figure(census, est, theory, f"Box census, θ={th:g}"))

    _save_csv(manifest, "census.csv", pd.DataFrame(census_rows), "census")
    sweep = [{"theta": th, **row} for th in thetas
             for row in slowset.window_sweep(runs[0], th, window[1], b["t_mins"])]
    _save_csv(manifest, "window.csv", pd.DataFrame(sweep), "window")

    payload = {
        "window": list(window),
        "theta_c": theta_c,
        "comparisons": comparisons,
        "hitting": [slowset.hitting_frequency(combined, th, tuple(b["interval"])) for th in thetas],
        "shells": slowset.multifractal_shells(combined, theta_c, n_shells=int(b["shells"])) if theta_c else [],
        "lambda": curve.as_dict(),
        "exploratory": True,
    }
    _save_json(manifest, "slowset.json", payload, "slowset")


RUNNERS = {
    "cov": run_cov,
    "sample-h": run_sample_h,
    "simulate": run_simulate,
    "exponent": run_exponent,
    "smallball-u": run_smallball,
    "localize-check": run_localize,
    "slowset": run_slowset,
}


def run_report(root, out_dir):
    text, summary = build_report(root)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "report.md"
    path.write_text(text, encoding="utf-8")
    print(path)
    return summary


# === CLI ===

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment file")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--stream", type=int, help="stream id under the master seed")
    common.add_argument("--threads", type=int, help="worker threads")
    common.add_argument("--out", help="output root (default $SLOWPOINTS_OUT or ./runs)")
    common.add_argument("--log-level", default="INFO")
    common.add_argument("--set", action="append", default=[], metavar="PATH=VALUE",
                        help="override a config value, e.g. --set spde.dx=0.01")

    parser = argparse.ArgumentParser(prog="slowpoints", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    cov = sub.add_parser("cov", parents=[common], help="covariance of H at two space-time points")
    for name in ("t", "s", "x", "y"):
        cov.add_argument(f"--{name}", type=float)
    cov.add_argument("--check", action="store_true", help="also print the quadrature value")

    for name, text in (
        ("sample-h", "exact Gaussian path sampler calibration"),
        ("simulate", "coupled SPDE runs and error profiles"),
        ("exponent", "survival table and exponent curve"),
        ("smallball-u", "nonlinear small-ball cross-check"),
        ("localize-check", "localization gap table"),
        ("slowset", "slow-set detection and box counting"),
    ):
        sub.add_parser(name, parents=[common], help=text)

    report = sub.add_parser("report", parents=[common], help="consolidated report over run directories")
    report.add_argument("--in", dest="in_dir", help="directory holding run manifests")
    return parser


def _overrides(args):
    out = list(args.set)
    for key in ("seed", "stream", "threads"):
        if getattr(args, key) is not None:
            out.append(f"{key}={getattr(args, key)}")
    if args.command == "cov":
        for key in ("t", "s", "x", "y"):
            if getattr(args, key) is not None:
                out.append(f"cov.{key}={getattr(args, key)!r}")
        if args.check:
            out.append("cov.check=true")
    if args.command == "report" and args.in_dir:
        out.append(f"report.in={args.in_dir}")
    return out


def main(argv=None):
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    manifest = None
    try:
        cfg = load_config(args.config, args.command, _overrides(args))
        out_root = Path(args.out or default_out_dir())

        if args.command == "report":
            root = cfg["report"]["in"] or out_root
            run_report(root, args.out or root)
            return EXIT_OK

        run_dir = out_root / args.command
        run_dir.mkdir(parents=True, exist_ok=True)
        manifest = RunManifest(args.command, int(cfg["seed"]), int(cfg["stream"]), cfg, str(run_dir))
        logger.info("%s: seed %d:%d -> %s", args.command, cfg["seed"], cfg["stream"], run_dir)
        RUNNERS[args.command](cfg, manifest, cfg["threads"])
        manifest.finish("ok")
        return EXIT_OK
    except DomainError as e:
        print(f"error: {e}", file=sys.stderr)
        if manifest is not None:
            manifest.warn(str(e))
            manifest.finish("refused" if isinstance(e, RefusalError) else "invalid")
        return EXIT_INVALID
    except NumericalError as e:
        print(f"error: {e}", file=sys.stderr)
        if e.diagnostics:
            print(f"diagnostics: {e.diagnostics}", file=sys.stderr)
        if manifest is not None:
            manifest.warn(str(e))
            manifest.finish("numerical_failure")
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
