# slowpoints/report.py
"""
Consolidated Markdown report over a directory of finished runs. Each run
directory holds a manifest.json plus the CSV/JSON outputs its experiment
writes; sections appear only for experiments that are present.
"""

import logging
import math
from pathlib import Path

from data_utils import find_manifests, load_manifest, read_csv, read_json
from sim_utils import DomainError

logger = logging.getLogger(__name__)

# Order of sections in the report and the artifacts each needs
SECTIONS = {
    "cov": ["covariance.csv"],
    "localize-check": ["localization.csv"],
    "sample-h": ["summary.json", "calibration.csv"],
    "exponent": ["curve.json", "survival.csv"],
    "simulate": ["profile.json"],
    "smallball-u": ["smallball.json"],
    "slowset": ["slowset.json"],
}


def _fmt(v, digits=6):
    if v is None:
        return "n/a"
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, float):
        if math.isnan(v):
            return "n/a"
        return f"{v:.{digits}g}"
    return str(v)


def md_table(rows, columns):
    if not rows:
        return "_(empty)_\n"
    head = "| " + " | ".join(columns) + " |\n"
    rule = "|" + "---|" * len(columns) + "\n"
    body = "".join("| " + " | ".join(_fmt(r.get(c)) for c in columns) + " |\n" for r in rows)
    return head + rule + body


# Sampling settings echoed next to each section, looked up in the experiment block and its nested blocks
BUDGET_KEYS = ("trials", "replicas", "n_paths", "density", "points_per_octave", "ratios", "dx", "horizon")


def _budget(block, prefix=""):
    items = []
    for key, value in block.items():
        if isinstance(value, dict):
            items += _budget(value, f"{prefix}{key}.")
        elif key in BUDGET_KEYS and value is not None:
            items.append(f"{prefix}{key} {_fmt(value)}")
    return items


def _provenance(manifest):
    block = (manifest.get("config") or {}).get(manifest["experiment"]) or {}
    budget = ", ".join(_budget(block))
    return (f"seed `{manifest['master_seed']}:{manifest['stream']}`, config `{manifest['config_digest'][:12]}`, "
            f"tool {manifest['tool_version']}, status {manifest['status']}"
            + (f"; {budget}" if budget else ""))


# --- sections ---

def _cov(run_dir, manifest):
    _, df = read_csv(run_dir / "covariance.csv")
    cols = [c for c in ("t", "s", "x", "y", "cov", "cov_quad", "rel_error") if c in df and df[c].notna().any()]
    return "## Covariance of H\n\n" + md_table(df.head(25).to_dict(orient="records"), cols)


def _localize(run_dir, manifest):
    _, df = read_csv(run_dir / "localization.csv")
    ok = bool(df["within_bound"].astype(bool).all())
    return ("## Localization\n\n"
            f"All gaps within the stretched-exponential bound: **{_fmt(ok)}**\n\n"
            + md_table(df.to_dict(orient="records"), ["t", "alpha", "var_h", "var_h_alpha", "l2_gap", "bound"]))


def _sample_h(run_dir, manifest):
    s = read_json(run_dir / "summary.json")
    rows = [{"check": k, "value": v} for k, v in s["checks"].items()]
    return "## Exact Gaussian sampler\n\n" + md_table(rows, ["check", "value"])


def _exponent(run_dir, manifest):
    curve = read_json(run_dir / "curve.json")
    out = ["## Boundary-crossing exponent\n"]
    out.append(md_table(curve["entries"], ["theta", "lambda_hat", "se", "r_squared"]))
    lo, hi = curve["theta_c_interval"]
    out.append(f"\nθ̂_c = **{_fmt(curve['theta_c_hat'])}** (2 se interval {_fmt(lo)} to {_fmt(hi)})\n")
    out.append(f"\nDecreasing within 2 se: {_fmt(curve['monotone_ok'])}; convex within 2 se: {_fmt(curve['convex_ok'])}\n")
    asym = curve.get("asymptotic") or {}
    for regime in ("large", "small"):
        r = asym.get(regime)
        if r:
            out.append(f"\n{regime}-θ regime slope {_fmt(r['slope'])} over {r['points']} points, contract met: {_fmt(r['ok'])}\n")
    for note in asym.get("notes", []) + curve.get("warnings", []) + curve.get("violations", []):
        out.append(f"\n- {note}")
    return "\n".join(out) + "\n"


def _simulate(run_dir, manifest):
    prof = read_json(run_dir / "profile.json")
    rows = [{k: p.get(k) for k in ("kind", "sigma", "replicas", "slope", "slope_points")} for p in prof["profiles"]]
    out = "## SPDE profiles\n\n" + md_table(rows, ["kind", "sigma", "replicas", "slope", "slope_points"])
    out += f"\nStability margin dt/dx² = {_fmt(prof['stability_margin'])}; max checkpoint snap {_fmt(prof['max_snap'])}\n"
    for p in prof["profiles"]:
        if p["kind"] == "truncation":
            # Both readings of the truncation exponent are listed; neither is assumed.
            out += (f"\nTruncation slope {_fmt(p.get('slope'))} against the readings 3/8 (squared-norm bound)"
                    f" and 3/4 (k-th moment normalization); the contract only asks for ≥ 0.5.\n")
    return out


def _smallball(run_dir, manifest):
    s = read_json(run_dir / "smallball.json")
    row = {k: s.get(k) for k in ("theta", "sigma", "slope", "se", "lambda_hat", "lambda_se", "z", "within_3se")}
    return "## Nonlinear small-ball cross-check\n\n" + md_table([row], list(row))


def _slowset(run_dir, manifest):
    s = read_json(run_dir / "slowset.json")
    cols = ["replica", "theta", "dimension", "dimension_se", "theory", "gap", "gap_se", "above_theta_c"]
    out = "## Slow sets (exploratory)\n\n" + md_table(s["comparisons"], cols)
    out += f"\nWindow [{_fmt(s['window'][0])}, {_fmt(s['window'][1])}], θ̂_c used: {_fmt(s.get('theta_c'))}\n"
    return out


RENDERERS = {
    "cov": _cov,
    "localize-check": _localize,
    "sample-h": _sample_h,
    "exponent": _exponent,
    "simulate": _simulate,
    "smallball-u": _smallball,
    "slowset": _slowset,
}


def build_report(root):
    """Returns (markdown, summary dict). An empty directory is an error; missing pieces are listed."""
    root = Path(root)
    paths = find_manifests(root)
    if not paths:
        raise DomainError("in", f"no manifest found under {root}")

    runs = {}
    for path in paths:
        manifest = load_manifest(path)
        if manifest["experiment"] == "report":
            continue
        # later runs of the same experiment win
        runs[manifest["experiment"]] = (path.parent, manifest)

    parts = ["# Slow points run report\n"]
    included, missing = [], []
    for tag, needs in SECTIONS.items():
        if tag not in runs:
            missing.append(f"{tag}: no run")
            continue
        run_dir, manifest = runs[tag]
        absent = [n for n in needs if not (run_dir / n).exists()]
        if absent:
            missing.append(f"{tag}: missing {', '.join(absent)}")
            continue
        parts.append(RENDERERS[tag](run_dir, manifest))
        parts.append(f"\n_Provenance: {_provenance(manifest)}_\n")
        included.append(tag)
        if manifest.get("warnings"):
            parts.append("".join(f"\n- warning: {w}" for w in manifest["warnings"]) + "\n")

    if missing:
        parts.append("## Missing artifacts\n\n" + "".join(f"- {m}\n" for m in missing))
    logger.info("report: %d sections, %d missing", len(included), len(missing))
    return "\n".join(parts), {"included": included, "missing": missing}
