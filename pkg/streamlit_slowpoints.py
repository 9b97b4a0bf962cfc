# streamlit_slowpoints.py
# streamlit run streamlit_slowpoints.py

from pathlib import Path

import pandas as pd
import streamlit as st

import plot_utils
from data_utils import default_out_dir, find_manifests, load_manifest, read_csv, read_json
from slowpoints.exponent import ExponentFit, SurvivalRecord, curve_from_fits

st.set_page_config(page_title="Slow Points Lab", page_icon="🌡️", layout="wide")
st.title("🌡️ Slow Points Lab")

with st.sidebar:
    st.header("⚙️ Run directory")
    root = Path(st.text_input("Output root", value=default_out_dir()))
    st.caption("Each experiment writes into <root>/<experiment>/ with a manifest.json.")

manifests = {}
for path in find_manifests(root):
    try:
        m = load_manifest(path)
    except Exception as e:
        st.warning(f"Skipping {path}: {e}")
        continue
    manifests[m["experiment"]] = (path.parent, m)

if not manifests:
    st.info(f"No runs found under `{root}`. Start one with `python harness.py <experiment>`.")
    st.stop()


def _header(run_dir, m):
    cols = st.columns(4)
    cols[0].metric("Status", m["status"])
    cols[1].metric("Seed", f"{m['master_seed']}:{m['stream']}")
    cols[2].metric("Outputs", len(m["outputs"]))
    cols[3].metric("Config", m["config_digest"][:10])
    for w in m.get("warnings", []):
        st.warning(w)


def _csv(run_dir, name):
    path = run_dir / name
    if not path.exists():
        return None
    return read_csv(path)[1]


# === TABS ===

tabs = st.tabs(list(manifests))
for tab, (tag, (run_dir, m)) in zip(tabs, manifests.items()):
    with tab:
        _header(run_dir, m)

        if tag == "cov":
            st.dataframe(_csv(run_dir, "covariance.csv"), use_container_width=True)

        elif tag == "localize-check":
            df = _csv(run_dir, "localization.csv")
            st.plotly_chart(plot_utils.localization_figure(df), use_container_width=True)
            st.dataframe(df, use_container_width=True)

        elif tag == "sample-h":
            checks = read_json(run_dir / "summary.json")["checks"]
            st.json(checks)
            cal = _csv(run_dir, "calibration.csv")
            st.dataframe(cal.sort_values("z", ascending=False).head(20), use_container_width=True)

        elif tag == "exponent":
            df = _csv(run_dir, "survival.csv")
            records = [SurvivalRecord(r.theta, r.ratio, int(r.grid_density), int(r.trials), int(r.hits))
                       for r in df.itertuples()]
            st.plotly_chart(plot_utils.survival_figure(records), use_container_width=True)
            curve_json = read_json(run_dir / "curve.json")
            curve = curve_from_fits([ExponentFit(**e) for e in curve_json["entries"]])
            if curve.entries:
                st.plotly_chart(plot_utils.lambda_figure(curve), use_container_width=True)
            c1, c2 = st.columns(2)
            c1.metric("θ̂c", "n/a" if curve.theta_c_hat is None else f"{curve.theta_c_hat:.4f}")
            c2.metric("Decreasing / convex", f"{curve.monotone_ok} / {curve.convex_ok}")
            st.json(curve_json.get("asymptotic", {}))

        elif tag == "simulate":
            for name, value, se, title in (
                ("linearization.csv", "l2_error", "l2_error_se", "‖E(t,0)‖₂"),
                ("truncation.csv", "l2_gap", "l2_gap_se", "‖u − ū‖₂"),
            ):
                df = _csv(run_dir, name)
                if df is not None:
                    st.plotly_chart(plot_utils.profile_figure(df, value, se, title), use_container_width=True)
            prof = read_json(run_dir / "profile.json")
            st.dataframe(pd.DataFrame(prof["profiles"]), use_container_width=True)

        elif tag == "smallball-u":
            st.dataframe(_csv(run_dir, "smallball.csv"), use_container_width=True)
            st.json({k: v for k, v in read_json(run_dir / "smallball.json").items() if k != "warnings"})

        elif tag == "slowset":
            s = read_json(run_dir / "slowset.json")
            st.caption("Exploratory: finite-window detection, box counts at grid resolution.")
            st.dataframe(pd.DataFrame(s["comparisons"]), use_container_width=True)
            st.dataframe(pd.DataFrame(s["hitting"]), use_container_width=True)
            window = _csv(run_dir, "window.csv")
            if window is not None:
                st.line_chart(window.pivot(index="t_min", columns="theta", values="mean_size"))

# ---- End ----
