# plot_utils.py

import logging

import numpy as np
import plotly.graph_objects as go
from plotly.subplots import make_subplots

logger = logging.getLogger(__name__)

LAYOUT = dict(
    template="plotly_white",
    legend=dict(orientation="h", yanchor="bottom", y=1.02, xanchor="right", x=1),
    margin=dict(l=15, r=15, t=40, b=15),
    height=520,
)


def survival_figure(records):
    """log p_hat against log R, one trace per theta, Wilson intervals as error bars."""
    fig = go.Figure()
    for theta in sorted({r.theta for r in records}):
        rows = sorted((r for r in records if r.theta == theta and r.hits > 0), key=lambda r: r.ratio)
        if not rows:
            continue
        p = np.array([r.p_hat for r in rows])
        lo = np.array([r.ci[0] for r in rows])
        hi = np.array([r.ci[1] for r in rows])
        fig.add_trace(go.Scatter(
            x=[r.ratio for r in rows], y=p, mode="lines+markers", name=f"θ={theta:g}",
            error_y=dict(type="data", symmetric=False, array=hi - p, arrayminus=p - lo),
        ))
    fig.update_layout(title="Survival probability vs ratio", **LAYOUT)
    fig.update_xaxes(type="log", title_text="R = b/a")
    fig.update_yaxes(type="log", title_text="p̂")
    return fig


def lambda_figure(curve):
    fig = go.Figure()
    fig.add_trace(go.Scatter(
        x=curve.thetas, y=curve.lambdas, mode="lines+markers", name="λ̂(θ)",
        error_y=dict(type="data", array=2.0 * curve.ses),
    ))
    fig.add_hline(y=0.5, line=dict(color="grey", dash="dash"))
    if curve.theta_c_hat is not None:
        fig.add_vline(x=curve.theta_c_hat, line=dict(color="firebrick", dash="dot"),
                      annotation_text=f"θ̂c={curve.theta_c_hat:.3f}")
    fig.update_layout(title="Boundary-crossing exponent", **LAYOUT)
    fig.update_xaxes(title_text="θ")
    fig.update_yaxes(type="log", title_text="λ̂")
    return fig


def census_figure(census, est=None, theory=None, title="Dyadic box census"):
    """log2 N_n against n with the fitted line and, if given, a reference slope."""
    levels = np.array(sorted(n for n, c in census.counts.items() if c > 0))
    counts = np.log2([census.counts[n] for n in levels])
    fig = go.Figure()
    fig.add_trace(go.Scatter(x=levels, y=counts, mode="markers", name="log₂ N_n"))
    if est is not None:
        lo, hi = est.level_range
        xs = np.arange(lo, hi + 1)
        anchor = np.log2(census.counts[lo])
        fig.add_trace(go.Scatter(x=xs, y=anchor + est.slope_raw * (xs - lo), mode="lines",
                                 name=f"fit {est.slope:.3f}"))
        if theory is not None:
            fig.add_trace(go.Scatter(x=xs, y=anchor + theory * (xs - lo), mode="lines",
                                     line=dict(dash="dash"), name=f"1 − 2λ̂ = {theory:.3f}"))
    fig.update_layout(title=title, **LAYOUT)
    fig.update_xaxes(title_text="level n")
    fig.update_yaxes(title_text="log₂ N_n")
    return fig


def profile_figure(table, value, se=None, title=""):
    """log-log profile against t with t^(1/4) and t^(1/2) guides through the last point."""
    t = table["t"].to_numpy()
    y = table[value].to_numpy()
    fig = go.Figure()
    fig.add_trace(go.Scatter(
        x=t, y=y, mode="lines+markers", name=value,
        error_y=dict(type="data", array=2.0 * table[se].to_numpy()) if se else None,
    ))
    ok = y > 0
    if ok.any():
        t_ref, y_ref = t[ok][-1], y[ok][-1]
        for power, dash in ((0.25, "dot"), (0.5, "dash")):
            fig.add_trace(go.Scatter(x=t, y=y_ref * (t / t_ref) ** power, mode="lines",
                                     line=dict(color="grey", dash=dash), name=f"t^{power:g}"))
    fig.update_layout(title=title, **LAYOUT)
    fig.update_xaxes(type="log", title_text="t")
    fig.update_yaxes(type="log", title_text=value)
    return fig


def localization_figure(table):
    fig = make_subplots(rows=1, cols=1)
    for alpha, part in table.groupby("alpha"):
        fig.add_trace(go.Scatter(x=part["t"], y=part["l2_gap"], mode="lines+markers",
                                 name=f"gap α={alpha:g}"))
        fig.add_trace(go.Scatter(x=part["t"], y=part["bound"], mode="lines",
                                 line=dict(dash="dash"), name=f"bound α={alpha:g}"))
    fig.update_layout(title="Localization gap var H − var H_α", **LAYOUT)
    fig.update_xaxes(type="log", title_text="t")
    fig.update_yaxes(type="log", title_text="gap")
    return fig


def export_svg(fig, path):
    """Static SVG through kaleido; a missing engine costs the plot, not the run."""
    try:
        fig.write_image(str(path), format="svg")
    except Exception as e:
        logger.warning("SVG export skipped for %s: %s", path, e)
        return None
    return path
