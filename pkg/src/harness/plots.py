"""
Result figures for MPVIC Lab.
Renders the summary CSVs of a run directory to standalone Plotly HTML files.
"""

import logging
import os
from typing import List

import pandas as pd
import plotly.graph_objects as go

logger = logging.getLogger(__name__)

COLORS = {
    "text_primary": "#e8eaf6",
    "text_secondary": "#9fa8da",
    "grid": "#1e2a5a",
    "dx": "#42a5f5",
    "lambda": "#ffa726",
    "K_x": "#ef5350",
    "K_y": "#66bb6a",
    "K_z": "#ab47bc",
}


def get_plotly_layout(title: str = "") -> dict:
    """Consistent dark layout for every figure."""
    return {
        "template": "plotly_dark",
        "paper_bgcolor": "rgba(0,0,0,0)",
        "plot_bgcolor": "rgba(0,0,0,0)",
        "title": {"text": title, "font": {"color": COLORS["text_primary"], "size": 14}},
        "font": {"color": COLORS["text_secondary"], "size": 11},
        "xaxis": {"gridcolor": COLORS["grid"], "title": "t (s)"},
        "yaxis": {"gridcolor": COLORS["grid"]},
        "legend": {"orientation": "h", "y": -0.2},
        "margin": {"l": 50, "r": 20, "t": 40, "b": 40},
    }


def _band(fig: go.Figure, df: pd.DataFrame, key: str, name: str, color: str, yaxis: str = "y") -> None:
    fig.add_trace(go.Scatter(
        x=pd.concat([df["t"], df["t"][::-1]]),
        y=pd.concat([df[f"{key}_hi"], df[f"{key}_lo"][::-1]]),
        fill="toself", fillcolor=color, opacity=0.2, line=dict(width=0),
        hoverinfo="skip", showlegend=False, yaxis=yaxis,
    ))
    fig.add_trace(go.Scatter(
        x=df["t"], y=df[f"{key}_mean"], name=name, mode="lines",
        line=dict(color=color, width=2), yaxis=yaxis,
    ))


def timestep_figure(df: pd.DataFrame, title: str = "Deviation and stiffness") -> go.Figure:
    """‖δx‖ and mean eigenvalue of K over time, with bootstrap bands."""
    fig = go.Figure(layout=get_plotly_layout(title))
    _band(fig, df, "dx", "‖δx‖ (m)", COLORS["dx"])
    _band(fig, df, "lambda", "λ(K) (N/m)", COLORS["lambda"], yaxis="y2")
    fig.update_layout(
        height=350, hovermode="x unified",
        yaxis=dict(title="‖δx‖ (m)", gridcolor=COLORS["grid"]),
        yaxis2=dict(title="λ(K) (N/m)", overlaying="y", side="right", showgrid=False),
    )
    return fig


def stiffness_figure(df: pd.DataFrame, title: str = "Stiffness per axis") -> go.Figure:
    fig = go.Figure(layout=get_plotly_layout(title))
    for col in ("K_x", "K_y", "K_z"):
        fig.add_trace(go.Scatter(
            x=df["t"], y=df[f"{col}_mean"], name=col, mode="lines",
            line=dict(color=COLORS[col], width=2),
        ))
    fig.update_layout(height=300, hovermode="x unified", yaxis=dict(title="N/m"))
    return fig


def sweep_figure(df: pd.DataFrame, title: str = "Sweep") -> go.Figure:
    layout = get_plotly_layout(title)
    layout["xaxis"] = {"gridcolor": COLORS["grid"], "title": "α_R", "type": "log"}
    fig = go.Figure(layout=layout)
    for (task, aq), part in df.groupby(["task", "alpha_q"]):
        part = part.sort_values("alpha_r")
        fig.add_trace(go.Scatter(
            x=part["alpha_r"], y=part["mean_lambda"], name=f"{task} α_Q={aq:g}",
            mode="lines+markers", marker=dict(size=6),
        ))
    fig.update_layout(height=300, yaxis=dict(title="mean λ(K) (N/m)"))
    return fig


def render_run(run_dir: str) -> List[str]:
    """Write one HTML file per available summary CSV; returns the written paths."""
    written = []
    timestep_path = os.path.join(run_dir, "summary_timestep.csv")
    if os.path.exists(timestep_path):
        df = pd.read_csv(timestep_path)
        for name, fig in (("deviation_stiffness.html", timestep_figure(df)),
                          ("stiffness_axes.html", stiffness_figure(df))):
            path = os.path.join(run_dir, name)
            fig.write_html(path, include_plotlyjs="cdn")
            written.append(path)
    sweep_path = os.path.join(run_dir, "sweep_summary.csv")
    if os.path.exists(sweep_path):
        path = os.path.join(run_dir, "sweep.html")
        sweep_figure(pd.read_csv(sweep_path)).write_html(path, include_plotlyjs="cdn")
        written.append(path)
    if not written:
        logger.warning("no summary CSVs found in %s", run_dir)
    return written
