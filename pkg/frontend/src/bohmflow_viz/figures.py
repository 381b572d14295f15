"""The five figure kinds rendered from a bohmflow run directory.

Rendering is deterministic: fixed figure geometry, fonts and colors, Agg
backend, no randomness.  Every figure is a pure function of the files it
reads.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field as dc_field

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from . import io

KINDS = ("trajectory_fan", "v_inf_histogram", "slow_ball", "decay_loglog", "residual_decay")

LABEL_COLORS = {"Bound": "#c44e52", "Scattering": "#4c72b0", "Undecided": "#8c8c8c"}

_RC = {
    "figure.figsize": (7.0, 4.5),
    "figure.dpi": 110,
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "svg.hashsalt": "bohmflow",
}


@dataclass
class FigureSpec:
    kind: str
    run_dir: str
    output: str
    max_trajectories: int = 160
    style: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise io.SchemaError(f"unknown figure kind {self.kind!r}; known: {KINDS}")
        if not os.path.isdir(self.run_dir):
            raise io.SchemaError(f"run directory not found: {self.run_dir}")


def render(spec: FigureSpec) -> str:
    """Render the figure; returns the output path. Raises SchemaError on bad input."""
    with plt.rc_context(_RC):
        fig = plt.figure()
        try:
            _RENDERERS[spec.kind](fig, spec)
            out_dir = os.path.dirname(os.path.abspath(spec.output))
            os.makedirs(out_dir, exist_ok=True)
            fig.savefig(spec.output, metadata={"Software": "bohmflow-plot"})
        finally:
            plt.close(fig)
    return spec.output


def _labels_by_id(analysis) -> dict:
    return {row["id"]: row for row in analysis["trajectories"]}


def _slow_ball_curves(analysis, t_grid):
    ball = analysis["slow_ball"]
    radius = ball["a"] * ball["t_onset"] * (t_grid / ball["t_onset"]) ** (
        1.0 / (1.0 + ball["gamma"])
    )
    return radius, analysis["speed_floor"] * t_grid


def _trajectory_fan(fig, spec: FigureSpec):
    ens = io.read_ensemble(os.path.join(spec.run_dir, "ensemble.ndjson"))
    if len(ens) == 0:
        raise io.SchemaError("ensemble is empty; nothing to draw")
    analysis = io.read_analysis(spec.run_dir)
    labels = _labels_by_id(analysis)
    ax = fig.add_subplot(111)
    seen = set()
    for i in range(0, len(ens), max(1, len(ens) // spec.max_trajectories)):
        row = labels.get(ens.ids[i])
        label = row["label"] if row else "Undecided"
        color = LABEL_COLORS[label]
        show = label if label not in seen else None
        seen.add(label)
        ax.plot(ens.times[i], ens.positions[i][:, 0], color=color, lw=0.6,
                alpha=0.7, label=show)
    t_end = analysis["t_final"]
    ball = analysis["slow_ball"]
    t_grid = np.linspace(ball["t_onset"], t_end, 200)
    radius, floor_line = _slow_ball_curves(analysis, t_grid)
    for sign in (1.0, -1.0):
        ax.plot(t_grid, sign * radius, "k--", lw=1.2,
                label="slow-ball radius" if sign > 0 else None)
        ax.plot(t_grid, sign * floor_line, "k:", lw=1.0,
                label="ballistic floor a*t" if sign > 0 else None)
    ax.set_xlabel("t")
    ax.set_ylabel("Q(t)")
    ax.set_title("Trajectory families")
    ax.legend(loc="upper left", fontsize=8)


def _v_inf_histogram(fig, spec: FigureSpec):
    analysis = io.read_analysis(spec.run_dir)
    rows = analysis["trajectories"]
    if not rows:
        raise io.SchemaError("no classified trajectories; nothing to draw")
    scattering = np.array(
        [r["v_inf"][0] for r in rows if r["label"] == "Scattering"]
    )
    bound_frac = np.mean([r["label"] == "Bound" for r in rows])
    density = io.read_csv_columns(
        os.path.join(spec.run_dir, "asymptote", "psi_out_density.csv")
    )
    ax = fig.add_subplot(111)
    if scattering.size:
        ax.hist(scattering, bins=60, density=True, alpha=0.55, color="#4c72b0",
                label="scattering v_inf (density)")
    k = density["k"]
    rho = density["density0"]
    mass = np.trapezoid(rho, k)
    scatter_frac = max(1.0 - bound_frac, 1e-12)
    ax.plot(k, rho / mass, color="#dd8452", lw=1.6,
            label="outgoing momentum law")
    if bound_frac > 0:
        ax.axvline(0.0, color="#c44e52", lw=2.0,
                   label=f"bound mass {bound_frac:.2f} at 0")
    lo, hi = (scattering.min(), scattering.max()) if scattering.size else (k.min(), k.max())
    pad = 0.2 * (hi - lo + 1e-9)
    ax.set_xlim(lo - pad, hi + pad)
    ax.set_xlabel("v_inf")
    ax.set_ylabel("density")
    ax.set_title("Asymptotic velocity distribution")
    ax.legend(fontsize=8)


def _slow_ball(fig, spec: FigureSpec):
    ens = io.read_ensemble(os.path.join(spec.run_dir, "ensemble.ndjson"))
    if len(ens) == 0:
        raise io.SchemaError("ensemble is empty; nothing to draw")
    analysis = io.read_analysis(spec.run_dir)
    labels = _labels_by_id(analysis)
    ax = fig.add_subplot(111)
    drew = set()
    for i in range(len(ens)):
        row = labels.get(ens.ids[i])
        if row is None:
            continue
        label = row["label"]
        color = LABEL_COLORS[label]
        ax.plot(ens.times[i], np.linalg.norm(ens.positions[i], axis=1),
                color=color, lw=0.5, alpha=0.5,
                label=label if label not in drew else None)
        drew.add(label)
    ball = analysis["slow_ball"]
    t_grid = np.linspace(ball["t_onset"], analysis["t_final"], 200)
    radius, floor_line = _slow_ball_curves(analysis, t_grid)
    ax.plot(t_grid, radius, "k--", lw=1.6, label="slow-ball radius")
    ax.plot(t_grid, floor_line, "k:", lw=1.2, label="a*t")
    ax.set_xlabel("t")
    ax.set_ylabel("|Q(t)|")
    ax.set_yscale("log")
    ax.set_title("Confinement inside the slow ball")
    ax.legend(fontsize=8, loc="lower right")


def _decay_loglog(fig, spec: FigureSpec):
    curve = io.read_csv_columns(os.path.join(spec.run_dir, "decay_curve.csv"))
    t = curve["t"]
    err = curve["median_velocity_error"]
    keep = (t > 0) & (err > 0)
    if not np.any(keep):
        raise io.SchemaError("decay curve has no positive entries")
    ax = fig.add_subplot(111)
    ax.loglog(t[keep], err[keep], "o-", ms=3, color="#4c72b0",
              label="median |v - v_inf|")
    ref = err[keep][0] * (t[keep] / t[keep][0]) ** -0.5
    ax.loglog(t[keep], ref, "k--", lw=1.0, label="t^(-1/2) reference")
    ax.set_xlabel("t")
    ax.set_ylabel("velocity error")
    ax.set_title("Velocity convergence rate")
    ax.legend(fontsize=8)


def _residual_decay(fig, spec: FigureSpec):
    ladder = io.read_csv_columns(os.path.join(spec.run_dir, "residual_ladder.csv"))
    ax = fig.add_subplot(111)
    key = "sup_phi2_sharp" if "sup_phi2_sharp" in ladder else "sup_phi2_t2"
    label = "sup|phi2| * t^(1+d/2)" if key == "sup_phi2_sharp" else "sup|phi2| * t^2"
    ax.plot(ladder["t"], ladder[key], "o-", color="#4c72b0", label=label)
    ax.plot(ladder["t"], ladder["l2_ac_minus_phi1"], "s-", color="#dd8452",
            label="L2 gap to local plane wave")
    ax.set_xlabel("t")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_title("Dispersive residual decay")
    ax.legend(fontsize=8)


_RENDERERS = {
    "trajectory_fan": _trajectory_fan,
    "v_inf_histogram": _v_inf_histogram,
    "slow_ball": _slow_ball,
    "decay_loglog": _decay_loglog,
    "residual_decay": _residual_decay,
}
