"""Builtin experiment definitions sized for desk-scale verification runs.

Box sizes follow the boundary monitor: the box must hold the fastest
momentum components (including the off-shell halo the interaction transient
generates, which carries ~1e-5 of mass out to roughly 1.5x the packet's top
speed) for the whole run.  Packets sit on the scattering center so the
finite-time velocity estimate Q(T)/T converges at second order in 1/T; the
momentum spread is kept narrow (sigma0 = 1.5) so near-zero-momentum content,
which lingers at the potential for algebraically long times, is negligible.
"""

from __future__ import annotations

from .config import ExperimentConfig

_SCENARIOS = {
    "free_gaussian_1d": {
        "schema": 1,
        "name": "free_gaussian_1d",
        "grid": {"dim": 1, "half_extent": 60.0, "points": 1024},
        "potential": {"family": "zero"},
        "state": {"kind": "gaussian", "sigma0": 1.0, "k0": [2.0], "center": [0.0]},
        "time": {"t_final": 10.0, "dt": 0.002, "frame_stride": 10, "t_asym": 8.0},
        "ensemble": {
            "count": 256,
            "seed": 20240801,
            "output_stride": 5,
            "chunk_size": 64,
            "interpolation": "spectral",
        },
        "analysis": {
            "onset_time": 3.0,
            "gamma": 0.5,
            "alpha": 1.0,
            "speed_floor": 0.35,
            "equivariance_times": [0.0, 5.0, 10.0],
            "ladder_base": 2.5,
            "claims": [
                "thm3.1.ii", "thm3.1.iii", "cor3.3", "thm3.6.weights",
                "thm3.6.ii", "lem4.3.decay", "eq4.equivariance",
                "goodset.stability", "wop.isometry",
            ],
        },
        "output": {"directory": "runs/free_gaussian_1d"},
    },
    "gaussian_well_scatter_1d": {
        "schema": 1,
        "name": "gaussian_well_scatter_1d",
        "grid": {"dim": 1, "half_extent": 370.0, "points": 9472},
        "potential": {"family": "gaussian_well", "depth": 1.0, "width": 1.0},
        "state": {
            "kind": "gaussian", "sigma0": 1.5, "k0": [2.0], "center": [0.0],
            "project_out_bound": True,
        },
        "time": {"t_final": 60.0, "dt": 7.5e-4, "frame_stride": 125, "t_asym": 48.0},
        "ensemble": {
            "count": 10000,
            "seed": 20240802,
            "output_stride": 4,
            "chunk_size": 128,
            "interpolation": "cubic",
        },
        "analysis": {
            "onset_time": 12.0,
            "gamma": 0.5,
            "alpha": 1.0,
            "speed_floor": 0.3,
            "equivariance_times": [0.0, 30.0, 60.0],
            "ladder_base": 15.0,
            "claims": [
                "thm3.1.ii", "thm3.1.iii", "cor3.3", "thm3.6.weights",
                "thm3.6.ii", "lem4.3.decay", "eq4.equivariance",
                "goodset.stability", "wop.isometry",
            ],
        },
        "output": {"directory": "runs/gaussian_well_scatter_1d"},
    },
    "poschl_teller_mixed_1d": {
        "schema": 1,
        "name": "poschl_teller_mixed_1d",
        "grid": {"dim": 1, "half_extent": 180.0, "points": 4608},
        "potential": {"family": "poschl_teller", "lam": 2},
        "state": {
            "kind": "bound_mix", "sigma0": 1.5, "k0": [2.0], "center": [-10.0],
            "bound_weight": 0.5, "bound_level": 0,
        },
        "time": {"t_final": 30.0, "dt": 7.5e-4, "frame_stride": 125, "t_asym": 24.0},
        "ensemble": {
            "count": 4096,
            "seed": 20240803,
            "output_stride": 2,
            "chunk_size": 128,
            "interpolation": "cubic",
        },
        "analysis": {
            "onset_time": 12.0,
            "gamma": 0.5,
            "alpha": 1.0,
            "speed_floor": 0.3,
            "equivariance_times": [0.0, 15.0, 30.0],
            "ladder_base": 7.5,
            "claims": [
                "thm3.6.weights", "thm3.6.ii", "sec4.3.crossing",
                "eq4.equivariance", "wop.isometry",
            ],
        },
        "output": {"directory": "runs/poschl_teller_mixed_1d"},
    },
    "gaussian_well_3d_small": {
        "schema": 1,
        "name": "gaussian_well_3d_small",
        "grid": {"dim": 3, "half_extent": 20.0, "points": 64},
        "potential": {"family": "spherical_gaussian_well", "depth": 0.2, "width": 1.0},
        "state": {
            "kind": "gaussian", "sigma0": 1.0, "k0": [1.1, 0.0, 0.0],
            "center": [0.0, 0.0, 0.0], "project_out_bound": True,
        },
        "time": {"t_final": 5.0, "dt": 0.0125, "frame_stride": 10, "t_asym": 5.0},
        "ensemble": {
            "count": 512,
            "seed": 20240804,
            "output_stride": 2,
            "chunk_size": 512,
            "interpolation": "cubic",
        },
        "analysis": {
            "onset_time": 2.0,
            "gamma": 0.5,
            "alpha": 1.0,
            "speed_floor": 0.2,
            "equivariance_times": [0.0, 2.5, 5.0],
            "ks_threshold": 0.1,
            "boundary_threshold": 1e-5,
            "claims": ["thm3.1.ii", "eq4.equivariance", "wop.isometry"],
        },
        "output": {"directory": "runs/gaussian_well_3d_small"},
    },
}


def list_scenarios() -> list:
    return sorted(_SCENARIOS)


def scenario_config(name: str) -> ExperimentConfig:
    if name not in _SCENARIOS:
        raise KeyError(f"unknown scenario {name!r}; available: {list_scenarios()}")
    return ExperimentConfig.from_dict(_SCENARIOS[name])


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return f'"{v}"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return repr(v)


def render_toml(raw: dict) -> str:
    """Serialize a flat two-level config dict to TOML text."""
    lines = []
    for key, value in raw.items():
        if not isinstance(value, dict):
            lines.append(f"{key} = {_toml_value(value)}")
    for section, body in raw.items():
        if isinstance(body, dict):
            lines.append("")
            lines.append(f"[{section}]")
            for key, value in body.items():
                lines.append(f"{key} = {_toml_value(value)}")
    return "\n".join(lines) + "\n"


def scenario_toml(name: str) -> str:
    if name not in _SCENARIOS:
        raise KeyError(f"unknown scenario {name!r}")
    return render_toml(_SCENARIOS[name])
