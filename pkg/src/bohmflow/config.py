"""Experiment configuration: TOML schema, validation, initial-state building."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field as dc_field

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import field as fld
from . import spectral
from .field import Grid, WaveFunction, make_grid
from .potentials import Potential, from_spec

SCHEMA_VERSION = 1

ALL_CLAIMS = (
    "thm3.1.ii",
    "thm3.1.iii",
    "cor3.3",
    "thm3.6.weights",
    "thm3.6.ii",
    "lem4.3.decay",
    "sec4.3.crossing",
    "eq4.equivariance",
    "goodset.stability",
    "wop.isometry",
)


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    name: str
    grid: dict
    potential: dict
    state: dict
    time: dict
    ensemble: dict
    analysis: dict
    output: dict

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if raw.get("schema") != SCHEMA_VERSION:
            raise ConfigError(
                f"config schema must be {SCHEMA_VERSION}, got {raw.get('schema')!r}"
            )
        missing = [
            k for k in ("grid", "potential", "state", "time", "ensemble", "output")
            if k not in raw
        ]
        if missing:
            raise ConfigError(f"config missing sections: {missing}")
        cfg = cls(
            name=raw.get("name", "unnamed"),
            grid=dict(raw["grid"]),
            potential=dict(raw["potential"]),
            state=dict(raw["state"]),
            time=dict(raw["time"]),
            ensemble=dict(raw["ensemble"]),
            analysis=dict(raw.get("analysis", {})),
            output=dict(raw["output"]),
        )
        cfg.validate()
        return cfg

    @classmethod
    def from_toml(cls, path) -> "ExperimentConfig":
        with open(path, "rb") as fh:
            return cls.from_dict(tomllib.load(fh))

    def validate(self) -> None:
        g = self.grid
        if g.get("dim") not in (1, 2, 3):
            raise ConfigError("grid.dim must be 1, 2 or 3")
        if g.get("points", 0) % 2 or g.get("points", 0) < 16:
            raise ConfigError("grid.points must be even and >= 16")
        if g.get("half_extent", 0) <= 0:
            raise ConfigError("grid.half_extent must be positive")

        t = self.time
        for key in ("t_final", "dt", "frame_stride", "t_asym"):
            if key not in t:
                raise ConfigError(f"time.{key} is required")
        if t["t_final"] <= 0 or t["dt"] <= 0:
            raise ConfigError("time.t_final and time.dt must be positive")
        steps = t["t_final"] / t["dt"]
        if abs(steps - round(steps)) > 1e-9:
            raise ConfigError("time.t_final must be an integer multiple of time.dt")
        if int(round(steps)) % int(t["frame_stride"]):
            raise ConfigError("step count must be divisible by time.frame_stride")

        e = self.ensemble
        if e.get("count", -1) < 0:
            raise ConfigError("ensemble.count must be nonnegative")
        if "seed" not in e:
            raise ConfigError("ensemble.seed is required")
        if e.get("interpolation", "cubic") not in ("cubic", "spectral"):
            raise ConfigError("ensemble.interpolation must be cubic or spectral")

        a = self.analysis
        gamma = a.get("gamma", 0.5)
        alpha = a.get("alpha", 1.0)
        if not 0 < gamma < 2 * alpha:
            raise ConfigError("analysis.gamma must satisfy 0 < gamma < 2*alpha")
        onset = a.get("onset_time", t["t_final"] / 4)
        if not 0 < onset < t["t_final"]:
            raise ConfigError("analysis.onset_time must lie inside (0, t_final)")
        for claim in a.get("claims", []):
            if claim not in ALL_CLAIMS:
                raise ConfigError(f"unknown claim id {claim!r}")
        if self.state.get("kind", "gaussian") not in ("gaussian", "bound_mix"):
            raise ConfigError("state.kind must be gaussian or bound_mix")
        if "directory" not in self.output:
            raise ConfigError("output.directory is required")

    # -- derived accessors -------------------------------------------------

    def make_grid(self) -> Grid:
        return make_grid(self.grid["dim"], self.grid["half_extent"], self.grid["points"])

    def make_potential(self) -> Potential:
        params = {k: v for k, v in self.potential.items() if k != "family"}
        return from_spec(self.potential["family"], params)

    @property
    def claims(self) -> tuple:
        return tuple(self.analysis.get("claims", ALL_CLAIMS))

    @property
    def boundary_threshold(self) -> float:
        return float(self.analysis.get("boundary_threshold", 1e-6))

    def output_times(self) -> np.ndarray:
        t = self.time
        n_steps = int(round(t["t_final"] / t["dt"]))
        frame_times = np.arange(0, n_steps + 1, int(t["frame_stride"])) * t["dt"]
        stride = int(self.ensemble.get("output_stride", 1))
        picked = frame_times[::stride]
        if picked[-1] != frame_times[-1]:
            picked = np.append(picked, frame_times[-1])
        return picked


def gaussian_packet(grid: Grid, sigma0: float, k0, center) -> WaveFunction:
    """Normalized Gaussian packet; |psi|^2 has per-axis standard deviation sigma0."""
    k0 = np.asarray(k0, dtype=float)
    center = np.asarray(center, dtype=float)
    meshes = grid.position_meshes()
    d = grid.dim
    q2 = np.zeros(grid.shape)
    phase = np.zeros(grid.shape)
    for axis, qm in enumerate(meshes):
        q2 = q2 + (qm - center[axis]) ** 2
        phase = phase + k0[axis] * qm
    values = (2 * np.pi * sigma0**2) ** (-d / 4.0) * np.exp(
        -q2 / (4.0 * sigma0**2) + 1j * phase
    )
    return WaveFunction(grid=grid, values=values, t=0.0, label="psi")


def build_initial_state(config: ExperimentConfig, grid: Grid, eigenpairs):
    """Initial wave function per the state section.

    gaussian: packet, optionally with every found bound component projected
    out (and renormalized) so the state is purely scattering.
    bound_mix: sqrt(w) * u_level + sqrt(1-w) * (packet orthogonalized against
    all bound levels), giving an exact bound weight w by construction.
    """
    s = config.state
    kind = s.get("kind", "gaussian")
    packet = gaussian_packet(
        grid,
        sigma0=float(s.get("sigma0", 1.0)),
        k0=s.get("k0", [0.0] * grid.dim),
        center=s.get("center", [0.0] * grid.dim),
    )
    if kind == "gaussian":
        if not s.get("project_out_bound", False) or not eigenpairs:
            return packet
        dec = spectral.split(packet, eigenpairs)
        values = dec.psi_ac0.values / np.sqrt(dec.ac_weight)
        return WaveFunction(grid=grid, values=values, t=0.0, label="psi")

    if not eigenpairs:
        raise ConfigError("bound_mix state needs a potential with bound levels")
    level = int(s.get("bound_level", 0))
    if level >= len(eigenpairs):
        raise ConfigError(
            f"bound_level {level} not available ({len(eigenpairs)} levels found)"
        )
    weight = float(s.get("bound_weight", 0.5))
    if not 0 < weight < 1:
        raise ConfigError("bound_weight must lie in (0, 1)")
    u = eigenpairs[level].state
    dec = spectral.split(packet, eigenpairs)
    ortho = dec.psi_ac0.values / np.sqrt(dec.ac_weight)
    values = np.sqrt(weight) * u.values + np.sqrt(1.0 - weight) * ortho
    return WaveFunction(grid=grid, values=values, t=0.0, label="psi")
