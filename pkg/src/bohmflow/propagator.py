"""Time evolution: Strang-split spectral stepping and the exact free kernel.

A single split step applies exp(-i V dt/2) exp(-i H0 dt) exp(-i V dt/2); both
factors are unitary so the norm is preserved to round-off.  Runs are policed
by a boundary-mass monitor: mass reaching the outer 10% shell of the box
marks the run invalid instead of silently wrapping around, which would
corrupt every asymptotic statistic downstream.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import field as fld
from .field import Grid, WaveFunction
from .potentials import Potential, from_spec

BOUNDARY_SHELL_FRACTION = 0.9
DEFAULT_BOUNDARY_THRESHOLD = 1e-6


def _potential_values(potential, grid: Grid) -> np.ndarray:
    if isinstance(potential, Potential):
        return potential.on_grid(grid)
    return np.asarray(potential, dtype=float)


def check_step_size(grid: Grid, v_values: np.ndarray, dt: float) -> None:
    """Enforce the stability/accuracy heuristics on dt."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    vmax = float(np.max(np.abs(v_values)))
    if dt * vmax >= 0.1:
        raise ValueError(
            f"dt*max|V| = {dt * vmax:.3g} exceeds 0.1; reduce dt"
        )
    k2max = float(grid.k_squared().max())
    if dt * k2max / 2.0 >= np.pi / 4.0:
        raise ValueError(
            f"dt*k_max^2/2 = {dt * k2max / 2:.3g} exceeds pi/4; reduce dt"
        )


def step_full(psi: WaveFunction, potential, dt: float) -> WaveFunction:
    """One Strang split step under H = -Laplacian/2 + V."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    grid = psi.grid
    v = _potential_values(potential, grid)
    half_v = np.exp(-0.5j * v * dt)
    kinetic = np.exp(-0.5j * grid.k_squared() * dt)
    values = half_v * psi.values
    values = np.fft.ifftn(kinetic * np.fft.fftn(values))
    values = half_v * values
    return psi.replace(values=values, t=psi.t + dt)


def evolve_free(psi: WaveFunction, t: float) -> WaveFunction:
    """Exact free evolution by time t (any sign) in momentum space."""
    grid = psi.grid
    phase = np.exp(-0.5j * grid.k_squared() * t)
    values = np.fft.ifftn(phase * np.fft.fftn(psi.values))
    return psi.replace(values=values, t=psi.t + t)


def boundary_shell_mass(psi: WaveFunction, shell_fraction: float = BOUNDARY_SHELL_FRACTION) -> float:
    """Fraction of total mass with any |q_i| >= shell_fraction * L."""
    grid = psi.grid
    shell = np.zeros(grid.shape, dtype=bool)
    for qm in grid.position_meshes():
        shell = shell | (np.abs(qm) >= shell_fraction * grid.half_extent)
    density = np.abs(psi.values) ** 2
    total = density.sum()
    if total == 0:
        return 0.0
    return float(density[shell].sum() / total)


def energy_expectation(psi: WaveFunction, potential) -> float:
    v = _potential_values(potential, psi.grid)
    h_psi = -0.5 * fld.laplacian(psi) + v * psi.values
    return float(np.real(np.sum(np.conj(psi.values) * h_psi)) * psi.grid.cell_volume)


@dataclass
class EvolutionFrames:
    """Retained snapshots of one evolution plus its conservation log."""

    grid: Grid
    potential: Potential
    dt: float
    frame_stride: int
    times: np.ndarray
    frames: list
    boundary_mass_log: np.ndarray
    boundary_threshold: float
    valid: bool
    potential_values: np.ndarray = dc_field(default=None, repr=False)

    def __post_init__(self):
        if self.potential_values is None:
            self.potential_values = _potential_values(self.potential, self.grid)

    @property
    def t_final(self) -> float:
        return float(self.times[-1])

    def frame_at(self, t: float) -> WaveFunction:
        idx = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[idx] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"no retained frame at t={t}")
        return self.frames[idx]


def evolve(
    psi0: WaveFunction,
    potential,
    t_final: float,
    dt: float,
    frame_stride: int,
    boundary_threshold: float = DEFAULT_BOUNDARY_THRESHOLD,
) -> EvolutionFrames:
    """Propagate psi0 to t_final, retaining every frame_stride-th step.

    The step count must be an exact multiple of frame_stride so frames land
    on an exact lattice of times.  A boundary-mass breach flags the run
    invalid; it does not raise.
    """
    if t_final <= 0:
        raise ValueError(f"t_final must be positive, got {t_final}")
    if frame_stride < 1:
        raise ValueError("frame_stride must be >= 1")
    grid = psi0.grid
    v = _potential_values(potential, grid)
    check_step_size(grid, v, dt)

    n_steps = int(round(t_final / dt))
    if abs(n_steps * dt - t_final) > 1e-9 * t_final:
        raise ValueError(f"t_final={t_final} is not an integer multiple of dt={dt}")
    if n_steps % frame_stride != 0:
        raise ValueError(
            f"step count {n_steps} not divisible by frame_stride {frame_stride}"
        )

    half_v = np.exp(-0.5j * v * dt)
    kinetic = np.exp(-0.5j * grid.k_squared() * dt)

    times = [0.0]
    frames = [psi0.replace(t=0.0)]
    shell_log = [boundary_shell_mass(psi0)]

    values = psi0.values.copy()
    for step in range(1, n_steps + 1):
        values = half_v * values
        values = np.fft.ifftn(kinetic * np.fft.fftn(values))
        values = half_v * values
        if step % frame_stride == 0:
            t = step * dt
            frame = WaveFunction(grid=grid, values=values.copy(), t=t, label=psi0.label)
            times.append(t)
            frames.append(frame)
            shell_log.append(boundary_shell_mass(frame))

    shell_log = np.asarray(shell_log)
    valid = bool(np.all(shell_log <= boundary_threshold))
    pot = potential if isinstance(potential, Potential) else None
    return EvolutionFrames(
        grid=grid,
        potential=pot,
        dt=dt,
        frame_stride=frame_stride,
        times=np.asarray(times),
        frames=frames,
        boundary_mass_log=shell_log,
        boundary_threshold=boundary_threshold,
        valid=valid,
        potential_values=v,
    )


def save_frames(directory, run: EvolutionFrames) -> None:
    """Persist frames as field containers plus a JSON manifest."""
    os.makedirs(directory, exist_ok=True)
    for i, frame in enumerate(run.frames):
        fld.save_field(os.path.join(directory, f"frame_{i:06d}.bfld"), frame)
    manifest = {
        "version": 1,
        "dim": run.grid.dim,
        "points": run.grid.points,
        "half_extent": run.grid.half_extent,
        "dt": run.dt,
        "frame_stride": run.frame_stride,
        "times": run.times.tolist(),
        "boundary_mass_log": run.boundary_mass_log.tolist(),
        "boundary_threshold": run.boundary_threshold,
        "valid": run.valid,
        "potential": {
            "family": run.potential.family if run.potential else "zero",
            "params": run.potential.params if run.potential else {},
        },
    }
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)


def load_frames(directory) -> EvolutionFrames:
    manifest_path = os.path.join(directory, "manifest.json")
    if not os.path.exists(manifest_path):
        raise FileNotFoundError(f"missing frames manifest: {manifest_path}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    times = np.asarray(manifest["times"])
    frames = [
        fld.load_field(os.path.join(directory, f"frame_{i:06d}.bfld"))
        for i in range(len(times))
    ]
    potential = from_spec(manifest["potential"]["family"], manifest["potential"]["params"])
    return EvolutionFrames(
        grid=frames[0].grid,
        potential=potential,
        dt=manifest["dt"],
        frame_stride=manifest["frame_stride"],
        times=times,
        frames=frames,
        boundary_mass_log=np.asarray(manifest["boundary_mass_log"]),
        boundary_threshold=manifest["boundary_threshold"],
        valid=manifest["valid"],
    )
