"""Guidance-field evaluation and trajectory ensembles over stored frames.

The velocity field v = Im(grad psi / psi) is rebuilt from retained frames:
psi and its spectral gradient are interpolated with cubic B-splines in space
(or evaluated exactly from the trigonometric interpolant in 1-D), and with a
cubic Hermite rule in time whose slopes come from the equation of motion,
d psi/dt = -i H psi.  Trajectories advance with an embedded Dormand-Prince
5(4) pair; a batch shares one adaptive step so ensembles vectorize, and
chunking is fixed so results do not depend on thread count.

Near-node policy: if any batch member sees |psi| at or below the node
threshold during a stage, the step is retried at smaller h; at the floor the
offending members are frozen with status "node_encounter".  Members reaching
the outer 5% shell of the box freeze as "left_box".  Frozen members keep the
samples recorded up to the freeze and are excluded from statistics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import field as fld
from .field import Grid, WaveFunction
from .propagator import EvolutionFrames

COMPLETED = "completed"
NODE_ENCOUNTER = "node_encounter"
LEFT_BOX = "left_box"

LEFT_BOX_FRACTION = 0.95
DEFAULT_RTOL = 1e-8
DEFAULT_ATOL = 1e-10
CHUNK_SIZE = 64

# Dormand-Prince 5(4) tableau; stage 7 is the FSAL evaluation at the
# candidate point and only enters the error estimate.
_DP_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0)
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
)
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)
_DP_ERR = _DP_B5 - _DP_B4


class NodeProximityError(RuntimeError):
    """Raised when the field magnitude at the query point is below threshold."""


@dataclass
class Trajectory:
    q0: np.ndarray
    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    status: str
    steps_accepted: int = 0
    steps_rejected: int = 0

    @property
    def final_time(self) -> float:
        return float(self.times[-1])


@dataclass
class TrajectoryEnsemble:
    trajectories: list
    seed: int
    output_times: np.ndarray

    @property
    def status_counts(self) -> dict:
        counts = {COMPLETED: 0, NODE_ENCOUNTER: 0, LEFT_BOX: 0}
        for tr in self.trajectories:
            counts[tr.status] += 1
        return counts

    def completed(self) -> list:
        return [tr for tr in self.trajectories if tr.status == COMPLETED]


def _hermite_weights(s: float, h: float):
    s2, s3 = s * s, s * s * s
    return (
        2 * s3 - 3 * s2 + 1.0,
        (s3 - 2 * s2 + s) * h,
        -2 * s3 + 3 * s2,
        (s3 - s2) * h,
    )


def _upsample_hat(hat, dim, factor):
    """Embed FFT coefficients into a factor-times finer lattice (band-limited
    refinement; assumes negligible Nyquist content, which the boundary
    monitor's band-limitedness requirement already implies)."""
    n = hat.shape[0]
    fine = np.zeros((factor * n,) * dim, dtype=complex)
    centered = np.fft.fftshift(hat)
    lo = (factor * n - n) // 2
    fine_shifted = np.fft.fftshift(fine)
    fine_shifted[tuple(slice(lo, lo + n) for _ in range(dim))] = centered
    return np.fft.ifftshift(fine_shifted) * factor**dim


class _FrameBundle:
    """Per-frame nodal data prepared for fast interpolation."""

    __slots__ = ("psi", "psi_dot", "grad", "grad_dot", "psi_hat", "psi_dot_hat")

    def __init__(self, frame: WaveFunction, v_fine, spectral: bool, oversample: int = 1):
        grid = frame.grid
        hat = np.fft.fftn(frame.values)
        if spectral:
            h_psi = np.fft.ifftn(0.5 * grid.k_squared() * hat) + v_fine * frame.values
            self.psi_hat = hat
            self.psi_dot_hat = np.fft.fftn(-1j * h_psi)
            return
        if oversample > 1:
            hat = _upsample_hat(hat, grid.dim, oversample)
        n_fine = hat.shape[0]
        # the fine lattice spans the same box, so the frequency step stays pi/L
        m = np.fft.fftfreq(n_fine, d=1.0 / n_fine)
        m[n_fine // 2] = n_fine // 2
        k = grid.dk * m
        k2 = np.zeros(hat.shape)
        for axis in range(grid.dim):
            shape = [1] * grid.dim
            shape[axis] = n_fine
            k2 = k2 + (k.reshape(shape)) ** 2
        values = np.fft.ifftn(hat)
        psi_dot = -1j * (np.fft.ifftn(0.5 * k2 * hat) + v_fine * values)
        dot_hat = np.fft.fftn(psi_dot)
        grads, grad_dots = [], []
        for axis in range(grid.dim):
            shape = [1] * grid.dim
            shape[axis] = n_fine
            ik = 1j * k.reshape(shape)
            grads.append(np.fft.ifftn(ik * hat))
            grad_dots.append(np.fft.ifftn(ik * dot_hat))
        flt = lambda a: ndimage.spline_filter(a, order=3, mode="grid-wrap", output=np.complex128)
        self.psi = flt(values)
        self.psi_dot = flt(psi_dot)
        self.grad = [flt(g) for g in grads]
        self.grad_dot = [flt(g) for g in grad_dots]


class VelocityField:
    """Space-time interpolant of the guidance data held by an evolution run."""

    def __init__(
        self,
        frames: EvolutionFrames,
        interpolation: str = "cubic",
        node_threshold_rel: float = 1e-8,
        spatial_oversample: int = 1,
    ):
        if interpolation not in ("cubic", "spectral"):
            raise ValueError(f"unknown interpolation {interpolation!r}")
        if interpolation == "spectral" and frames.grid.dim != 1:
            raise ValueError("spectral interpolation is implemented for dim 1 only")
        if spatial_oversample < 1:
            raise ValueError("spatial_oversample must be >= 1")
        self.frames = frames
        self.grid = frames.grid
        self.interpolation = interpolation
        self.oversample = 1 if interpolation == "spectral" else int(spatial_oversample)
        self.fine_dx = self.grid.dx / self.oversample
        self.times = np.asarray(frames.times)
        max_abs = max(float(np.max(np.abs(f.values))) for f in frames.frames)
        self.node_threshold = node_threshold_rel * max_abs
        if self.oversample == 1 or interpolation == "spectral":
            self._v_fine = frames.potential_values
        else:
            fine = Grid(
                dim=self.grid.dim,
                half_extent=self.grid.half_extent,
                points=self.grid.points * self.oversample,
            )
            self._v_fine = frames.potential.on_grid(fine) if frames.potential \
                else np.zeros(fine.shape)
        self._cache = {}
        self._cache_all = (self.grid.size * self.oversample**self.grid.dim) <= 200_000

    def bundle(self, idx: int, local_cache: dict = None) -> _FrameBundle:
        # small grids share one global cache (bundles are value-identical, so
        # concurrent rebuilds stay deterministic); big grids keep a rolling
        # window per integration batch
        cache = self._cache if (local_cache is None or self._cache_all) else local_cache
        if idx not in cache:
            if cache is not self._cache and len(cache) > 8:
                for stale in [k for k in cache if k < idx - 1]:
                    del cache[stale]
            cache[idx] = _FrameBundle(
                self.frames.frames[idx],
                self._v_fine,
                self.interpolation == "spectral",
                self.oversample,
            )
        return cache[idx]

    def interval_of(self, t: float) -> int:
        times = self.times
        if t < times[0] - 1e-12 or t > times[-1] + 1e-12:
            raise ValueError(f"t={t} outside frame range [{times[0]}, {times[-1]}]")
        idx = int(np.searchsorted(times, t, side="right")) - 1
        return min(max(idx, 0), len(times) - 2)

    def eval_psi_grad(self, points, t: float, local_cache: dict = None):
        """psi and grad psi at arbitrary points, Hermite-interpolated in time.

        points has shape (P, dim); returns (psi (P,), grad (P, dim)).
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        j = self.interval_of(t)
        b0 = self.bundle(j, local_cache)
        b1 = self.bundle(j + 1, local_cache)
        t0, t1 = self.times[j], self.times[j + 1]
        h = t1 - t0
        w = _hermite_weights((t - t0) / h, h)
        if self.interpolation == "spectral":
            return self._eval_spectral(points, b0, b1, w)
        return self._eval_cubic(points, b0, b1, w)

    def _eval_cubic(self, points, b0, b1, w):
        grid = self.grid
        coords = ((points + grid.half_extent) / self.fine_dx).T
        P = points.shape[0]

        def combine_then_interp(f0, fd0, f1, fd1):
            mix = w[0] * f0 + w[1] * fd0 + w[2] * f1 + w[3] * fd1
            return ndimage.map_coordinates(
                mix, coords, order=3, prefilter=False, mode="grid-wrap",
                output=np.complex128,
            )

        def interp_then_combine(f0, fd0, f1, fd1):
            vals = [
                ndimage.map_coordinates(
                    f, coords, order=3, prefilter=False, mode="grid-wrap",
                    output=np.complex128,
                )
                for f in (f0, fd0, f1, fd1)
            ]
            return w[0] * vals[0] + w[1] * vals[1] + w[2] * vals[2] + w[3] * vals[3]

        # combining coefficients first costs O(n^dim) per field, worth it only
        # when the grid is small relative to the batch
        op = combine_then_interp if grid.dim == 1 else interp_then_combine
        psi = op(b0.psi, b0.psi_dot, b1.psi, b1.psi_dot)
        grad = np.empty((P, grid.dim), dtype=complex)
        for axis in range(grid.dim):
            grad[:, axis] = op(
                b0.grad[axis], b0.grad_dot[axis], b1.grad[axis], b1.grad_dot[axis]
            )
        return psi, grad

    def _eval_spectral(self, points, b0, b1, w):
        grid = self.grid
        hat = w[0] * b0.psi_hat + w[1] * b0.psi_dot_hat + w[2] * b1.psi_hat + w[3] * b1.psi_dot_hat
        k = grid.k_axis()
        phase = np.exp(1j * np.outer(points[:, 0] + grid.half_extent, k))
        n = grid.points
        psi = phase @ hat / n
        grad = (phase @ (1j * k * hat) / n)[:, None]
        return psi, grad

    def velocity_batch(self, points, t: float, local_cache: dict = None):
        """Velocity and node-proximity mask for a batch of positions."""
        psi, grad = self.eval_psi_grad(points, t, local_cache)
        node = np.abs(psi) <= self.node_threshold
        safe = np.where(node, 1.0, psi)
        vel = np.imag(grad / safe[:, None])
        vel[node] = 0.0
        return vel, node


def velocity(vfield: VelocityField, q, t: float) -> np.ndarray:
    """Guidance velocity at one point; raises NodeProximityError at nodes."""
    q = np.atleast_1d(np.asarray(q, dtype=float))
    vel, node = vfield.velocity_batch(q[None, :], t)
    if node[0]:
        raise NodeProximityError(f"|psi| below node threshold at q={q}, t={t}")
    return vel[0]


def _integrate_batch(
    vfield: VelocityField,
    q0_batch: np.ndarray,
    t0: float,
    t_end: float,
    output_times: np.ndarray,
    rtol: float,
    atol: float,
):
    grid = vfield.grid
    P, dim = q0_batch.shape
    times = vfield.times
    if t0 < times[0] - 1e-12 or t_end > times[-1] + 1e-12 or t0 >= t_end:
        raise ValueError("integration window must lie inside the frame range")
    output_times = np.asarray(sorted(output_times))
    if output_times[0] < t0 or output_times[-1] > t_end:
        raise ValueError("output times outside integration window")

    cache: dict = {}
    y = q0_batch.astype(float).copy()
    active = np.ones(P, dtype=bool)
    status = np.array([COMPLETED] * P, dtype=object)
    n_recorded = np.zeros(P, dtype=int)
    positions = np.zeros((len(output_times), P, dim))
    velocities = np.zeros((len(output_times), P, dim))
    accepted = rejected = 0
    edge = LEFT_BOX_FRACTION * grid.half_extent

    def freeze(mask, new_status):
        for i in np.where(mask & active)[0]:
            status[i] = new_status
        active[mask & active] = False

    def record(out_idx, t):
        if not np.any(active):
            return
        vel, node = vfield.velocity_batch(y[active], t, cache)
        idx = np.where(active)[0]
        positions[out_idx, idx] = y[idx]
        velocities[out_idx, idx] = vel
        n_recorded[idx] += 1

    # steps land exactly on the requested output times; the interpolant is
    # C1 across frame edges, so steps may span intervals freely
    targets = np.unique(np.concatenate([output_times, [t_end]]))
    targets = targets[targets > t0]
    out_idx = 0
    t = t0
    if output_times[out_idx] <= t0 + 1e-14:
        record(out_idx, t0)
        out_idx += 1

    h = None
    h_floor = 1e-12 * (times[-1] - times[0])
    node_floor = 1e-6 * (times[-1] - times[0])
    k_stages = np.zeros((7, P, dim))
    fsal = None

    for target in targets:
        if target <= t + 1e-14:
            continue
        while t < target - 1e-14:
            if not np.any(active):
                t = target
                break
            if h is None:
                h = min(0.1 * (times[1] - times[0]), target - t)
            h = min(h, target - t)
            if h < h_floor:
                raise RuntimeError("step size underflow in trajectory integration")

            node_hit = np.zeros(P, dtype=bool)
            act = active
            if fsal is not None:
                k_stages[0] = fsal
            else:
                vel, node = vfield.velocity_batch(y[act], t, cache)
                k_stages[0][act] = vel
                node_hit[act] |= node
            ok = True
            for s in range(1, 6):
                ys = y[act] + h * sum(
                    a * k_stages[i][act] for i, a in enumerate(_DP_A[s])
                )
                vel, node = vfield.velocity_batch(ys, t + _DP_C[s] * h, cache)
                k_stages[s][act] = vel
                node_hit[act] |= node
                if np.any(node):
                    ok = False
                    break
            if ok:
                y5 = y.copy()
                y5[act] = y[act] + h * sum(
                    b * k_stages[i][act] for i, b in enumerate(_DP_B5[:6]) if b
                )
                vel, node = vfield.velocity_batch(y5[act], t + h, cache)
                k_stages[6][act] = vel
                node_hit[act] |= node
                ok = not np.any(node)
            if not ok:
                # node proximity: shrink toward the floor, then flag offenders
                if h > node_floor:
                    h = max(h / 4.0, 0.5 * node_floor)
                    fsal = None
                    rejected += 1
                    continue
                freeze(node_hit, NODE_ENCOUNTER)
                fsal = None
                rejected += 1
                continue

            err = h * sum(e * k_stages[i][act] for i, e in enumerate(_DP_ERR) if e)
            scale = atol + rtol * np.maximum(np.abs(y[act]), np.abs(y5[act]))
            err_norm = float(np.max(np.abs(err) / scale)) if err.size else 0.0
            if err_norm <= 1.0:
                t = t + h
                y = y5
                fsal = k_stages[6].copy()
                accepted += 1
                out = np.zeros(P, dtype=bool)
                out[act] = np.any(np.abs(y[act]) > edge, axis=1)
                if np.any(out):
                    freeze(out, LEFT_BOX)
                    fsal = None
                factor = 5.0 if err_norm == 0.0 else 0.9 * err_norm**-0.2
                h = h * min(5.0, max(0.2, factor))
            else:
                rejected += 1
                fsal = None
                h = h * max(0.2, 0.9 * err_norm**-0.2)
        while out_idx < len(output_times) and output_times[out_idx] <= t + 1e-12:
            record(out_idx, output_times[out_idx])
            out_idx += 1

    trajectories = []
    for i in range(P):
        m = n_recorded[i]
        trajectories.append(
            Trajectory(
                q0=q0_batch[i].copy(),
                times=output_times[:m].copy(),
                positions=positions[:m, i].copy(),
                velocities=velocities[:m, i].copy(),
                status=str(status[i]),
                steps_accepted=accepted,
                steps_rejected=rejected,
            )
        )
    return trajectories


def integrate(
    vfield: VelocityField,
    q0,
    t0: float,
    t_end: float,
    output_times,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
) -> Trajectory:
    """Integrate a single trajectory with dense output at the requested times."""
    q0 = np.atleast_1d(np.asarray(q0, dtype=float))[None, :]
    return _integrate_batch(vfield, q0, t0, t_end, np.asarray(output_times), rtol, atol)[0]


def run_ensemble(
    frames: EvolutionFrames,
    count: int,
    seed: int,
    output_times,
    interpolation: str = "cubic",
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
    threads: int = 1,
    chunk_size: int = CHUNK_SIZE,
    spatial_oversample: int = 1,
) -> TrajectoryEnsemble:
    """Sample initial points from |psi0|^2 and integrate them independently.

    Chunking is fixed by chunk_size, so the output is identical for any
    thread count; chunks are merged in index order.
    """
    if count == 0:
        return TrajectoryEnsemble(
            trajectories=[], seed=seed, output_times=np.asarray(output_times)
        )
    vfield = VelocityField(frames, interpolation=interpolation,
                           spatial_oversample=spatial_oversample)
    rng = np.random.default_rng(seed)
    starts = fld.sample_density(frames.frames[0], count, rng)
    output_times = np.asarray(sorted(output_times))
    t0, t_end = frames.times[0], float(output_times[-1])

    chunks = [starts[i : i + chunk_size] for i in range(0, count, chunk_size)]

    def work(chunk):
        return _integrate_batch(vfield, chunk, t0, t_end, output_times, rtol, atol)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, chunks))
    else:
        results = [work(c) for c in chunks]
    trajectories = [tr for batch in results for tr in batch]
    return TrajectoryEnsemble(
        trajectories=trajectories, seed=seed, output_times=output_times
    )


def save_ensemble_ndjson(path, ensemble: TrajectoryEnsemble) -> None:
    """One JSON object per trajectory: {id, q0, status, samples:[[t, Q.., v..]..]}."""
    with open(path, "w") as fh:
        for i, tr in enumerate(ensemble.trajectories):
            samples = [
                [float(t)] + [float(x) for x in q] + [float(x) for x in v]
                for t, q, v in zip(tr.times, tr.positions, tr.velocities)
            ]
            fh.write(
                json.dumps(
                    {
                        "id": i,
                        "q0": [float(x) for x in tr.q0],
                        "status": tr.status,
                        "samples": samples,
                    }
                )
            )
            fh.write("\n")


def load_ensemble_ndjson(path) -> TrajectoryEnsemble:
    trajectories = []
    out_times = None
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            samples = np.asarray(obj["samples"], dtype=float)
            dim = len(obj["q0"])
            if samples.size == 0:
                samples = samples.reshape(0, 1 + 2 * dim)
            times = samples[:, 0]
            trajectories.append(
                Trajectory(
                    q0=np.asarray(obj["q0"], dtype=float),
                    times=times,
                    positions=samples[:, 1 : 1 + dim],
                    velocities=samples[:, 1 + dim :],
                    status=obj["status"],
                )
            )
            if out_times is None or len(times) > len(out_times):
                out_times = times
    return TrajectoryEnsemble(
        trajectories=trajectories,
        seed=-1,
        output_times=out_times if out_times is not None else np.zeros(0),
    )


def ensemble_to_csv(path, ensemble: TrajectoryEnsemble) -> None:
    """Flat per-sample rows for plotting: id, status, t, q..., v...."""
    dim = ensemble.trajectories[0].q0.size if ensemble.trajectories else 1
    q_cols = ",".join(f"q{i}" for i in range(dim))
    v_cols = ",".join(f"v{i}" for i in range(dim))
    with open(path, "w") as fh:
        fh.write(f"id,status,t,{q_cols},{v_cols}\n")
        for i, tr in enumerate(ensemble.trajectories):
            for t, q, v in zip(tr.times, tr.positions, tr.velocities):
                row = [str(i), tr.status, repr(float(t))]
                row += [repr(float(x)) for x in q]
                row += [repr(float(x)) for x in v]
                fh.write(",".join(row) + "\n")
