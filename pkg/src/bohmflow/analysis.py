"""Ensemble statistics that confront the asymptotic claims with data.

Everything here consumes immutable trajectory ensembles, frames, and the
outgoing asymptote, and reduces them to per-claim pass/fail records with the
fitted constants attached.  The finite-time stand-ins are explicit: the
asymptotic velocity is Q(T_final)/T_final with a Cauchy residual as quality
certificate, the bound/scattering dichotomy carries an Undecided class, and
distribution tests use the Kolmogorov-Smirnov distance in one dimension and
sliced 1-Wasserstein in higher dimension.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field, asdict

import numpy as np
from scipy import ndimage

from . import field as fld
from .asymptotics import OutgoingAsymptote
from .trajectories import COMPLETED, Trajectory, TrajectoryEnsemble

BOUND = "Bound"
SCATTERING = "Scattering"
UNDECIDED = "Undecided"

KS_COEFF_1PCT = 1.63  # sqrt(-ln(0.005)/2), the 1% two-sided critical coefficient


@dataclass(frozen=True)
class SlowBall:
    """Sublinear confinement radius R(t) = a T (t/T)^(1/(1+gamma))."""

    a: float
    t_onset: float
    gamma: float

    def __post_init__(self):
        if self.a <= 0 or self.t_onset <= 0:
            raise ValueError("slow ball needs a > 0 and t_onset > 0")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")

    def radius(self, t):
        return self.a * self.t_onset * (np.asarray(t) / self.t_onset) ** (
            1.0 / (1.0 + self.gamma)
        )

    def radius_rate(self, t):
        return self.radius(t) / ((1.0 + self.gamma) * np.asarray(t))


@dataclass(frozen=True)
class GoodSetParams:
    delta1: float
    delta2: float
    a: float
    b: float

    def __post_init__(self):
        if not (0 < self.a < self.b):
            raise ValueError("need 0 < a < b")
        if self.delta1 <= 0 or self.delta2 <= 0:
            raise ValueError("thresholds must be positive")


def asymptotic_velocity(traj: Trajectory, tail_fraction: float = 0.2):
    """Finite-time velocity estimate Q(T)/T and its Cauchy residual.

    The residual is the largest deviation of Q(t)/t from the estimate over
    the trailing tail_fraction of the samples; small residuals certify that
    the limit has effectively set in.
    """
    if traj.status != COMPLETED:
        raise ValueError(f"asymptotic velocity undefined for status {traj.status!r}")
    if not 0 < tail_fraction < 1:
        raise ValueError("tail_fraction must be in (0, 1)")
    t_final = traj.times[-1]
    if t_final <= 0:
        raise ValueError("trajectory must extend past t = 0")
    v_inf = traj.positions[-1] / t_final
    tail = (traj.times >= (1.0 - tail_fraction) * t_final) & (traj.times > 0)
    ratios = traj.positions[tail] / traj.times[tail, None]
    residual = float(np.max(np.linalg.norm(ratios - v_inf, axis=1)))
    return v_inf, residual


def classify(traj: Trajectory, slow_ball: SlowBall, speed_floor: float) -> str:
    """Bound if confined by the slow ball, Scattering if ballistic, else Undecided."""
    mask = traj.times >= slow_ball.t_onset
    if not np.any(mask):
        raise ValueError("trajectory samples do not reach the onset time")
    t = traj.times[mask]
    r = np.linalg.norm(traj.positions[mask], axis=1)
    if np.all(r <= slow_ball.radius(t)):
        return BOUND
    if np.all(r > speed_floor * t):
        return SCATTERING
    return UNDECIDED


@dataclass
class LabeledEnsemble:
    """Per-trajectory labels and velocity estimates for completed members."""

    indices: np.ndarray
    labels: np.ndarray
    v_inf: np.ndarray
    cauchy_residuals: np.ndarray
    slow_ball: SlowBall
    speed_floor: float

    def of_label(self, label):
        return self.v_inf[self.labels == label]

    @property
    def fractions(self) -> dict:
        n = max(len(self.labels), 1)
        return {
            lab: float(np.sum(self.labels == lab)) / n
            for lab in (BOUND, SCATTERING, UNDECIDED)
        }


def label_ensemble(
    ensemble: TrajectoryEnsemble,
    slow_ball: SlowBall,
    speed_floor: float,
    tail_fraction: float = 0.2,
) -> LabeledEnsemble:
    idx, labels, v_infs, residuals = [], [], [], []
    for i, tr in enumerate(ensemble.trajectories):
        if tr.status != COMPLETED:
            continue
        v_inf, res = asymptotic_velocity(tr, tail_fraction)
        idx.append(i)
        labels.append(classify(tr, slow_ball, speed_floor))
        v_infs.append(v_inf)
        residuals.append(res)
    return LabeledEnsemble(
        indices=np.asarray(idx, dtype=int),
        labels=np.asarray(labels, dtype=object),
        v_inf=np.asarray(v_infs, dtype=float).reshape(len(idx), -1),
        cauchy_residuals=np.asarray(residuals, dtype=float),
        slow_ball=slow_ball,
        speed_floor=speed_floor,
    )


def _lattice_law(asymptote: OutgoingAsymptote):
    """Sorted momentum lattice, |hat_out|^2 weights, and speed per node."""
    grid = asymptote.grid
    order = grid.k_order()
    hat = asymptote.psi_out_hat
    for axis in range(grid.dim):
        hat = np.take(hat, order, axis=axis)
    weights = np.abs(hat) ** 2 * grid.k_cell_volume
    k_axis = grid.k_axis_sorted()
    meshes = np.meshgrid(*([k_axis] * grid.dim), indexing="ij", sparse=True)
    speed2 = np.zeros(grid.shape)
    for km in meshes:
        speed2 = speed2 + km**2
    return k_axis, weights, np.sqrt(speed2)


def ks_distance(samples, lattice, weights) -> float:
    """One-sample KS distance against a density on a sorted 1-D lattice.

    The weights are cell masses of a piecewise-constant density on
    node-centered cells, so the exact model CDF is piecewise linear with
    knots at the cell edges; putting the knots at the cell centers would
    shift the whole CDF by half a cell, which is visible on coarse lattices.
    """
    samples = np.sort(np.asarray(samples, dtype=float))
    n = samples.size
    if n == 0:
        raise ValueError("no samples for KS test")
    total = weights.sum()
    if total <= 0:
        raise ValueError("model law has no mass")
    dk = lattice[1] - lattice[0]
    edges = np.concatenate([[lattice[0] - 0.5 * dk], lattice + 0.5 * dk])
    cdf_values = np.concatenate([[0.0], np.cumsum(weights) / total])
    model = np.interp(samples, edges, cdf_values, left=0.0, right=1.0)
    upper = np.max(np.arange(1, n + 1) / n - model)
    lower = np.max(model - np.arange(0, n) / n)
    return float(max(upper, lower))


def wasserstein_1d(a, b) -> float:
    """Exact W1 between two equal-size empirical point sets."""
    a, b = np.sort(np.asarray(a)), np.sort(np.asarray(b))
    if a.size != b.size:
        raise ValueError("sliced W1 expects equal sample counts")
    return float(np.mean(np.abs(a - b)))


def _sample_lattice_law(rng, weights_flat, grid, count):
    idx = rng.choice(weights_flat.size, size=count, p=weights_flat / weights_flat.sum())
    multi = np.unravel_index(idx, grid.shape)
    k_axis = grid.k_axis_sorted()
    pts = np.stack([k_axis[m] for m in multi], axis=-1)
    return pts + rng.uniform(-0.5, 0.5, size=pts.shape) * grid.dk


@dataclass
class VelocityLawReport:
    ks_per_component: list
    sliced_w1: float
    sliced_w1_baseline: float
    bound_fraction: float
    pp_weight: float
    undecided_fraction: float
    n_scattering: int
    ks_threshold: float

    @property
    def weight_gap(self) -> float:
        return abs(self.bound_fraction - self.pp_weight)


def velocity_law_test(
    labeled: LabeledEnsemble,
    asymptote: OutgoingAsymptote,
    pp_weight: float,
    speed_window=None,
    seed: int = 2024,
    n_directions: int = 24,
) -> VelocityLawReport:
    """Compare scattering velocity estimates with the outgoing momentum law.

    Both sides are conditioned on the same speed window (defaults to the
    classification floor), so mass that the classification excludes does not
    distort the comparison.
    """
    grid = asymptote.grid
    k_axis, weights, speed = _lattice_law(asymptote)
    lo = labeled.speed_floor if speed_window is None else speed_window[0]
    hi = np.inf if speed_window is None else speed_window[1]
    window = (speed > lo) & (speed < hi)
    w = np.where(window, weights, 0.0)

    samples = labeled.of_label(SCATTERING)
    n_s = samples.shape[0]
    fractions = labeled.fractions
    ks_threshold = KS_COEFF_1PCT / np.sqrt(max(n_s, 1))

    ks_list = []
    if n_s:
        for axis in range(grid.dim):
            other = tuple(i for i in range(grid.dim) if i != axis)
            marg = w.sum(axis=other) if other else w
            ks_list.append(ks_distance(samples[:, axis], k_axis, marg))

    sliced = baseline = float("nan")
    if grid.dim >= 2 and n_s:
        rng = np.random.default_rng(seed)
        model_a = _sample_lattice_law(rng, w.ravel(), grid, n_s)
        model_b = _sample_lattice_law(rng, w.ravel(), grid, n_s)
        dirs = rng.standard_normal((n_directions, grid.dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        sliced = float(np.mean([
            wasserstein_1d(samples @ u, model_a @ u) for u in dirs
        ]))
        baseline = float(np.mean([
            wasserstein_1d(model_b @ u, model_a @ u) for u in dirs
        ]))

    return VelocityLawReport(
        ks_per_component=ks_list,
        sliced_w1=sliced,
        sliced_w1_baseline=baseline,
        bound_fraction=fractions[BOUND],
        pp_weight=pp_weight,
        undecided_fraction=fractions[UNDECIDED],
        n_scattering=n_s,
        ks_threshold=float(ks_threshold),
    )


@dataclass
class DecayFitReport:
    beta_hat: float
    sup_scaled_errors: np.ndarray
    finite_fraction: float
    fit_times: np.ndarray
    median_errors: np.ndarray


def decay_fit(
    ensemble: TrajectoryEnsemble,
    labeled: LabeledEnsemble,
    t_min: float,
    beta_reference: float = 0.5,
) -> DecayFitReport:
    """Velocity-convergence statistics on scattering trajectories.

    Per trajectory: sup over t >= t_min of t^beta_reference * |v(Q_t,t) - v_inf|.
    Pooled: log-log slope of the ensemble-median error against time.
    """
    sups, rows, used_times = [], [], None
    for pos, i in enumerate(labeled.indices):
        if labeled.labels[pos] != SCATTERING:
            continue
        tr = ensemble.trajectories[i]
        mask = tr.times >= t_min
        if not np.any(mask):
            continue
        t = tr.times[mask]
        err = np.linalg.norm(tr.velocities[mask] - labeled.v_inf[pos], axis=1)
        sups.append(float(np.max(t**beta_reference * err)))
        rows.append(err)
        used_times = t
    if not rows:
        raise ValueError("no scattering trajectories reach the fit window")
    errors = np.asarray(rows)
    sups = np.asarray(sups)
    median = np.median(errors, axis=0)
    keep = median > 0
    if keep.sum() >= 2:
        slope = np.polyfit(np.log(used_times[keep]), np.log(median[keep]), 1)[0]
        beta_hat = float(-slope)
    else:
        beta_hat = float("inf")
    finite = float(np.mean(np.isfinite(sups)))
    return DecayFitReport(
        beta_hat=beta_hat,
        sup_scaled_errors=sups,
        finite_fraction=finite,
        fit_times=used_times,
        median_errors=median,
    )


def straightness_report(traj: Trajectory, t_onset: float, window: float) -> float:
    """Largest deviation from the straight path over all sampled windows.

    g(T', t) = Q(T') + v_inf (t - T') with the trajectory's own velocity
    estimate; the supremum runs over window starts T' >= t_onset and sample
    times t in [T', T' + window].
    """
    v_inf, _ = asymptotic_velocity(traj)
    mask = traj.times >= t_onset
    if not np.any(mask):
        raise ValueError("no samples at or after the onset time")
    t = traj.times[mask]
    q = traj.positions[mask]
    dt = t[None, :] - t[:, None]
    in_window = (dt >= 0) & (dt <= window)
    dev = np.linalg.norm(
        q[None, :, :] - q[:, None, :] - dt[:, :, None] * v_inf[None, None, :],
        axis=2,
    )
    return float(np.max(np.where(in_window, dev, 0.0)))


@dataclass
class GoodSet:
    """Momentum-space acceptance set and its delta2-eroded inner core."""

    grid_dim: int
    k_axis: np.ndarray
    outer_mask: np.ndarray
    inner_mask: np.ndarray
    outer_measure: float
    inner_measure: float
    params: GoodSetParams

    def contains(self, points, inner: bool = False) -> np.ndarray:
        mask = self.inner_mask if inner else self.outer_mask
        points = np.atleast_2d(np.asarray(points, dtype=float))
        dk = self.k_axis[1] - self.k_axis[0]
        idx = np.rint((points - self.k_axis[0]) / dk).astype(int)
        ok = np.all((idx >= 0) & (idx < self.k_axis.size), axis=1)
        out = np.zeros(points.shape[0], dtype=bool)
        if np.any(ok):
            out[ok] = mask[tuple(idx[ok].T)]
        return out


def good_set(asymptote: OutgoingAsymptote, params: GoodSetParams) -> GoodSet:
    """Acceptance region |hat_out| > delta1 within the speed annulus (a, b)."""
    grid = asymptote.grid
    k_axis, weights, speed = _lattice_law(asymptote)
    order = grid.k_order()
    hat = asymptote.psi_out_hat
    for axis in range(grid.dim):
        hat = np.take(hat, order, axis=axis)
    outer = (np.abs(hat) > params.delta1) & (speed > params.a) & (speed < params.b)

    radius = int(np.floor(params.delta2 / grid.dk + 1e-9))
    if radius < 1:
        inner = outer.copy()
    else:
        span = np.arange(-radius, radius + 1)
        offsets = np.meshgrid(*([span] * grid.dim), indexing="ij")
        ball = sum(o**2 for o in offsets) <= (params.delta2 / grid.dk + 1e-9) ** 2
        inner = ndimage.binary_erosion(outer, structure=ball, border_value=0)

    return GoodSet(
        grid_dim=grid.dim,
        k_axis=k_axis,
        outer_mask=outer,
        inner_mask=inner,
        outer_measure=float(weights[outer].sum()),
        inner_measure=float(weights[inner].sum()),
        params=params,
    )


def default_good_set_params(asymptote: OutgoingAsymptote) -> GoodSetParams:
    """delta1 at 5% of the peak, delta2 one lattice spacing, speed window
    from the 10th to the 99.9th percentile of the outgoing law."""
    _, weights, speed = _lattice_law(asymptote)
    hat_max = float(np.sqrt(weights.max() / asymptote.grid.k_cell_volume))
    flat_w = weights.ravel()
    flat_s = speed.ravel()
    order = np.argsort(flat_s)
    cum = np.cumsum(flat_w[order])
    cum /= cum[-1]
    a = float(flat_s[order][np.searchsorted(cum, 0.10)])
    b = float(flat_s[order][np.searchsorted(cum, 0.999)])
    return GoodSetParams(
        delta1=0.05 * hat_max,
        delta2=asymptote.grid.dk,
        a=a,
        b=max(b, a * 1.5),
    )


def good_set_stability(
    ensemble: TrajectoryEnsemble,
    labeled: LabeledEnsemble,
    gset: GoodSet,
    t_onset: float,
) -> dict:
    """First-exit check: members entering the inner set stay in the outer set."""
    n_in = n_violate = 0
    for pos, i in enumerate(labeled.indices):
        tr = ensemble.trajectories[i]
        mask = (tr.times >= t_onset) & (tr.times > 0)
        if not np.any(mask):
            continue
        t = tr.times[mask]
        ratios = tr.positions[mask] / t[:, None]
        if not gset.contains(ratios[0], inner=True)[0]:
            continue
        n_in += 1
        if not np.all(gset.contains(ratios[1:], inner=False)):
            n_violate += 1
    rate = n_violate / n_in if n_in else 0.0
    return {"n_inner": n_in, "n_violations": n_violate, "violation_rate": rate}


@dataclass
class CurrentSplit:
    j_pp: np.ndarray
    j_ac: np.ndarray
    j_mixed: np.ndarray
    rho_pp: np.ndarray
    rho_ac: np.ndarray
    rho_mixed: np.ndarray
    diagnostics: dict


def current_density(
    psi_ac_t, psi_pp_t, alpha: float = 1.0, outer_fraction: float = 0.5
) -> CurrentSplit:
    """Probability current split by spectral component.

    j^m = Im(conj(pp) grad ac + conj(ac) grad pp) and the mixed density is
    2 Re(conj(pp) ac); the bound-part pieces carry the |q|^(3+2 alpha)
    weighted sups over the outer region as decay diagnostics.
    """
    grid = psi_ac_t.grid
    grad_ac = np.stack(fld.gradient(psi_ac_t), axis=-1)
    grad_pp = np.stack(fld.gradient(psi_pp_t), axis=-1)
    ac = psi_ac_t.values[..., None]
    pp = psi_pp_t.values[..., None]
    j_ac = np.imag(np.conj(ac) * grad_ac)
    j_pp = np.imag(np.conj(pp) * grad_pp)
    j_m = np.imag(np.conj(pp) * grad_ac + np.conj(ac) * grad_pp)
    rho_ac = np.abs(psi_ac_t.values) ** 2
    rho_pp = np.abs(psi_pp_t.values) ** 2
    rho_m = 2.0 * np.real(np.conj(psi_pp_t.values) * psi_ac_t.values)

    r = grid.radius()
    outer = r >= outer_fraction * grid.half_extent
    w_pp = r[outer] ** (3.0 + 2.0 * alpha)
    w_m = r[outer] ** (1.5 + alpha)
    mag = lambda j: np.linalg.norm(j, axis=-1)
    diagnostics = {
        "j_pp_weighted_sup": float(np.max(w_pp * mag(j_pp)[outer])) if outer.any() else 0.0,
        "rho_pp_weighted_sup": float(np.max(w_pp * rho_pp[outer])) if outer.any() else 0.0,
        "j_mixed_weighted_sup": float(np.max(w_m * mag(j_m)[outer])) if outer.any() else 0.0,
        "rho_mixed_weighted_sup": float(np.max(w_m * np.abs(rho_m)[outer])) if outer.any() else 0.0,
        "j_ac_sup": float(np.max(mag(j_ac))),
    }
    return CurrentSplit(
        j_pp=j_pp, j_ac=j_ac, j_mixed=j_m,
        rho_pp=rho_pp, rho_ac=rho_ac, rho_mixed=rho_m,
        diagnostics=diagnostics,
    )


def _sphere_quadrature(dim: int, n_polar: int = 16, n_azimuth: int = 32):
    """Unit directions and weights integrating over the unit sphere S^(d-1)."""
    if dim == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    if dim == 2:
        theta = 2 * np.pi * np.arange(n_azimuth) / n_azimuth
        dirs = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        return dirs, np.full(n_azimuth, 2 * np.pi / n_azimuth)
    nodes, gl_weights = np.polynomial.legendre.leggauss(n_polar)
    phi = 2 * np.pi * np.arange(n_azimuth) / n_azimuth
    ct, ph = np.meshgrid(nodes, phi, indexing="ij")
    st = np.sqrt(1 - ct**2)
    dirs = np.stack([st * np.cos(ph), st * np.sin(ph), ct], axis=-1).reshape(-1, 3)
    weights = np.repeat(gl_weights, n_azimuth) * (2 * np.pi / n_azimuth)
    return dirs, weights


def _interp_field_at(values, grid, points):
    coords = ((points + grid.half_extent) / grid.dx).T
    return ndimage.map_coordinates(
        values, coords, order=3, mode="grid-wrap", output=np.complex128
    )


@dataclass
class CrossingFluxReport:
    p_gamma: float
    parts: dict
    times: np.ndarray
    integrand: np.ndarray
    slow_ball: SlowBall


def crossing_flux(
    frames,
    decomposition,
    slow_ball: SlowBall,
    n_polar: int = 16,
    n_azimuth: int = 32,
    frame_step: int = 1,
) -> CrossingFluxReport:
    """Expected crossings of the moving slow-ball boundary from the current.

    Integrates |j . e_r - rho dR/dt| R^(d-1) over the sphere at each retained
    frame time at or past the onset, then a trapezoid rule in time.  The tail
    beyond the last frame is dropped; with the reported integrand decaying,
    the truncation only lowers the bound.
    """
    from .spectral import pp_at_time

    grid = frames.grid
    dirs, sphere_w = _sphere_quadrature(grid.dim, n_polar, n_azimuth)
    sel = [
        (t, f)
        for t, f in zip(frames.times, frames.frames)
        if t >= slow_ball.t_onset
    ][::frame_step]
    if len(sel) < 2:
        raise ValueError("need at least two frames past the onset time")

    times, totals = [], []
    parts_acc = {"pp": [], "ac": [], "mixed": []}
    for t, frame in sel:
        radius = float(slow_ball.radius(t))
        rate = float(slow_ball.radius_rate(t))
        points = radius * dirs
        pp = pp_at_time(decomposition, t)
        ac_vals = frame.values - pp.values
        k = grid.k_axis()
        hat_ac = np.fft.fftn(ac_vals)
        hat_pp = np.fft.fftn(pp.values)
        psi_parts = {"pp": pp.values, "ac": ac_vals}
        grads = {}
        for name, hat in (("pp", hat_pp), ("ac", hat_ac)):
            comp = []
            for axis in range(grid.dim):
                shape = [1] * grid.dim
                shape[axis] = grid.points
                comp.append(np.fft.ifftn(1j * k.reshape(shape) * hat))
            grads[name] = comp

        vals_at = {
            name: _interp_field_at(v, grid, points) for name, v in psi_parts.items()
        }
        grads_at = {
            name: np.stack(
                [_interp_field_at(c, grid, points) for c in comps], axis=-1
            )
            for name, comps in grads.items()
        }
        radial = lambda vec: np.sum(vec * dirs, axis=-1)
        flux = {}
        flux["pp"] = np.abs(
            radial(np.imag(np.conj(vals_at["pp"])[:, None] * grads_at["pp"]))
            - np.abs(vals_at["pp"]) ** 2 * rate
        )
        flux["ac"] = np.abs(
            radial(np.imag(np.conj(vals_at["ac"])[:, None] * grads_at["ac"]))
            - np.abs(vals_at["ac"]) ** 2 * rate
        )
        j_m = np.imag(
            np.conj(vals_at["pp"])[:, None] * grads_at["ac"]
            + np.conj(vals_at["ac"])[:, None] * grads_at["pp"]
        )
        m_density = 2.0 * np.real(np.conj(vals_at["pp"]) * vals_at["ac"])
        flux["mixed"] = np.abs(radial(j_m) - m_density * rate)

        psi_full = vals_at["pp"] + vals_at["ac"]
        grad_full = grads_at["pp"] + grads_at["ac"]
        total = np.abs(
            radial(np.imag(np.conj(psi_full)[:, None] * grad_full))
            - np.abs(psi_full) ** 2 * rate
        )

        geom = radius ** (grid.dim - 1)
        times.append(t)
        totals.append(float(np.sum(total * sphere_w) * geom))
        for name in parts_acc:
            parts_acc[name].append(float(np.sum(flux[name] * sphere_w) * geom))

    times = np.asarray(times)
    totals = np.asarray(totals)
    return CrossingFluxReport(
        p_gamma=float(np.trapezoid(totals, times)),
        parts={k: float(np.trapezoid(np.asarray(v), times)) for k, v in parts_acc.items()},
        times=times,
        integrand=totals,
        slow_ball=slow_ball,
    )


def slow_ball_escape(
    ensemble: TrajectoryEnsemble, slow_ball: SlowBall
) -> dict:
    """Fraction of members inside the ball at onset that later leave it."""
    t_onset = slow_ball.t_onset
    n_bound_at_onset = n_escaped = 0
    for tr in ensemble.trajectories:
        if tr.status != COMPLETED:
            continue
        mask = tr.times >= t_onset
        if not np.any(mask):
            continue
        t = tr.times[mask]
        r = np.linalg.norm(tr.positions[mask], axis=1)
        if r[0] > slow_ball.a * t_onset:
            continue
        n_bound_at_onset += 1
        if np.any(r > slow_ball.radius(t)):
            n_escaped += 1
    p = n_escaped / n_bound_at_onset if n_bound_at_onset else 0.0
    margin = (
        3.0 * np.sqrt(p * (1.0 - p) / n_bound_at_onset) if n_bound_at_onset else 0.0
    )
    return {
        "n_bound_at_onset": n_bound_at_onset,
        "n_escaped": n_escaped,
        "escape_fraction": p,
        "binomial_margin": float(margin),
    }


@dataclass
class EquivarianceReport:
    t: float
    distance: float
    baseline: float
    n_samples: int

    @property
    def ratio(self) -> float:
        return self.distance / self.baseline if self.baseline > 0 else float("inf")


def equivariance_test(
    ensemble: TrajectoryEnsemble,
    frames,
    t: float,
    seed: int = 77,
    n_baseline_pairs: int = 8,
    n_directions: int = 24,
) -> EquivarianceReport:
    """W1 distance between ensemble positions at t and the |psi_t|^2 law.

    The baseline is the same statistic between two fresh same-size samples of
    |psi_t|^2, averaged over a few pairs to stabilize it.
    """
    frame = frames.frame_at(t)
    sample_list = []
    for tr in ensemble.trajectories:
        if tr.status != COMPLETED:
            continue
        j = int(np.argmin(np.abs(tr.times - t)))
        if abs(tr.times[j] - t) > 1e-9 * max(1.0, abs(t)):
            continue
        sample_list.append(tr.positions[j])
    if not sample_list:
        raise ValueError(f"no ensemble samples at t={t}")
    samples = np.asarray(sample_list)
    n = samples.shape[0]
    rng = np.random.default_rng(seed)
    dim = frame.grid.dim

    if dim == 1:
        dist_fn = lambda a, b: wasserstein_1d(a[:, 0], b[:, 0])
    else:
        dirs = rng.standard_normal((n_directions, dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        dist_fn = lambda a, b: float(
            np.mean([wasserstein_1d(a @ u, b @ u) for u in dirs])
        )

    model = fld.sample_density(frame, n, rng)
    distance = dist_fn(samples, model)
    baseline_vals = []
    for _ in range(n_baseline_pairs):
        s1 = fld.sample_density(frame, n, rng)
        s2 = fld.sample_density(frame, n, rng)
        baseline_vals.append(dist_fn(s1, s2))
    return EquivarianceReport(
        t=t,
        distance=distance,
        baseline=float(np.mean(baseline_vals)),
        n_samples=n,
    )


@dataclass
class ClaimResult:
    claim_id: str
    passed: bool
    statistics: dict
    thresholds: dict
    note: str = ""


@dataclass
class VerificationReport:
    claims: list
    metadata: dict = dc_field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.claims)

    def claim(self, claim_id: str) -> ClaimResult:
        for c in self.claims:
            if c.claim_id == claim_id:
                return c
        raise KeyError(claim_id)

    def to_json(self, path) -> None:
        payload = {
            "metadata": self.metadata,
            "passed": self.passed,
            "claims": [asdict(c) for c in self.claims],
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, default=float)

    @classmethod
    def from_json(cls, path) -> "VerificationReport":
        with open(path) as fh:
            payload = json.load(fh)
        claims = [ClaimResult(**c) for c in payload["claims"]]
        return cls(claims=claims, metadata=payload.get("metadata", {}))

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("claim_id,passed,statistic,value,threshold\n")
            for c in self.claims:
                for key, value in c.statistics.items():
                    thr = c.thresholds.get(key, "")
                    fh.write(f"{c.claim_id},{int(c.passed)},{key},{value},{thr}\n")
