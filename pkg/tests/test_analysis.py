import numpy as np
import pytest

from bohmflow import analysis as ana
from bohmflow import asymptotics as asym
from bohmflow import propagator as prop
from bohmflow import spectral
from bohmflow import trajectories as trj
from bohmflow.field import WaveFunction, make_grid
from bohmflow.potentials import poschl_teller, zero_potential

import oracles


def line_trajectory(q0, v, times, dim=1):
    times = np.asarray(times, dtype=float)
    q0 = np.atleast_1d(np.asarray(q0, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    pos = q0[None, :] + times[:, None] * v[None, :]
    vel = np.broadcast_to(v, pos.shape).copy()
    return trj.Trajectory(
        q0=q0, times=times, positions=pos, velocities=vel, status=trj.COMPLETED
    )


def packet(grid, sigma0=1.0, k0=None, center=None):
    pts = np.stack(np.broadcast_arrays(*grid.position_meshes()), axis=-1)
    return WaveFunction(grid=grid, values=oracles.free_gaussian(pts, 0.0, sigma0, k0, center))


def gaussian_asymptote(grid, sigma0=1.0, k0=2.0):
    hat = oracles.free_gaussian_momentum(grid.k_axis()[:, None], sigma0, [k0])
    return asym.OutgoingAsymptote(
        grid=grid, psi_out_hat=hat, t_asym=0.0,
        convergence_log=(0.0,), converged=True, run_valid=True,
    )


class TestAsymptoticVelocity:
    def test_exact_line(self):
        tr = line_trajectory([1.5], [2.0], np.linspace(0, 20, 41))
        v_inf, residual = ana.asymptotic_velocity(tr)
        assert v_inf[0] == pytest.approx(2.0 + 1.5 / 20.0, abs=1e-12)
        long = line_trajectory([1.5], [2.0], np.linspace(0, 200, 41))
        v_long, res_long = ana.asymptotic_velocity(long)
        assert abs(v_long[0] - 2.0) < abs(v_inf[0] - 2.0)
        assert res_long < residual

    def test_free_gaussian_limit(self):
        times = np.linspace(0, 400, 201)
        x0 = 1.3
        pos = oracles.free_gaussian_trajectory(x0, times)[:, None]
        tr = trj.Trajectory(
            q0=np.array([x0]), times=times, positions=pos,
            velocities=np.zeros_like(pos), status=trj.COMPLETED,
        )
        v_inf, _ = ana.asymptotic_velocity(tr)
        assert v_inf[0] == pytest.approx(x0 / 2.0, abs=2e-3)

    def test_requires_completed(self):
        tr = line_trajectory([0.0], [1.0], np.linspace(0, 5, 6))
        tr.status = trj.NODE_ENCOUNTER
        with pytest.raises(ValueError):
            ana.asymptotic_velocity(tr)


class TestClassify:
    def test_constant_inside_ball_is_bound(self):
        ball = ana.SlowBall(a=0.3, t_onset=10.0, gamma=0.5)
        tr = line_trajectory([1.0], [0.0], np.linspace(0, 40, 81))
        assert ana.classify(tr, ball, speed_floor=0.3) == ana.BOUND

    def test_fast_line_is_scattering(self):
        ball = ana.SlowBall(a=0.3, t_onset=10.0, gamma=0.5)
        tr = line_trajectory([0.5], [2.0], np.linspace(0, 40, 81))
        assert ana.classify(tr, ball, speed_floor=0.3) == ana.SCATTERING

    def test_half_floor_speed_is_undecided(self):
        a = 0.3
        ball = ana.SlowBall(a=a, t_onset=10.0, gamma=0.5)
        tr = line_trajectory([0.0], [a / 2], np.linspace(0, 100, 201))
        assert ana.classify(tr, ball, speed_floor=a) == ana.UNDECIDED

    def test_requires_onset_coverage(self):
        ball = ana.SlowBall(a=0.3, t_onset=50.0, gamma=0.5)
        tr = line_trajectory([0.0], [1.0], np.linspace(0, 10, 11))
        with pytest.raises(ValueError):
            ana.classify(tr, ball, 0.3)


@pytest.fixture(scope="module")
def free_run():
    g = make_grid(1, 60.0, 1024)
    psi0 = packet(g, sigma0=1.0, k0=[2.0])
    frames = prop.evolve(psi0, zero_potential(), 10.0, 0.002, frame_stride=20)
    ens = trj.run_ensemble(
        frames, 512, seed=42, output_times=frames.times[::5],
        interpolation="spectral",
    )
    return frames, ens, asym.free_asymptote(psi0)


class TestVelocityLaw:
    def test_free_gaussian_law(self, free_run):
        frames, ens, a = free_run
        ball = ana.SlowBall(a=0.5, t_onset=5.0, gamma=0.5)
        labeled = ana.label_ensemble(ens, ball, speed_floor=0.5)
        report = ana.velocity_law_test(labeled, a, pp_weight=0.0)
        assert report.n_scattering > 500
        assert report.ks_per_component[0] < report.ks_threshold
        assert report.bound_fraction == 0.0

    def test_pure_bound_synthetic(self):
        g = make_grid(1, 30.0, 256)
        times = np.linspace(0, 40, 41)
        trajs = [line_trajectory([q0], [0.0], times) for q0 in (-1.0, 0.2, 0.9)]
        ens = trj.TrajectoryEnsemble(trajectories=trajs, seed=0, output_times=times)
        ball = ana.SlowBall(a=0.3, t_onset=10.0, gamma=0.5)
        labeled = ana.label_ensemble(ens, ball, speed_floor=0.3)
        report = ana.velocity_law_test(labeled, gaussian_asymptote(g), pp_weight=1.0)
        assert report.bound_fraction == 1.0
        assert report.n_scattering == 0
        assert report.weight_gap == 0.0

    def test_ks_detects_wrong_law(self, free_run):
        frames, ens, _ = free_run
        g = frames.grid
        ball = ana.SlowBall(a=0.5, t_onset=5.0, gamma=0.5)
        labeled = ana.label_ensemble(ens, ball, speed_floor=0.5)
        shifted = gaussian_asymptote(g, sigma0=1.0, k0=2.6)
        report = ana.velocity_law_test(labeled, shifted, pp_weight=0.0)
        assert report.ks_per_component[0] > 5 * report.ks_threshold


class TestDecayFit:
    def test_inverse_time_error(self):
        times = np.linspace(4.0, 64.0, 200)
        v_inf = 1.7
        pos = (v_inf * times)[:, None]
        vel = (v_inf + 1.0 / times)[:, None]
        tr = trj.Trajectory(
            q0=np.array([0.0]), times=times, positions=pos, velocities=vel,
            status=trj.COMPLETED,
        )
        ens = trj.TrajectoryEnsemble(trajectories=[tr], seed=0, output_times=times)
        ball = ana.SlowBall(a=0.3, t_onset=4.0, gamma=0.5)
        labeled = ana.label_ensemble(ens, ball, speed_floor=0.3, tail_fraction=0.05)
        report = ana.decay_fit(ens, labeled, t_min=4.0)
        assert report.beta_hat == pytest.approx(1.0, abs=0.05)

    def test_constant_velocity_error_is_zero(self):
        times = np.linspace(1.0, 30.0, 59)
        tr = line_trajectory([0.0], [1.2], times)
        ens = trj.TrajectoryEnsemble(trajectories=[tr], seed=0, output_times=times)
        ball = ana.SlowBall(a=0.3, t_onset=2.0, gamma=0.5)
        labeled = ana.label_ensemble(ens, ball, speed_floor=0.3, tail_fraction=0.5)
        report = ana.decay_fit(ens, labeled, t_min=2.0)
        # the velocity estimate differs from the sample velocity by q0/T = 0
        assert np.max(report.sup_scaled_errors) < 1e-12


class TestStraightness:
    def test_exact_line_has_zero_deviation(self):
        tr = line_trajectory([0.0], [1.5], np.linspace(0, 50, 101))
        assert ana.straightness_report(tr, t_onset=30.0, window=5.0) < 1e-10

    def test_free_gaussian_windowed(self):
        times = np.linspace(0.0, 60.0, 241)
        x0 = 2.0
        pos = oracles.free_gaussian_trajectory(x0, times)[:, None]
        tr = trj.Trajectory(
            q0=np.array([x0]), times=times, positions=pos,
            velocities=np.zeros_like(pos), status=trj.COMPLETED,
        )
        dev = ana.straightness_report(tr, t_onset=40.0, window=5.0)
        assert dev < 0.05

    def test_circular_path_grows_with_window(self):
        times = np.linspace(0.0, 50.0, 501)
        pos = np.stack([np.cos(times), np.sin(times)], axis=-1)
        tr = trj.Trajectory(
            q0=pos[0], times=times, positions=pos,
            velocities=np.zeros_like(pos), status=trj.COMPLETED,
        )
        small = ana.straightness_report(tr, t_onset=20.0, window=0.5)
        large = ana.straightness_report(tr, t_onset=20.0, window=3.0)
        assert large > small > 0


class TestGoodSet:
    def test_empty_when_threshold_exceeds_peak(self):
        g = make_grid(1, 30.0, 512)
        a = gaussian_asymptote(g)
        peak = np.max(np.abs(a.psi_out_hat))
        gs = ana.good_set(a, ana.GoodSetParams(delta1=2 * peak, delta2=g.dk, a=1.0, b=3.0))
        assert gs.outer_measure == 0.0
        assert gs.inner_measure == 0.0

    def test_exhaustion_recovers_full_mass(self):
        g = make_grid(1, 30.0, 512)
        a = gaussian_asymptote(g)
        gs = ana.good_set(
            a,
            ana.GoodSetParams(delta1=1e-12, delta2=g.dk / 4, a=g.dk / 10, b=1e6),
        )
        assert gs.outer_measure == pytest.approx(1.0, abs=1e-3)

    def test_half_max_annulus_measure_against_quadrature(self):
        # |hat| > half max <=> |k - k0| < 2 sigma_k sqrt(ln 2); intersect (1, 3)
        from scipy.special import erf

        g = make_grid(1, 30.0, 1024)
        sigma_k = 0.5
        a = gaussian_asymptote(g, sigma0=1.0 / (2 * sigma_k), k0=2.0)
        peak = float(np.max(np.abs(a.psi_out_hat)))
        gs = ana.good_set(
            a, ana.GoodSetParams(delta1=0.5 * peak, delta2=g.dk / 4, a=1.0, b=3.0)
        )
        half_width = 2.0 * sigma_k * np.sqrt(np.log(2.0))
        expect = erf(half_width / (np.sqrt(2.0) * sigma_k))
        assert gs.outer_measure == pytest.approx(expect, abs=2e-3)

    def test_inner_set_shrinks_and_membership(self):
        g = make_grid(1, 30.0, 512)
        a = gaussian_asymptote(g)
        gs = ana.good_set(
            a, ana.GoodSetParams(delta1=1e-6, delta2=5 * g.dk, a=1.0, b=3.0)
        )
        assert gs.inner_measure < gs.outer_measure
        assert gs.contains([[2.0]], inner=True)[0]
        assert not gs.contains([[0.1]], inner=False)[0]
        assert not gs.contains([[500.0]], inner=False)[0]


class TestCurrentDensity:
    def test_zero_bound_part(self):
        g = make_grid(1, 20.0, 256)
        ac = packet(g, k0=[1.0])
        pp = WaveFunction(grid=g, values=np.zeros(g.shape, dtype=complex))
        split = ana.current_density(ac, pp)
        assert np.all(split.j_pp == 0.0)
        assert np.all(split.j_mixed == 0.0)
        assert np.all(split.rho_mixed == 0.0)

    def test_real_eigenstate_carries_no_current(self):
        g = make_grid(1, 20.0, 512)
        result = spectral.bound_states(poschl_teller(lam=1), g, max_count=1)
        u0 = result.eigenpairs[0].state
        ac = WaveFunction(grid=g, values=np.zeros(g.shape, dtype=complex))
        split = ana.current_density(ac, u0)
        assert np.max(np.abs(split.j_pp)) < 1e-10

    def test_plane_wave_current(self):
        g = make_grid(1, 20.0, 256)
        k0 = 4 * g.dk
        x = g.axis_coordinates()
        ac = WaveFunction(grid=g, values=np.exp(1j * k0 * x))
        pp = WaveFunction(grid=g, values=np.zeros(g.shape, dtype=complex))
        split = ana.current_density(ac, pp)
        expect = k0 * np.abs(ac.values) ** 2
        assert np.max(np.abs(split.j_ac[..., 0] - expect)) < 1e-10


@pytest.fixture(scope="module")
def eigen_setup():
    g = make_grid(1, 20.0, 512)
    result = spectral.bound_states(poschl_teller(lam=1), g, max_count=1)
    u0 = result.eigenpairs[0].state
    dec = spectral.split(u0, result.eigenpairs)
    frames = prop.evolve(u0, poschl_teller(lam=1), 4.0, 0.0008, frame_stride=125)
    return frames, dec


class TestCrossingFlux:
    def test_eigenstate_flux_is_tiny(self, eigen_setup):
        frames, dec = eigen_setup
        ball = ana.SlowBall(a=6.0, t_onset=1.0, gamma=0.5)
        report = ana.crossing_flux(frames, dec, ball)
        assert report.p_gamma < 1e-4
        assert report.parts["pp"] < 2e-5

    def test_escape_fraction_empty_for_pure_scattering(self):
        times = np.linspace(0, 40, 41)
        trajs = [line_trajectory([5.0], [2.0], times)]
        ens = trj.TrajectoryEnsemble(trajectories=trajs, seed=0, output_times=times)
        ball = ana.SlowBall(a=0.3, t_onset=10.0, gamma=0.5)
        stats = ana.slow_ball_escape(ens, ball)
        assert stats["n_bound_at_onset"] == 0
        assert stats["escape_fraction"] == 0.0

    def test_confined_members_do_not_escape(self):
        times = np.linspace(0, 40, 81)
        trajs = [line_trajectory([q0], [0.0], times) for q0 in (-1.0, 0.5)]
        ens = trj.TrajectoryEnsemble(trajectories=trajs, seed=0, output_times=times)
        ball = ana.SlowBall(a=0.3, t_onset=10.0, gamma=0.5)
        stats = ana.slow_ball_escape(ens, ball)
        assert stats["n_bound_at_onset"] == 2
        assert stats["n_escaped"] == 0

    def test_frame_thinning_consistency(self, eigen_setup):
        frames, dec = eigen_setup
        ball = ana.SlowBall(a=2.0, t_onset=1.0, gamma=0.5)
        full = ana.crossing_flux(frames, dec, ball)
        half = ana.crossing_flux(frames, dec, ball, frame_step=2)
        scale = max(full.p_gamma, 1e-12)
        assert abs(full.p_gamma - half.p_gamma) / scale < 0.05


@pytest.fixture(scope="module")
def equivariance_run():
    g = make_grid(1, 40.0, 512)
    psi0 = packet(g, sigma0=1.0)
    frames = prop.evolve(psi0, zero_potential(), 5.0, 0.0025, frame_stride=200)
    ens = trj.run_ensemble(
        frames, 256, seed=8, output_times=frames.times,
        interpolation="spectral",
    )
    return frames, ens


class TestEquivariance:
    def test_initial_time_matches_baseline(self, equivariance_run):
        frames, ens = equivariance_run
        report = ana.equivariance_test(ens, frames, 0.0)
        assert report.ratio < 3.0

    def test_transported_density_matches(self, equivariance_run):
        frames, ens = equivariance_run
        for t in (2.5, 5.0):
            report = ana.equivariance_test(ens, frames, t)
            assert report.ratio < 3.0

    def test_mispaired_frames_detected(self, equivariance_run):
        frames, ens = equivariance_run
        g = frames.grid
        psi_far = packet(g, sigma0=1.0, center=[10.0])
        wrong = prop.evolve(psi_far, zero_potential(), 5.0, 0.0025, frame_stride=200)
        report = ana.equivariance_test(ens, wrong, 5.0)
        assert report.ratio > 10.0


class TestReport:
    def test_round_trip_and_pass_logic(self, tmp_path):
        claims = [
            ana.ClaimResult("thm3.1.ii", True, {"ks": 0.01}, {"ks": 0.0163}),
            ana.ClaimResult("cor3.3", False, {"fraction": 0.9}, {"fraction": 0.95}, "too wiggly"),
        ]
        report = ana.VerificationReport(claims=claims, metadata={"scenario": "x"})
        assert not report.passed
        p = tmp_path / "report.json"
        report.to_json(p)
        back = ana.VerificationReport.from_json(p)
        assert back.claim("thm3.1.ii").passed
        assert not back.claim("cor3.3").passed
        assert back.metadata["scenario"] == "x"
        csv_path = tmp_path / "report.csv"
        report.to_csv(csv_path)
        assert "thm3.1.ii" in csv_path.read_text()
