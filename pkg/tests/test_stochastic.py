import warnings

import numpy as np
import pytest

from cqedfb.feedback import FeedbackParams, FilterState, feedback_generator, filter_update, paper_initial_state
from cqedfb.hilbert import (
    Operator,
    SpaceLayout,
    StateVector,
    annihilation,
    basis_state,
    coherent_amplitudes,
    embed,
    number,
)
from cqedfb.models import SystemParams, build_feedback_model, two_qubit_dispersive
from cqedfb.stochastic import (
    SdeConfig,
    TrajectoryAbort,
    homodyne_increment,
    lindblad_evolve,
    run_trajectory,
    sse_step,
    trajectory_rng,
    wiener_increment,
    wiener_increments,
)
from cqedfb.stochastic import _Controller

PAPER = SystemParams(kappa=100.0, chi=25.0, epsilon=100.0)
# weaker drive keeps the field inside a small truncation
SMALL = SystemParams(kappa=100.0, chi=25.0, epsilon=20.0)


def _cavity(n):
    layout = SpaceLayout((n,))
    return layout, Operator(layout, annihilation(n))


class TestWiener:
    def test_moments(self):
        dt, n = 1e-4, 1_000_000
        dW = wiener_increments(trajectory_rng(123), dt, n)
        se_mean = np.sqrt(dt / n)
        se_var = dt * np.sqrt(2.0 / (n - 1))
        assert abs(dW.mean()) <= 4 * se_mean
        assert abs(dW.var(ddof=1) - dt) <= 4 * se_var

    def test_deterministic(self):
        a = wiener_increments(trajectory_rng(5, 3), 1e-3, 100)
        b = wiener_increments(trajectory_rng(5, 3), 1e-3, 100)
        np.testing.assert_array_equal(a, b)

    def test_streams_distinct(self):
        a = wiener_increments(trajectory_rng(5, 0), 1e-3, 50)
        b = wiener_increments(trajectory_rng(5, 1), 1e-3, 50)
        c = wiener_increments(trajectory_rng(6, 0), 1e-3, 50)
        assert not np.array_equal(a, b) and not np.array_equal(a, c)

    def test_scalar_draw(self):
        rng = trajectory_rng(1)
        assert isinstance(wiener_increment(rng, 0.01), float)


class TestHomodyneIncrement:
    def test_vacuum(self):
        layout, a = _cavity(6)
        assert homodyne_increment(basis_state(layout, (0,)), 100.0, 0.0, a, 1e-4) == 0.0

    def test_coherent_signal(self):
        layout, a = _cavity(30)
        psi = StateVector(layout, coherent_amplitudes(0.8, 30))
        assert homodyne_increment(psi, 100.0, 0.0, a, 1e-4) == pytest.approx(100.0 * 1.6 * 1e-4, rel=1e-12)

    def test_ensemble_mean(self):
        layout, a = _cavity(30)
        psi = StateVector(layout, coherent_amplitudes(-1.2, 30))
        kappa, dt, n = 50.0, 1e-3, 200_000
        dW = wiener_increments(trajectory_rng(77), dt, n)
        samples = np.array([homodyne_increment(psi, kappa, w, a, dt) for w in dW[:2000]])
        # linear in dW, so the full-sample mean follows from the dW mean
        mean = kappa * -2.4 * dt + np.sqrt(kappa) * dW.mean()
        assert mean == pytest.approx(kappa * -2.4 * dt, abs=4 * np.sqrt(kappa * dt / n))
        assert samples.mean() == pytest.approx(kappa * -2.4 * dt, abs=4 * np.sqrt(kappa * dt / 2000))

    def test_requires_normalized(self):
        layout, a = _cavity(4)
        with pytest.raises(ValueError):
            homodyne_increment(StateVector(layout, np.array([1.0, 1.0, 0, 0])), 1.0, 0.0, a, 1e-3)


class TestSseStep:
    def test_closed_system_is_normalized_euler(self):
        layout = SpaceLayout((2, 2, 5))
        H = two_qubit_dispersive(0.7, 5)
        a = embed(annihilation(5), 2, layout)
        psi = paper_initial_state(layout, alpha=0.2)
        dt = 1e-3
        new, dI = sse_step(psi, H, 0.0, dt, 0.3, a)
        assert dI == 0.0
        raw = psi.amplitudes - 1j * dt * (H.matrix @ psi.amplitudes)
        # the norm change before renormalization is second order in dt
        assert abs(np.linalg.norm(raw) - 1) < 10 * dt**2 * np.linalg.norm(H.toarray(), 2) ** 2
        np.testing.assert_allclose(new.amplitudes, raw / np.linalg.norm(raw), atol=1e-15)

    def test_vacuum_is_dark(self):
        layout = SpaceLayout((2, 2, 5))
        H = two_qubit_dispersive(0.7, 5)
        a = embed(annihilation(5), 2, layout)
        psi = basis_state(layout, (0, 0, 0))
        new, dI = sse_step(psi, H, 100.0, 1e-4, 0.01, a)
        assert abs(np.vdot(psi.amplitudes, new.amplitudes)) == pytest.approx(1.0, abs=1e-15)

    def test_norm_collapse_aborts(self):
        layout, a = _cavity(3)
        H = Operator(layout, np.zeros((3, 3)), hermitian=True)
        # a generator that cancels the state exactly in one step
        sink = Operator(layout, (-1j / 1e-3) * np.eye(3))
        with pytest.raises(TrajectoryAbort, match="collapsed"):
            sse_step(basis_state(layout, (0,)), H, 1.0, 1e-3, 0.0, a, feedback_term=sink)


class TestLindblad:
    def test_photon_decay_law(self):
        layout, a = _cavity(4)
        kappa = 3.0
        rho0 = basis_state(layout, (1,)).to_density()
        n = number(4).toarray()
        times = [0.1, 0.5, 1.0]
        snaps = lindblad_evolve(Operator(layout, np.zeros((4, 4)), hermitian=True), a * np.sqrt(kappa), rho0, 1.0,
                                1e-3, checkpoints=times)
        for t, r in zip(times, snaps):
            assert np.trace(n @ r.entries).real == pytest.approx(np.exp(-kappa * t), abs=1e-6)

    def test_unitary_limit_preserves_purity(self):
        model = build_feedback_model(PAPER, 5)
        rho0 = paper_initial_state(model.layout, alpha=0.2).to_density()
        out = lindblad_evolve(model.H, None, rho0, 0.05, 2e-5)
        assert out.purity() == pytest.approx(1.0, abs=1e-8)

    def test_driven_cavity_steady_state(self):
        layout, a = _cavity(18)
        eps, kappa = 20.0, 40.0
        H = Operator(layout, eps * (a.matrix + a.matrix.conj().T), hermitian=True)
        rho0 = basis_state(layout, (0,)).to_density()
        out = lindblad_evolve(H, a * np.sqrt(kappa), rho0, 1.0, 5e-4)
        # a single sqrt(kappa) a channel relaxes the field at kappa/2
        assert np.trace(a.toarray() @ out.entries) == pytest.approx(-1j * eps / (kappa / 2), abs=1e-8)

    def test_trace_drift_raises(self):
        layout, a = _cavity(6)
        H = Operator(layout, 1e3 * number(6), hermitian=True)
        with pytest.raises(ValueError, match="trace drift"):
            lindblad_evolve(H, a * 30.0, basis_state(layout, (5,)).to_density(), 1.0, 0.1)

    def test_bad_grid(self):
        layout, a = _cavity(3)
        H = Operator(layout, number(3), hermitian=True)
        with pytest.raises(ValueError):
            lindblad_evolve(H, a, basis_state(layout, (0,)).to_density(), 1.0, 0.3)


def _reference_trajectory(model, psi0, dW, dt, fb=None, norm=1.0):
    """Pure-python closed loop: sse_step plus FilterState, actuation one step late."""
    psi = psi0.copy().normalize()
    fs = FilterState.for_params(fb, dt, norm) if fb is not None else None
    R = 0.0
    for w in dW:
        term = feedback_generator(R, fb, model.Jx) if fb is not None and fb.lam else None
        psi, dI = sse_step(psi, model.H, model.kappa, dt, w, model.a, feedback_term=term)
        if fs is not None:
            R = filter_update(fs, dI)
    return psi


@pytest.fixture(scope="module")
def model():
    return build_feedback_model(SMALL, TestRunTrajectory.N)


class TestRunTrajectory:
    N = 8

    def test_kernel_matches_reference_open_loop(self, model):
        sde = SdeConfig(dt=1e-4, t_final=0.05, fock_dim=self.N, sample_every=100)
        psi0 = paper_initial_state(model.layout, alpha=0.5)
        dW = wiener_increments(trajectory_rng(11), sde.dt, sde.n_steps)
        rec = run_trajectory(model, sde, psi0, dW=dW)
        ref = _reference_trajectory(model, psi0, dW, sde.dt)
        np.testing.assert_allclose(rec.final_state.amplitudes, ref.amplitudes, atol=1e-10)

    def test_kernel_matches_reference_closed_loop(self, model):
        sde = SdeConfig(dt=1e-4, t_final=0.08, fock_dim=self.N, sample_every=100)
        fb = FeedbackParams(lam=100.0, power=3, t_window=0.02, gamma=0.003)
        psi0 = paper_initial_state(model.layout, alpha=0.5)
        dW = wiener_increments(trajectory_rng(12), sde.dt, sde.n_steps)
        norm = 0.5  # small, so the loop actually rotates the qubits and clamps
        w = np.exp(-fb.gamma * sde.dt * np.arange(200))
        ctrl = _Controller(fb.lam, fb.power, w, norm, True)
        rec = run_trajectory(model, sde, psi0, controller=ctrl, dW=dW)
        assert np.abs(rec.R).max() > 0.2
        ref = _reference_trajectory(model, psi0, dW, sde.dt, fb, norm)
        np.testing.assert_allclose(rec.final_state.amplitudes, ref.amplitudes, atol=1e-9)
        open_loop = run_trajectory(model, sde, psi0, dW=dW)
        assert np.abs(open_loop.final_state.amplitudes - rec.final_state.amplitudes).max() > 1e-3

    def test_records(self, model):
        sde = SdeConfig(dt=1e-4, t_final=0.02, fock_dim=self.N, sample_every=50)
        rec = run_trajectory(model, sde, paper_initial_state(model.layout, 0.5), seed=(3, 1))
        assert rec.times.shape == (sde.n_samples,) == rec.fidelity.shape
        assert rec.times[-1] == pytest.approx(0.02)
        assert len(rec.record) == sde.n_steps
        assert rec.final_state.norm() == pytest.approx(1.0, abs=1e-12)
        assert rec.jz[0] == pytest.approx(0.0, abs=1e-15)

    def test_same_seed_same_csv(self, model):
        sde = SdeConfig(dt=1e-4, t_final=0.02, fock_dim=self.N, sample_every=20)
        psi0 = paper_initial_state(model.layout, 0.5)
        a = run_trajectory(model, sde, psi0, seed=(9, 4)).to_csv()
        b = run_trajectory(model, sde, psi0, seed=(9, 4)).to_csv()
        c = run_trajectory(model, sde, psi0, seed=(9, 5)).to_csv()
        assert a == b and a != c

    def test_exchange_entangles_in_the_dark(self):
        chi, dt = 25.0, 1e-4
        model = build_feedback_model(SystemParams(kappa=100.0, chi=chi, epsilon=0.0), 4)
        sde = SdeConfig(dt=dt, t_final=0.2, fock_dim=4, sample_every=100)
        rec = run_trajectory(model, sde, paper_initial_state(model.layout, alpha=0.0), seed=(1, 0))
        # oracle: in the vacuum only the exchange acts, multiplying the |T0> part of
        # |++> = (|00> + |11>)/2 + |T0>/sqrt2 by (1 - i chi dt) each renormalized Euler step
        steps = np.rint(rec.times / dt)
        b = (1 - 1j * chi * dt) ** steps / 2
        nrm2 = 0.5 + 2 * np.abs(b) ** 2
        oracle = 2 * np.abs(0.25 - b * b) / nrm2
        np.testing.assert_allclose(rec.concurrence, oracle, atol=1e-12)
        # and the continuum limit |sin(chi t)|
        np.testing.assert_allclose(rec.concurrence, np.abs(np.sin(chi * rec.times)), atol=2e-3)

    def test_symmetric_subspace_invariant(self, model):
        sde = SdeConfig(dt=1e-4, t_final=0.3, fock_dim=self.N, sample_every=10)
        w = np.ones(100)
        ctrl = _Controller(100.0, 3, w, 2.0, True)
        rec = run_trajectory(model, sde, paper_initial_state(model.layout, 0.5), controller=ctrl, seed=(2, 2))
        assert rec.singlet_population.max() <= 1e-10

    def test_truncation_warning(self):
        model = build_feedback_model(SystemParams(kappa=1.0, chi=0.1, epsilon=5.0), 4)
        sde = SdeConfig(dt=1e-3, t_final=0.5, fock_dim=4, sample_every=50)
        with pytest.warns(RuntimeWarning, match="top Fock level"):
            run_trajectory(model, sde, paper_initial_state(model.layout, 0.0), seed=(0, 0))

    def test_truncation_health_at_paper_size(self):
        model = build_feedback_model(PAPER, 25)
        sde = SdeConfig(dt=1e-4, t_final=1.0, fock_dim=25, sample_every=100)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            psi0 = paper_initial_state(model.layout, 3.0)
        with warnings.catch_warnings():
            warnings.simplefilter("error", RuntimeWarning)
            rec = run_trajectory(model, sde, psi0, seed=(4, 0), record_increments=False)
        assert rec.top_population[1:].max() < 1e-4

    def test_layout_checks(self, model):
        with pytest.raises(ValueError):
            run_trajectory(model, SdeConfig(dt=1e-4, t_final=0.01, fock_dim=7), paper_initial_state(model.layout, 0.1))
        with pytest.raises(ValueError):
            run_trajectory(model, SdeConfig(dt=1e-4, t_final=0.01, fock_dim=self.N), paper_initial_state(model.layout, 0.1),
                           dW=np.zeros(3))


class TestSdeConfig:
    def test_grid(self):
        c = SdeConfig(dt=1e-4, t_final=10.0, sample_every=100)
        assert c.n_steps == 100_000 and c.n_samples == 1001
        assert c.sample_times()[-1] == pytest.approx(10.0)

    @pytest.mark.parametrize("kw", [{"dt": 0.0}, {"t_final": -1.0}, {"t_final": 0.00015}, {"fock_dim": 1}])
    def test_validation(self, kw):
        args = {"dt": 1e-4, "t_final": 1.0, **kw}
        with pytest.raises(ValueError):
            SdeConfig(**args)
