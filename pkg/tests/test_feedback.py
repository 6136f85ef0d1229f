import numpy as np
import pytest

from cqedfb.feedback import (
    INITIAL_STATES,
    PAPER_FEEDBACK,
    PAPER_SYSTEM,
    Controller,
    FeedbackParams,
    FilterState,
    auto_normalization,
    feedback_generator,
    filter_update,
    filter_weights,
    make_controller,
    run_ensemble,
    run_feedback_trajectory,
    steady_state_quadrature,
    window_steps,
)
from cqedfb.hilbert import SpaceLayout, basis_state, collective_ops
from cqedfb.metrics import fidelity_phi_plus
from cqedfb.models import build_feedback_model
from cqedfb.stochastic import SdeConfig, run_trajectory

pytestmark = pytest.mark.filterwarnings("ignore::RuntimeWarning")

N = 15


class TestParams:
    def test_paper_values(self):
        assert (PAPER_FEEDBACK.lam, PAPER_FEEDBACK.power) == (100.0, 3)
        assert PAPER_FEEDBACK.t_window == pytest.approx(2000 * 1e-4)
        assert PAPER_FEEDBACK.gamma == 0.003
        assert (PAPER_SYSTEM.epsilon, PAPER_SYSTEM.chi, PAPER_SYSTEM.kappa) == (100.0, 25.0, 100.0)

    @pytest.mark.parametrize("kw", [{"power": 2}, {"power": 0}, {"lam": -1.0}, {"t_window": 0.0}, {"gamma": -0.1},
                                    {"norm": 0.0}])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            FeedbackParams(**kw)

    def test_even_power_opt_in(self):
        assert FeedbackParams(power=2, allow_even_power=True).power == 2


class TestFilter:
    def test_weights(self):
        w = filter_weights(0.2, 0.003, 1e-4)
        assert w.size == window_steps(0.2, 1e-4) == 2000
        assert w[0] == 1.0 and np.all(np.diff(w) <= 0) and np.all(w > 0)
        assert w[-1] == pytest.approx(np.exp(-0.003 * 1999e-4))

    def test_zero_record(self):
        fs = FilterState(np.ones(5), 1.0)
        assert all(filter_update(fs, 0.0) == 0.0 for _ in range(12))

    def test_constant_record_unweighted_limit(self):
        c, norm = 0.3, 7.0
        fs = FilterState(filter_weights(0.01, 0.0, 1e-3), norm, clamp=False)
        outs = [filter_update(fs, c) for _ in range(25)]
        # zero-padded warm-up then the full window sum
        np.testing.assert_allclose(outs[:10], c * np.arange(1, 11) / norm)
        assert outs[-1] == pytest.approx(c * 10 / norm)

    def test_newest_sample_weighted_first(self):
        fs = FilterState(np.array([1.0, 0.5, 0.25]), 1.0, clamp=False)
        for v in (1.0, 0.0, 0.0):
            r = filter_update(fs, v)
        assert r == 0.25

    def test_clamp(self):
        fs = FilterState(np.ones(3), 1.0, clamp=True)
        assert filter_update(fs, 5.0) == 1.0
        fs = FilterState(np.ones(3), 1.0, clamp=True)
        assert filter_update(fs, -5.0) == -1.0

    def test_validation(self):
        with pytest.raises(ValueError):
            FilterState(np.array([1.0, 0.0]), 1.0)
        with pytest.raises(ValueError):
            FilterState(np.ones(2), 0.0)


class TestGenerator:
    layout = SpaceLayout((2, 2, 3))

    def test_examples(self):
        jx = collective_ops(self.layout)["Jx"]
        assert abs(feedback_generator(0.0, PAPER_FEEDBACK, jx).matrix).max() == 0
        np.testing.assert_allclose(feedback_generator(1.0, PAPER_FEEDBACK, jx).toarray(), 100 * jx.toarray())
        plus = feedback_generator(0.4, PAPER_FEEDBACK, jx).toarray()
        minus = feedback_generator(-0.4, PAPER_FEEDBACK, jx).toarray()
        np.testing.assert_allclose(plus, -minus)
        np.testing.assert_allclose(plus, 100 * 0.4**3 * jx.toarray())


class TestNormalization:
    def test_steady_quadrature(self):
        # closed form: <a> = -i eps / (kappa/2 + 2 i chi m)
        for m in (-1, 0, 1):
            want = 2 * (-1j * 100.0 / (50.0 + 2j * 25.0 * m)).real
            assert steady_state_quadrature(PAPER_SYSTEM, N, m) == pytest.approx(want, abs=1e-6)

    def test_auto_value(self):
        norm = auto_normalization(PAPER_SYSTEM, PAPER_FEEDBACK, 1e-4, N)
        w = filter_weights(0.2, 0.003, 1e-4)
        assert norm == pytest.approx(100.0 * 2.0 * w.sum() * 1e-4, rel=1e-6)
        assert norm == pytest.approx(39.988, abs=1e-3)

    def test_explicit_norm_wins(self):
        fb = FeedbackParams(norm=12.5)
        assert make_controller(PAPER_SYSTEM, fb, 1e-4, N).norm_const == 12.5

    @pytest.mark.parametrize("qubits,sign", [((0, 0), -1.0), ((1, 1), 1.0)])
    def test_pinned_record_filters_to_unit_magnitude(self, qubits, sign):
        model = build_feedback_model(PAPER_SYSTEM, N)
        ctrl = make_controller(PAPER_SYSTEM, PAPER_FEEDBACK, 1e-4, N)
        # controller off, clamp off: R is only observed
        probe = Controller(0.0, 3, ctrl.weights, ctrl.norm_const, False)
        sde = SdeConfig(dt=1e-4, t_final=3.0, fock_dim=N, sample_every=10)
        psi0 = basis_state(model.layout, (*qubits, 0))
        rec = run_trajectory(model, sde, psi0, controller=probe, seed=(31, 0), record_increments=False)
        plateau = rec.R[rec.times >= 0.5].mean()
        assert plateau == pytest.approx(sign, abs=0.1)
        np.testing.assert_allclose(rec.jz, -sign, atol=1e-12)


class TestTrajectories:
    def test_lambda_zero_is_open_loop(self):
        model = build_feedback_model(PAPER_SYSTEM, 10)
        sde = SdeConfig(dt=1e-4, t_final=0.5, fock_dim=10, sample_every=50)
        psi0 = INITIAL_STATES["product"](model.layout, 1.0)
        off = FeedbackParams(lam=0.0)
        a = run_feedback_trajectory(model, sde, off, seed=(8, 2), initial_state=psi0)
        b = run_trajectory(model, sde, psi0, seed=(8, 2))
        # R is only logged; the open-loop path has no window to report
        for f in ("jz", "x_quad", "n_photon", "concurrence", "fidelity", "qubit_rho"):
            np.testing.assert_array_equal(getattr(a, f), getattr(b, f))
        np.testing.assert_array_equal(a.final_state.amplitudes, b.final_state.amplitudes)

    def test_phi_plus_start(self):
        layout = SpaceLayout((2, 2, 6))
        psi = INITIAL_STATES["phi_plus"](layout, 0.0)
        from cqedfb.hilbert import partial_trace

        assert fidelity_phi_plus(partial_trace(psi, [0, 1]).entries) == pytest.approx(1.0)


@pytest.fixture(scope="module")
def small_ensemble():
    model = build_feedback_model(PAPER_SYSTEM, N)
    sde = SdeConfig(dt=1e-4, t_final=10.0, fock_dim=N, sample_every=100)
    return run_ensemble(model, sde, PAPER_FEEDBACK, 24, master_seed=17, n_jobs=1)


class TestEnsemble:
    def test_single_trajectory_summary(self):
        model = build_feedback_model(PAPER_SYSTEM, 10)
        sde = SdeConfig(dt=1e-4, t_final=0.3, fock_dim=10, sample_every=100)
        s = run_ensemble(model, sde, PAPER_FEEDBACK, 1, master_seed=4, alpha=1.0, n_jobs=1)
        psi0 = INITIAL_STATES["product"](model.layout, 1.0)
        rec = run_feedback_trajectory(model, sde, PAPER_FEEDBACK, seed=(4, 0), initial_state=psi0)
        np.testing.assert_array_equal(s.mean_fidelity, rec.fidelity)
        np.testing.assert_array_equal(s.mean_concurrence, rec.concurrence)
        assert np.all(s.se_fidelity == 0) and s.seeds == [[4, 0]]

    def test_deterministic_across_worker_counts(self):
        model = build_feedback_model(PAPER_SYSTEM, 8)
        sde = SdeConfig(dt=1e-4, t_final=0.2, fock_dim=8, sample_every=100)
        a = run_ensemble(model, sde, PAPER_FEEDBACK, 4, master_seed=99, alpha=0.5, n_jobs=1)
        b = run_ensemble(model, sde, PAPER_FEEDBACK, 4, master_seed=99, alpha=0.5, n_jobs=2)
        np.testing.assert_array_equal(a.mean_fidelity, b.mean_fidelity)
        np.testing.assert_array_equal(a.final_fidelities, b.final_fidelities)
        assert a.seeds == b.seeds

    def test_worker_env_override(self, monkeypatch):
        from cqedfb.feedback import WORKERS_ENV, _worker_count

        monkeypatch.setenv(WORKERS_ENV, "3")
        assert _worker_count(10, None) == 3
        assert _worker_count(2, None) == 2
        assert _worker_count(10, 1) == 1

    def test_mean_fidelity_rises(self, small_ensemble):
        s = small_ensemble
        assert s.mean_fidelity[np.searchsorted(s.times, 10.0)] > s.mean_fidelity[np.searchsorted(s.times, 1.0)]

    def test_converged_runs_show_flat_record(self, small_ensemble):
        s = small_ensemble
        converged = s.final_fidelities > s.threshold
        assert converged.sum() >= 20
        assert np.all(np.abs(s.final_R_plateau[converged]) < 0.1)

    def test_symmetric_sector_kept(self, small_ensemble):
        assert small_ensemble.max_singlet_population.max() <= 1e-10

    def test_rejects_empty(self):
        model = build_feedback_model(PAPER_SYSTEM, 4)
        with pytest.raises(ValueError):
            run_ensemble(model, SdeConfig(dt=1e-4, t_final=0.01, fock_dim=4), PAPER_FEEDBACK, 0, 1)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_paper_size_trajectories_converge():
    model = build_feedback_model(PAPER_SYSTEM, 25)
    sde = SdeConfig(dt=1e-4, t_final=10.0, fock_dim=25, sample_every=1000)
    s = run_ensemble(model, sde, PAPER_FEEDBACK, 20, master_seed=25, n_jobs=1)
    assert s.convergence_fraction >= 0.9
