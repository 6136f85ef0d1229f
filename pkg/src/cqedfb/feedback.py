"""Filtered-homodyne J_x feedback that drives two qubits into phi+.

The homodyne increments are low-pass filtered over a sliding window,

    R(t) = (1/norm) * sum_{j < W} exp(-gamma j dt) dI_{k-j},

raised to an odd power P and used to switch on ``lam * R**P * J_x``. The
J_z = 0 triplet state phi+ leaves the cavity unshifted, so R ~ 0 there and
the controller falls silent; |00> and |11> shift the cavity, R ~ -+1 and the
collective rotation kicks the qubits out again.
"""
from __future__ import annotations

import logging
import os
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .hilbert import (
    Operator,
    SpaceLayout,
    StateVector,
    annihilation,
    coherent_amplitudes,
    number,
    product_state,
)
from .metrics import PHI_PLUS, convergence_fraction
from .models import FeedbackModel, SystemParams
from .stochastic import (
    SdeConfig,
    TrajectoryAbort,
    TrajectoryRecord,
    lindblad_evolve,
    run_trajectory,
    trajectory_rng,
    wiener_increments,
)

__all__ = [
    "FeedbackParams",
    "FilterState",
    "Controller",
    "EnsembleSummary",
    "PAPER_SYSTEM",
    "PAPER_FEEDBACK",
    "filter_weights",
    "filter_update",
    "feedback_generator",
    "steady_state_quadrature",
    "make_controller",
    "paper_initial_state",
    "phi_plus_initial_state",
    "run_feedback_trajectory",
    "run_ensemble",
]

log = logging.getLogger(__name__)

WORKERS_ENV = "CQEDFB_WORKERS"


@dataclass(frozen=True)
class FeedbackParams:
    """Controller settings. ``norm=None`` selects the automatic normalization."""

    lam: float = 100.0
    power: int = 3
    t_window: float = 0.2
    gamma: float = 0.003
    norm: float | None = None
    clamp: bool = True
    allow_even_power: bool = False

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if int(self.power) != self.power or self.power < 1:
            raise ValueError(f"power must be a positive integer, got {self.power}")
        if self.power % 2 == 0 and not self.allow_even_power:
            raise ValueError("even powers discard the sign of R; pass allow_even_power=True to force")
        if not self.t_window > 0:
            raise ValueError(f"t_window must be > 0, got {self.t_window}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.norm is not None and not self.norm > 0:
            raise ValueError(f"norm must be > 0, got {self.norm}")


PAPER_SYSTEM = SystemParams(kappa=100.0, chi=25.0, epsilon=100.0)
PAPER_FEEDBACK = FeedbackParams(lam=100.0, power=3, t_window=2000 * 1e-4, gamma=0.003)
PAPER_ALPHA = 3.0


def window_steps(t_window: float, dt: float) -> int:
    return max(1, int(round(t_window / dt)))


def filter_weights(t_window: float, gamma: float, dt: float) -> np.ndarray:
    """``exp(-gamma * j * dt)`` for lags ``j = 0 .. W-1``; positive, non-increasing."""
    return np.exp(-gamma * dt * np.arange(window_steps(t_window, dt)))


class FilterState:
    """Sliding-window exponential filter over homodyne increments.

    The window starts zero-padded, so the output ramps in over the first
    ``t_window`` of a run.
    """

    def __init__(self, weights: np.ndarray, norm: float, clamp: bool = True):
        self.weights = np.asarray(weights, dtype=float)
        if self.weights.ndim != 1 or self.weights.size == 0 or np.any(self.weights <= 0):
            raise ValueError("filter weights must be a non-empty positive vector")
        if not norm > 0:
            raise ValueError("filter normalization must be > 0")
        self.norm = float(norm)
        self.clamp = clamp
        # newest first, matching weights[0]
        self.buffer = deque([0.0] * self.weights.size, maxlen=self.weights.size)

    @classmethod
    def for_params(cls, fb: FeedbackParams, dt: float, norm: float) -> "FilterState":
        return cls(filter_weights(fb.t_window, fb.gamma, dt), norm, fb.clamp)

    def __len__(self):
        return len(self.buffer)


def filter_update(fs: FilterState, dI: float) -> float:
    """Push one increment and return the normalized filter output ``R``."""
    fs.buffer.appendleft(float(dI))
    R = float(np.dot(fs.weights, np.fromiter(fs.buffer, float, len(fs.buffer)))) / fs.norm
    if fs.clamp:
        R = min(1.0, max(-1.0, R))
    return R


def feedback_generator(R: float, fb: FeedbackParams, Jx: Operator) -> Operator:
    """Hamiltonian ``lam * R**P * J_x`` added to the SSE generator."""
    return Jx * (fb.lam * R**fb.power)


# ---------------------------------------------------------------------------
# normalization


@lru_cache(maxsize=32)
def _steady_quadrature(kappa: float, chi: float, epsilon: float, N: int, m: int) -> float:
    layout = SpaceLayout((N,))
    a = annihilation(N)
    h = Operator(layout, epsilon * (a + a.conj().T) + 2.0 * chi * m * number(N), hermitian=True)
    L = Operator(layout, np.sqrt(kappa) * a)
    rho0 = np.zeros((N, N), dtype=complex)
    rho0[0, 0] = 1.0
    # field amplitude relaxes at kappa/2; 40/kappa leaves e^-20 of the transient
    t_final = 40.0 / kappa
    scale = abs(epsilon) * np.sqrt(N) + abs(chi) * N + kappa * N
    dt = t_final / max(2000, int(np.ceil(t_final * scale / 0.5)))
    rho = lindblad_evolve(h, L, rho0, t_final, dt)
    x = a.toarray() + a.toarray().conj().T
    return float(np.real(np.trace(x @ rho.entries)))


def steady_state_quadrature(params: SystemParams, N: int, jz: int) -> float:
    """Open-loop steady ``<a + a^dag>`` with the qubits pinned at ``J_z = jz``.

    For ``jz = +-1`` the qubits sit in |00> or |11>, which the exchange term
    leaves alone, so the problem reduces to the driven damped cavity with a
    ``2 chi jz a^dag a`` pull.
    """
    return _steady_quadrature(float(params.kappa), float(params.chi), float(params.epsilon), int(N), int(jz))


def auto_normalization(params: SystemParams, fb: FeedbackParams, dt: float, N: int) -> float:
    """``kappa * x_ss * sum_j w_j dt`` with x_ss the larger |<x>| for J_z = +-1.

    With this choice a record from a fully shifted cavity filters to |R| ~ 1.
    """
    x_ss = max(abs(steady_state_quadrature(params, N, m)) for m in (-1, 1))
    if x_ss == 0.0:
        raise ValueError("cavity shows no J_z-dependent quadrature; cannot normalize the filter")
    return params.kappa * x_ss * float(np.sum(filter_weights(fb.t_window, fb.gamma, dt))) * dt


@dataclass(frozen=True)
class Controller:
    """Resolved controller handed to the trajectory kernel."""

    lam: float
    power: int
    weights: np.ndarray = field(repr=False)
    norm_const: float
    clamp: bool


def make_controller(params: SystemParams, fb: FeedbackParams, dt: float, N: int) -> Controller:
    norm = fb.norm if fb.norm is not None else auto_normalization(params, fb, dt, N)
    return Controller(fb.lam, int(fb.power), filter_weights(fb.t_window, fb.gamma, dt), norm, fb.clamp)


# ---------------------------------------------------------------------------
# initial states


def paper_initial_state(layout: SpaceLayout, alpha: complex = PAPER_ALPHA) -> StateVector:
    """``(|0> + |1>)/sqrt(2)`` on both qubits times the coherent state ``|alpha>``."""
    plus = np.array([1.0, 1.0]) / np.sqrt(2.0)
    return product_state(layout, [plus, plus, coherent_amplitudes(alpha, layout.fock_dim)])


def phi_plus_initial_state(layout: SpaceLayout, alpha: complex = PAPER_ALPHA) -> StateVector:
    vec = np.kron(PHI_PLUS, coherent_amplitudes(alpha, layout.fock_dim))
    return StateVector(layout, vec)


INITIAL_STATES = {"product": paper_initial_state, "phi_plus": phi_plus_initial_state}


# ---------------------------------------------------------------------------
# trajectories


def run_feedback_trajectory(
    model: FeedbackModel,
    sde: SdeConfig,
    fb: FeedbackParams,
    seed=None,
    initial_state: StateVector | None = None,
    controller: Controller | None = None,
    record_increments: bool = True,
) -> TrajectoryRecord:
    """Closed-loop SSE trajectory; the actuation lags the measurement by one step."""
    if controller is None:
        controller = make_controller(model.params, fb, sde.dt, model.layout.fock_dim)
    if initial_state is None:
        initial_state = paper_initial_state(model.layout)
    return run_trajectory(
        model, sde, initial_state, controller=controller, seed=seed, record_increments=record_increments
    )


@dataclass
class EnsembleSummary:
    times: np.ndarray
    mean_concurrence: np.ndarray
    se_concurrence: np.ndarray
    mean_fidelity: np.ndarray
    se_fidelity: np.ndarray
    convergence_fraction: float
    threshold: float
    seeds: list
    final_fidelities: np.ndarray
    max_singlet_population: np.ndarray
    final_R_plateau: np.ndarray
    aborted: list = field(default_factory=list)

    @property
    def n_traj(self) -> int:
        return len(self.final_fidelities)


def _mean_se(stack: np.ndarray):
    mean = stack.mean(axis=0)
    if stack.shape[0] < 2:
        return mean, np.zeros_like(mean)
    return mean, stack.std(axis=0, ddof=1) / np.sqrt(stack.shape[0])


def _worker_count(n_traj: int, n_jobs: int | None) -> int:
    if n_jobs is None:
        env = os.environ.get(WORKERS_ENV)
        n_jobs = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(n_jobs, n_traj))


def _one(model, sde, controller, initial_state, master_seed, index, plateau_steps):
    dW = wiener_increments(trajectory_rng(master_seed, index), sde.dt, sde.n_steps)
    try:
        rec = run_trajectory(
            model, sde, initial_state, controller=controller, seed=(master_seed, index), dW=dW,
            record_increments=False,
        )
    except TrajectoryAbort as exc:
        return index, None, str(exc)
    plateau = float(np.mean(rec.R[-plateau_steps:]))
    return index, (rec.concurrence, rec.fidelity, float(rec.singlet_population.max()), plateau), None


def run_ensemble(
    model: FeedbackModel,
    sde: SdeConfig,
    fb: FeedbackParams,
    n_traj: int,
    master_seed: int,
    initial: str = "product",
    alpha: complex = PAPER_ALPHA,
    threshold: float = 0.99,
    plateau_time: float = 2.0,
    n_jobs: int | None = None,
) -> EnsembleSummary:
    """Run ``n_traj`` closed-loop trajectories and average them pointwise in time.

    Trajectory ``k`` draws its noise from ``trajectory_rng(master_seed, k)``,
    so the summary depends only on the inputs, not on worker scheduling.
    Aborted trajectories are logged with their seed and left out of the
    averages.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    controller = make_controller(model.params, fb, sde.dt, model.layout.fock_dim)
    psi0 = INITIAL_STATES[initial](model.layout, alpha)
    plateau_steps = max(1, int(round(plateau_time / (sde.dt * sde.sample_every))))

    workers = _worker_count(n_traj, n_jobs)
    args = [(model, sde, controller, psi0, master_seed, k, plateau_steps) for k in range(n_traj)]
    if workers == 1:
        results = [_one(*a) for a in args]
    else:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=workers)(delayed(_one)(*a) for a in args)
    results.sort(key=lambda r: r[0])

    aborted = [(master_seed, idx, msg) for idx, res, msg in results if res is None]
    for entry in aborted:
        log.warning("trajectory aborted: %s", entry)
    good = [(idx, res) for idx, res, _ in results if res is not None]
    if not good:
        raise TrajectoryAbort("every trajectory in the ensemble aborted", seed=master_seed)
    conc = np.stack([r[0] for _, r in good])
    fid = np.stack([r[1] for _, r in good])
    mc, sc = _mean_se(conc)
    mf, sf = _mean_se(fid)
    finals = fid[:, -1].copy()
    return EnsembleSummary(
        times=sde.sample_times(),
        mean_concurrence=mc,
        se_concurrence=sc,
        mean_fidelity=mf,
        se_fidelity=sf,
        convergence_fraction=convergence_fraction(finals, threshold),
        threshold=threshold,
        seeds=[[int(master_seed), int(idx)] for idx, _ in good],
        final_fidelities=finals,
        max_singlet_population=np.array([r[2] for _, r in good]),
        final_R_plateau=np.array([r[3] for _, r in good]),
        aborted=aborted,
    )

