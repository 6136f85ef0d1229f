"""Homodyne stochastic Schroedinger equation and Lindblad master equation.

The SSE is integrated in its linear (unnormalized) form with Euler-Maruyama
and renormalized after every step:

    d|psi> = [-iH - (kappa/2) a^dag a]|psi> dt + dI a|psi> - i F |psi> dt
    dI     = kappa <a + a^dag> dt + sqrt(kappa) dW

where ``F`` is an optional feedback Hamiltonian. The Lindblad solver is a
plain fixed-step RK4 on dense matrices and serves as the ensemble oracle.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .hilbert import DensityMatrix, LayoutError, Operator, StateVector
from .metrics import SINGLET, concurrence, fidelity_phi_plus

__all__ = [
    "SdeConfig",
    "HomodyneRecord",
    "TrajectoryRecord",
    "TrajectoryAbort",
    "trajectory_rng",
    "wiener_increment",
    "wiener_increments",
    "homodyne_increment",
    "sse_step",
    "lindblad_evolve",
    "run_trajectory",
]

log = logging.getLogger(__name__)

TOP_LEVEL_WARN = 1e-4


class TrajectoryAbort(RuntimeError):
    """Numerical blow-up or norm collapse inside a trajectory."""

    def __init__(self, message: str, seed=None, step: int | None = None):
        super().__init__(message)
        self.seed = seed
        self.step = step


@dataclass(frozen=True)
class SdeConfig:
    dt: float = 1e-4
    t_final: float = 10.0
    seed: int = 0
    fock_dim: int = 25
    sample_every: int = 100

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if not self.t_final > 0:
            raise ValueError(f"t_final must be > 0, got {self.t_final}")
        if self.fock_dim < 2:
            raise ValueError(f"fock_dim must be >= 2, got {self.fock_dim}")
        if self.sample_every < 1:
            raise ValueError("sample_every must be >= 1")
        ratio = self.t_final / self.dt
        if abs(ratio - round(ratio)) > 1e-6 * max(1.0, ratio):
            raise ValueError(f"t_final/dt = {ratio} is not an integer number of steps")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    @property
    def n_samples(self) -> int:
        return self.n_steps // self.sample_every + 1

    def sample_times(self) -> np.ndarray:
        return np.arange(self.n_samples) * self.sample_every * self.dt


@dataclass
class HomodyneRecord:
    increments: np.ndarray
    dt: float

    def __len__(self):
        return self.increments.size


@dataclass
class TrajectoryRecord:
    """Observables of one trajectory sampled on ``times``."""

    times: np.ndarray
    jz: np.ndarray
    x_quad: np.ndarray
    n_photon: np.ndarray
    concurrence: np.ndarray
    fidelity: np.ndarray
    singlet_population: np.ndarray
    R: np.ndarray
    top_population: np.ndarray
    final_state: StateVector
    seed: object
    record: HomodyneRecord | None = None
    qubit_rho: np.ndarray | None = field(default=None, repr=False)

    def to_csv(self) -> str:
        from .io import trajectory_csv

        return trajectory_csv(self)


# ---------------------------------------------------------------------------
# noise


def trajectory_rng(master_seed: int, index: int = 0) -> np.random.Generator:
    """Counter-based (Philox) stream keyed by ``(master_seed, index)``.

    Streams do not depend on execution order, so ensembles are reproducible
    however trajectories are scheduled.
    """
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(ss))


def wiener_increment(rng: np.random.Generator, dt: float) -> float:
    return float(rng.normal(0.0, np.sqrt(dt)))


def wiener_increments(rng: np.random.Generator, dt: float, n: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(dt), size=n)


# ---------------------------------------------------------------------------
# single-step reference implementation


def _x_expectation(psi: np.ndarray, a: sp.spmatrix) -> float:
    return 2.0 * float(np.real(np.vdot(psi, a @ psi)))


def homodyne_increment(state: StateVector, kappa: float, dW: float, a: Operator, dt: float) -> float:
    """``kappa <a + a^dag> dt + sqrt(kappa) dW`` in the (normalized) state."""
    if abs(state.norm() - 1.0) > 1e-6:
        raise ValueError(f"state not normalized (norm={state.norm():.8f})")
    return kappa * _x_expectation(state.amplitudes, a.matrix) * dt + np.sqrt(kappa) * dW


def sse_step(
    state: StateVector,
    H: Operator,
    kappa: float,
    dt: float,
    dW: float,
    a: Operator,
    feedback_term: Operator | None = None,
) -> tuple[StateVector, float]:
    """One Euler-Maruyama step of the linear SSE, then renormalization.

    Returns the new (normalized) state and the homodyne increment used.
    This is the readable reference; long runs go through the compiled kernel
    in ``run_trajectory``.
    """
    if state.layout != H.layout or a.layout != H.layout:
        raise LayoutError("state/operator layout mismatch")
    psi = state.amplitudes
    dI = homodyne_increment(state, kappa, dW, a, dt)
    am = a.matrix
    apsi = am @ psi
    npsi = am.conj().T @ apsi
    gen = H.matrix if feedback_term is None else H.matrix + feedback_term.matrix
    new = psi + (-1j * (gen @ psi) - 0.5 * kappa * npsi) * dt + dI * apsi
    nrm = np.linalg.norm(new)
    if not np.isfinite(nrm) or nrm < 1e-12:
        raise TrajectoryAbort(f"state norm collapsed to {nrm!r}")
    return StateVector(state.layout, new / nrm), dI


# ---------------------------------------------------------------------------
# master equation oracle


def _as_dense(op) -> np.ndarray:
    if op is None:
        return None
    if isinstance(op, Operator):
        return op.toarray()
    if sp.issparse(op):
        return op.toarray()
    return np.asarray(op, dtype=np.complex128)


def lindblad_evolve(
    H: Operator,
    L,
    rho0,
    t_final: float,
    dt: float,
    checkpoints=None,
    trace_tol: float = 1e-6,
):
    """Fixed-step RK4 integration of ``-i[H, rho] + sum_k D[L_k] rho``.

    ``L`` is one collapse operator, a list of them, or ``None``. With
    ``checkpoints`` (times, rounded to the step grid) a list of density
    matrices at those times is returned instead of only the final state.
    """
    h = _as_dense(H)
    if L is None:
        Ls = []
    elif isinstance(L, (list, tuple)):
        Ls = [_as_dense(x) for x in L]
    else:
        Ls = [_as_dense(L)]
    layout = getattr(rho0, "layout", getattr(H, "layout", None))
    rho = np.array(getattr(rho0, "entries", rho0), dtype=np.complex128)
    if rho.shape != h.shape:
        raise LayoutError(f"rho0 shape {rho.shape} does not match H {h.shape}")
    if abs(np.trace(rho) - 1.0) > 1e-10:
        raise ValueError("rho0 must have unit trace")

    heff = h - 0.5j * sum((l.conj().T @ l for l in Ls), np.zeros_like(h))
    heff_dag = heff.conj().T
    l_dags = [l.conj().T for l in Ls]

    def rhs(r):
        out = -1j * (heff @ r - r @ heff_dag)
        for l, ld in zip(Ls, l_dags):
            out += l @ r @ ld
        return out

    n_steps = int(round(t_final / dt))
    if abs(n_steps * dt - t_final) > 1e-9 * max(1.0, t_final):
        raise ValueError("t_final must be an integer multiple of dt")
    want = set() if checkpoints is None else {int(round(t / dt)) for t in checkpoints}
    snaps = {}
    if 0 in want:
        snaps[0] = rho.copy()
    for k in range(1, n_steps + 1):
        k1 = rhs(rho)
        k2 = rhs(rho + 0.5 * dt * k1)
        k3 = rhs(rho + 0.5 * dt * k2)
        k4 = rhs(rho + dt * k3)
        rho = rho + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if k in want:
            snaps[k] = rho.copy()
    drift = abs(np.trace(rho) - 1.0)
    if not drift <= trace_tol:
        raise ValueError(f"trace drift {drift:.2e} exceeds {trace_tol:.0e}; reduce dt")

    def wrap(m):
        return DensityMatrix(layout, m) if layout is not None else m

    if checkpoints is None:
        return wrap(rho)
    return [wrap(snaps[int(round(t / dt))]) for t in checkpoints]


# ---------------------------------------------------------------------------
# trajectories


def _csr_parts(m: sp.spmatrix):
    m = sp.csr_matrix(m, dtype=np.complex128)
    m.sort_indices()
    return (
        np.ascontiguousarray(m.data),
        np.ascontiguousarray(m.indices.astype(np.int64)),
        np.ascontiguousarray(m.indptr.astype(np.int64)),
    )


def _score_qubits(rho_q: np.ndarray):
    """Concurrence, fidelity and singlet population for each 4x4 sample."""
    conc = np.empty(len(rho_q))
    fid = np.empty(len(rho_q))
    for i, r in enumerate(rho_q):
        r = 0.5 * (r + r.conj().T)
        r = r / np.trace(r).real
        conc[i] = concurrence(r)
        fid[i] = fidelity_phi_plus(r)
    sing = np.real(np.einsum("i,sij,j->s", SINGLET.conj(), rho_q, SINGLET))
    return conc, fid, sing


@dataclass(frozen=True)
class _Controller:
    lam: float
    power: int
    weights: np.ndarray
    norm_const: float
    clamp: bool


def run_trajectory(
    model,
    config: SdeConfig,
    initial_state: StateVector,
    controller=None,
    seed=None,
    dW: np.ndarray | None = None,
    record_increments: bool = True,
) -> TrajectoryRecord:
    """Integrate one homodyne trajectory of ``model`` (a ``FeedbackModel``).

    ``controller`` is anything exposing ``lam``, ``power``, ``weights``,
    ``norm_const`` and ``clamp`` (see ``feedback.Controller``); ``None`` runs
    open loop. Noise comes from ``trajectory_rng(seed)`` unless an explicit
    ``dW`` array is passed. Results are bit-reproducible for a given seed.
    """
    layout = model.layout
    if initial_state.layout != layout:
        raise LayoutError("initial state does not match model layout")
    if layout.fock_dim != config.fock_dim:
        raise LayoutError(f"model Fock dimension {layout.fock_dim} != config.fock_dim {config.fock_dim}")
    seed = config.seed if seed is None else seed
    if dW is None:
        key = seed if isinstance(seed, tuple) else (seed, 0)
        dW = wiener_increments(trajectory_rng(*key), config.dt, config.n_steps)
    dW = np.ascontiguousarray(dW, dtype=np.float64)
    if dW.size != config.n_steps:
        raise ValueError(f"need {config.n_steps} noise increments, got {dW.size}")

    if controller is None:
        controller = _Controller(0.0, 1, np.ones(1), 1.0, False)

    psi0 = np.ascontiguousarray(initial_state.amplitudes, dtype=np.complex128)
    psi0 = psi0 / np.linalg.norm(psi0)
    n_diag = np.ascontiguousarray(model.n_photon.matrix.diagonal().real)
    jz_diag = np.ascontiguousarray(model.Jz.matrix.diagonal().real)
    n_q = layout.total_dim // layout.fock_dim

    status, step, psi, dI, s_rho, s_jz, s_x, s_n, s_R, s_top = _kernels.sse_trajectory(
        psi0,
        *_csr_parts(model.H.matrix),
        *_csr_parts(model.a.matrix),
        *_csr_parts(model.Jx.matrix),
        n_diag,
        jz_diag,
        dW,
        float(config.dt),
        float(model.kappa),
        float(controller.lam),
        int(controller.power),
        np.ascontiguousarray(controller.weights, dtype=np.float64),
        float(controller.norm_const),
        bool(controller.clamp),
        int(config.sample_every),
        int(n_q),
        int(layout.fock_dim),
        bool(record_increments),
    )
    if status != _kernels.OK:
        kind = "norm collapse" if status == _kernels.NORM_COLLAPSE else "non-finite state"
        raise TrajectoryAbort(f"{kind} at step {step} (seed {seed})", seed=seed, step=int(step))

    # the initial state is the caller's choice; only flag what the dynamics reach
    top = float(s_top[1:].max()) if s_top.size > 1 else 0.0
    if top > TOP_LEVEL_WARN:
        warnings.warn(
            f"top Fock level population reached {top:.2e} (N={layout.fock_dim}); truncation may be too small",
            RuntimeWarning,
            stacklevel=2,
        )
    conc, fid, sing = _score_qubits(s_rho)
    return TrajectoryRecord(
        times=config.sample_times(),
        jz=s_jz,
        x_quad=s_x,
        n_photon=s_n,
        concurrence=conc,
        fidelity=fid,
        singlet_population=sing,
        R=s_R,
        top_population=s_top,
        final_state=StateVector(layout, psi),
        seed=seed,
        record=HomodyneRecord(dI, config.dt) if record_increments else None,
        qubit_rho=s_rho,
    )


def ensemble_density(
    model,
    config: SdeConfig,
    initial_state: StateVector,
    n_traj: int,
    master_seed: int,
    checkpoints,
) -> list[np.ndarray]:
    """Open-loop average of ``|psi><psi|`` over ``n_traj`` trajectories.

    Each trajectory is integrated segment by segment between checkpoints with
    its own contiguous noise stream, which is identical to one uninterrupted
    run because the open-loop kernel carries no state besides ``psi``.
    """
    steps = [int(round(t / config.dt)) for t in checkpoints]
    if any(s < 0 or s > config.n_steps for s in steps) or steps != sorted(steps):
        raise ValueError("checkpoints must be sorted and lie within [0, t_final]")
    dim = model.layout.total_dim
    acc = [np.zeros((dim, dim), dtype=np.complex128) for _ in steps]
    for k in range(n_traj):
        dW = wiener_increments(trajectory_rng(master_seed, k), config.dt, config.n_steps)
        psi = initial_state.copy().normalize()
        done = 0
        for i, s in enumerate(steps):
            if s > done:
                seg = SdeConfig(config.dt, (s - done) * config.dt, config.seed, config.fock_dim, s - done)
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    rec = run_trajectory(model, seg, psi, seed=(master_seed, k), dW=dW[done:s], record_increments=False)
                psi = rec.final_state
                done = s
            v = psi.amplitudes
            acc[i] += np.outer(v, v.conj())
    return [m / n_traj for m in acc]
