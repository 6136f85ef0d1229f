"""Hamiltonian and collapse-operator builders (hbar = 1).

The two-qubit feedback model lives in the interaction picture; constant
energy offsets and the single-qubit ``(omega_a + chi) J_z`` term are dropped
there because they only contribute phases that commute with everything else
in the model.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .hilbert import (
    LayoutError,
    Operator,
    SpaceLayout,
    annihilation,
    collective_ops,
    embed,
    identity,
    number,
    sigmam,
    sigmap,
    sigmaz,
    tensor_product,
)

__all__ = [
    "SystemParams",
    "jaynes_cummings",
    "dispersive_one_qubit",
    "two_qubit_dispersive",
    "driven_hamiltonian",
    "collapse_operator",
    "FeedbackModel",
    "build_feedback_model",
]


@dataclass(frozen=True)
class SystemParams:
    """Physical rates of the qubit-cavity system (angular units, hbar = 1).

    ``chi`` may be given directly or derived from ``g**2 / Delta``; when all
    three are supplied they must agree.
    """

    kappa: float
    omega_r: float = 0.0
    omega_a: float = 0.0
    g: float = 0.0
    chi: float | None = None
    epsilon: float = 0.0
    Delta: float | None = None

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError(f"kappa must be > 0, got {self.kappa}")
        delta = self.Delta
        if delta is None and (self.omega_a or self.omega_r):
            delta = self.omega_a - self.omega_r
            object.__setattr__(self, "Delta", delta)
        if self.chi is None:
            if delta:
                object.__setattr__(self, "chi", self.g**2 / delta)
            else:
                object.__setattr__(self, "chi", 0.0)
        elif self.g and delta:
            expected = self.g**2 / delta
            if abs(self.chi - expected) > 1e-12 * abs(self.chi):
                raise ValueError(f"chi={self.chi} inconsistent with g^2/Delta={expected}")
        if self.g and delta is not None and abs(delta) <= 10 * abs(self.g):
            warnings.warn(
                f"|Delta|={abs(delta)} <= 10 g={10 * abs(self.g)}: dispersive approximation is marginal",
                RuntimeWarning,
                stacklevel=2,
            )


def _one_qubit_layout(N: int) -> SpaceLayout:
    return SpaceLayout((2, N))


def _check_layout(layout: SpaceLayout, n_qubits: int):
    dims = layout.subsystem_dims
    if len(dims) != n_qubits + 1 or any(d != 2 for d in dims[:-1]):
        raise LayoutError(f"expected {n_qubits} qubit(s) + oscillator, got {dims}")


def jaynes_cummings(params: SystemParams, N: int) -> Operator:
    """``omega_r (a^dag a + 1/2) + omega_a/2 sigma_z + g (a^dag sigma^- + a sigma^+)``."""
    layout = _one_qubit_layout(N)
    a = annihilation(N)
    ad = a.conj().T
    h = (
        params.omega_r * tensor_product([identity(2), number(N) + 0.5 * identity(N)]).matrix
        + 0.5 * params.omega_a * tensor_product([sigmaz(), identity(N)]).matrix
        + params.g * (tensor_product([sigmam(), ad]).matrix + tensor_product([sigmap(), a]).matrix)
    )
    return Operator(layout, h, hermitian=True)


def dispersive_one_qubit(params: SystemParams, N: int) -> Operator:
    """``(omega_r + chi sigma_z) a^dag a + (omega_a + chi)/2 sigma_z``; diagonal."""
    layout = _one_qubit_layout(N)
    chi = params.chi
    sz = sigmaz()
    h = tensor_product([params.omega_r * identity(2) + chi * sz, number(N)]).matrix + tensor_product(
        [0.5 * (params.omega_a + chi) * sz, identity(N)]
    ).matrix
    return Operator(layout, h, hermitian=True)


def _exchange(ops: dict[str, Operator]) -> Operator:
    return ops["sp1"] @ ops["sm2"] + ops["sm1"] @ ops["sp2"]


def two_qubit_dispersive(chi: float, N: int) -> Operator:
    """Interaction-picture ``2 chi J_z a^dag a + chi (s1+ s2- + s1- s2+)``."""
    layout = SpaceLayout((2, 2, N))
    ops = collective_ops(layout)
    n_op = embed(number(N), 2, layout)
    h = 2.0 * chi * (ops["Jz"] @ n_op).matrix + chi * _exchange(ops).matrix
    return Operator(layout, h, hermitian=True)


def driven_hamiltonian(params: SystemParams, N: int) -> Operator:
    """``epsilon (a + a^dag) + chi (2 J_z a^dag a + s1+ s2- + s1- s2+)``."""
    layout = SpaceLayout((2, 2, N))
    a = embed(annihilation(N), 2, layout).matrix
    drive = params.epsilon * (a + a.conj().T)
    h = drive + two_qubit_dispersive(params.chi, N).matrix
    return Operator(layout, h, hermitian=True)


def collapse_operator(kappa: float, layout: SpaceLayout) -> Operator:
    """Cavity damping channel ``sqrt(kappa) a`` embedded on the oscillator."""
    if not kappa > 0:
        raise ValueError(f"kappa must be > 0, got {kappa}")
    return embed(np.sqrt(kappa) * annihilation(layout.fock_dim), layout.n_subsystems - 1, layout)


@dataclass(frozen=True)
class FeedbackModel:
    """Operators of the driven, damped two-qubit model, built once and shared."""

    params: SystemParams
    layout: SpaceLayout
    H: Operator
    a: Operator
    L: Operator
    Jz: Operator
    Jx: Operator
    x_quad: Operator
    n_photon: Operator

    @property
    def kappa(self) -> float:
        return self.params.kappa


def build_feedback_model(params: SystemParams, N: int) -> FeedbackModel:
    layout = SpaceLayout((2, 2, N))
    ops = collective_ops(layout)
    a = embed(annihilation(N), 2, layout)
    x = Operator(layout, a.matrix + a.matrix.conj().T, hermitian=True)
    return FeedbackModel(
        params=params,
        layout=layout,
        H=driven_hamiltonian(params, N),
        a=a,
        L=collapse_operator(params.kappa, layout),
        Jz=ops["Jz"],
        Jx=ops["Jx"],
        x_quad=x,
        n_photon=Operator(layout, embed(number(N), 2, layout).matrix, hermitian=True),
    )
