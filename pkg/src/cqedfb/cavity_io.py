"""Input-output response of a dispersively pulled, two-sided cavity."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hilbert import SpaceLayout, StateVector, annihilation, basis_state, embed
from .models import SystemParams, dispersive_one_qubit
from .stochastic import lindblad_evolve

__all__ = [
    "CavityResponse",
    "transmission",
    "phase_shift",
    "steady_state_field",
    "hybrid_ports",
    "transmission_curve",
]


@dataclass(frozen=True)
class CavityResponse:
    kappa: float
    omega_r: float = 0.0
    chi: float = 0.0

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError(f"kappa must be > 0, got {self.kappa}")

    @classmethod
    def from_params(cls, params: SystemParams) -> "CavityResponse":
        return cls(params.kappa, params.omega_r, params.chi)


def transmission(omega, qubit_sign: int, resp: CavityResponse):
    """Coefficient of ``b_in`` in ``a_out``: ``kappa / (kappa + i(omega_r - omega + chi s))``.

    The vacuum ``a_in`` term is dropped since it does not contribute to
    normally ordered moments. Vectorizes over ``omega``.
    """
    _check_sign(qubit_sign)
    omega = np.asarray(omega, dtype=float)
    out = np.asarray(resp.kappa / (resp.kappa + 1j * (resp.omega_r - omega + resp.chi * qubit_sign)))
    return complex(out) if out.ndim == 0 else out


def phase_shift(qubit_sign: int, g: float, Delta: float, kappa: float) -> float:
    """``atan(-s g^2 / (kappa Delta))``: equal and opposite for the two qubit states."""
    _check_sign(qubit_sign)
    if Delta == 0:
        raise ValueError("Delta must be nonzero (dispersive regime)")
    if not kappa > 0:
        raise ValueError(f"kappa must be > 0, got {kappa}")
    return float(np.arctan(-qubit_sign * g**2 / (kappa * Delta)))


def transmission_curve(resp: CavityResponse, qubit_sign: int, omegas) -> np.ndarray:
    """Rows of ``(omega, re, im, abs, arg)`` for CSV output."""
    t = np.atleast_1d(transmission(omegas, qubit_sign, resp))
    w = np.atleast_1d(np.asarray(omegas, dtype=float))
    return np.column_stack([w, t.real, t.imag, np.abs(t), np.angle(t)])


def steady_state_field(
    params: SystemParams,
    qubit_sign: int,
    N: int = 12,
    settle_widths: float = 25.0,
    tol: float = 1e-9,
) -> complex:
    """Steady ``<a>`` of the driven two-sided cavity with the qubit in a sigma_z eigenstate.

    Integrates the master equation of the one-qubit dispersive model in the
    frame of a drive at ``omega_r``. The cavity leaks through two ports at
    rate ``kappa`` each, so the field amplitude relaxes at ``kappa`` and the
    result is ``-i eps / (kappa + i chi s)``: its argument equals
    ``phase_shift`` offset by ``-pi/2``.

    Raises ``RuntimeError`` if ``<a>`` is still moving by more than ``tol``
    (relative) over the final tenth of the integration window.
    """
    _check_sign(qubit_sign)
    layout = SpaceLayout((2, N))
    # rotating at the drive for the cavity and at omega_a + chi for the qubit;
    # the qubit sits in a sigma_z eigenstate so only the pull chi sigma_z a^dag a matters
    frame = SystemParams(kappa=params.kappa, omega_a=-params.chi, chi=params.chi)
    a = embed(annihilation(N), 1, layout)
    eps = params.epsilon if params.epsilon else 0.5 * params.kappa
    H = dispersive_one_qubit(frame, N) + (a + a.dag()) * eps
    L = a * np.sqrt(2.0 * params.kappa)
    psi0: StateVector = basis_state(layout, (0 if qubit_sign > 0 else 1, 0))

    t_final = settle_widths / params.kappa
    rate = abs(eps) * np.sqrt(N) * 2 + abs(params.chi) * N + params.kappa * N
    n_steps = max(4000, int(np.ceil(t_final * rate / 0.2)))
    dt = t_final / n_steps
    late = round(0.9 * n_steps) * dt
    rho_late, rho_end = lindblad_evolve(H, L, psi0.to_density(), t_final, dt, checkpoints=[late, t_final])
    am = a.toarray()
    f_late = complex(np.trace(am @ rho_late.entries))
    f_end = complex(np.trace(am @ rho_end.entries))
    if abs(f_end - f_late) > tol * max(1.0, abs(f_end)):
        raise RuntimeError(f"steady state not reached: <a> moved by {abs(f_end - f_late):.2e} in the last window")
    return f_end


def hybrid_ports(v1: complex, v2: complex) -> tuple[complex, complex]:
    """Lossless hybrid: ``((v1 + v2)/sqrt 2, (v1 - v2)/sqrt 2)``."""
    s = 1.0 / np.sqrt(2.0)
    return (v1 + v2) * s, (v1 - v2) * s


def _check_sign(qubit_sign):
    if qubit_sign not in (1, -1):
        raise ValueError(f"qubit_sign must be +1 or -1, got {qubit_sign}")
