"""Two-qubit entanglement and target-state fidelity."""
from __future__ import annotations

import numpy as np

__all__ = [
    "PHI_PLUS",
    "SINGLET",
    "validate_two_qubit",
    "concurrence",
    "fidelity_phi_plus",
    "convergence_fraction",
    "pure_state_concurrence",
]

# (|01> + |10>)/sqrt(2) in the |q1 q2> basis ordering 00, 01, 10, 11
PHI_PLUS = np.array([0.0, 1.0, 1.0, 0.0], dtype=np.complex128) / np.sqrt(2.0)
SINGLET = np.array([0.0, 1.0, -1.0, 0.0], dtype=np.complex128) / np.sqrt(2.0)

_SYSY = np.kron(np.array([[0, -1j], [1j, 0]]), np.array([[0, -1j], [1j, 0]]))


def validate_two_qubit(rho, tol: float = 1e-10, psd_tol: float = 1e-9) -> np.ndarray:
    """Return ``rho`` Hermitized as a 4x4 array, or raise ``ValueError``."""
    rho = np.asarray(getattr(rho, "entries", rho), dtype=np.complex128)
    if rho.shape != (4, 4):
        raise ValueError(f"expected a 4x4 density matrix, got shape {rho.shape}")
    if np.max(np.abs(rho - rho.conj().T)) > tol:
        raise ValueError("density matrix is not Hermitian")
    rho = 0.5 * (rho + rho.conj().T)
    if abs(np.trace(rho).real - 1.0) > tol:
        raise ValueError(f"density matrix trace is {np.trace(rho).real!r}, expected 1")
    if np.linalg.eigvalsh(rho)[0] < -psd_tol:
        raise ValueError("density matrix is not positive semidefinite")
    return rho


def concurrence(rho) -> float:
    """Wootters concurrence of a two-qubit density matrix.

    The square roots of the eigenvalues of ``rho (sy x sy) rho* (sy x sy)``
    are the eigenvalues of ``sqrt(sqrt(rho) rho_tilde sqrt(rho))``. They are
    taken as the singular values of ``sqrt(rho) sqrt(rho_tilde)``, which
    avoids square roots of round-off sized eigenvalues.
    """
    rho = validate_two_qubit(rho)
    w, v = np.linalg.eigh(rho)
    # eigenvalues at round-off level are indistinguishable from zero
    w = np.where(w > 16 * np.finfo(float).eps * max(1.0, w[-1]), w, 0.0)
    sqrt_rho = (v * np.sqrt(w)) @ v.conj().T
    sqrt_tilde = _SYSY @ sqrt_rho.conj() @ _SYSY
    lam = np.linalg.svd(sqrt_rho @ sqrt_tilde, compute_uv=False)
    return float(min(1.0, max(0.0, lam[0] - lam[1] - lam[2] - lam[3])))


def fidelity_phi_plus(rho) -> float:
    """Overlap ``<phi+|rho|phi+>`` with ``phi+ = (|01> + |10>)/sqrt(2)``."""
    rho = validate_two_qubit(rho)
    f = np.real(PHI_PLUS.conj() @ rho @ PHI_PLUS)
    return float(min(1.0, max(0.0, f)))


def convergence_fraction(final_fidelities, threshold: float = 0.99) -> float:
    fids = np.asarray(final_fidelities, dtype=float)
    if fids.size == 0:
        raise ValueError("empty ensemble")
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    return float(np.mean(fids > threshold))


def pure_state_concurrence(amps) -> float:
    """``2|ad - bc|`` for a normalized pure state ``a|00> + b|01> + c|10> + d|11>``."""
    a, b, c, d = np.asarray(amps, dtype=np.complex128)
    return float(2.0 * abs(a * d - b * c))
