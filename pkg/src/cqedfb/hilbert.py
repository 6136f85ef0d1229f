"""State and operator algebra on small composite Hilbert spaces.

Conventions used throughout the package:

* ``|0>`` is the +1 eigenstate of sigma_z, so ``sigma_z = diag(+1, -1)``.
* Composite indices are row-major with the oscillator subsystem last, i.e.
  the basis state ``|q1, q2, n>`` sits at ``(q1 * 2 + q2) * N + n``.
* Operators are stored sparse (CSR), states dense.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import reduce
from math import prod
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln

__all__ = [
    "SpaceLayout",
    "Operator",
    "StateVector",
    "DensityMatrix",
    "identity",
    "annihilation",
    "creation",
    "number",
    "sigmaz",
    "sigmax",
    "sigmay",
    "sigmap",
    "sigmam",
    "tensor_product",
    "embed",
    "collective_ops",
    "basis_state",
    "coherent_amplitudes",
    "product_state",
    "partial_trace",
    "expectation",
]

HERMITIAN_TOL = 1e-12
NORM_TOL = 1e-12


class LayoutError(ValueError):
    """Raised when an operator or state does not fit a space layout."""


@dataclass(frozen=True)
class SpaceLayout:
    """Ordered subsystem dimensions; qubits first, oscillator last."""

    subsystem_dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.subsystem_dims)
        if not dims:
            raise LayoutError("layout needs at least one subsystem")
        if any(d < 2 for d in dims):
            raise LayoutError(f"every subsystem dimension must be >= 2, got {dims}")
        object.__setattr__(self, "subsystem_dims", dims)

    @classmethod
    def qubits_and_oscillator(cls, n_qubits: int, fock_dim: int) -> "SpaceLayout":
        return cls((2,) * n_qubits + (fock_dim,))

    @property
    def total_dim(self) -> int:
        return prod(self.subsystem_dims)

    @property
    def n_subsystems(self) -> int:
        return len(self.subsystem_dims)

    @property
    def fock_dim(self) -> int:
        return self.subsystem_dims[-1]

    @property
    def n_qubits(self) -> int:
        return sum(1 for d in self.subsystem_dims[:-1] if d == 2)


@dataclass(frozen=True, eq=False)
class Operator:
    """Sparse complex matrix acting on a ``SpaceLayout``.

    Instances are immutable and may be shared between trajectory workers.
    Passing ``hermitian=True`` checks ``max|M - M^dagger|`` at construction.
    """

    layout: SpaceLayout
    matrix: sp.csr_matrix
    hermitian: bool = False

    def __post_init__(self):
        m = sp.csr_matrix(self.matrix, dtype=np.complex128)
        m.sum_duplicates()
        m.eliminate_zeros()
        n = self.layout.total_dim
        if m.shape != (n, n):
            raise LayoutError(f"operator shape {m.shape} does not match layout dimension {n}")
        object.__setattr__(self, "matrix", m)
        if self.hermitian:
            resid = hermiticity_residue(m)
            if resid > HERMITIAN_TOL:
                raise ValueError(f"operator flagged Hermitian but max|M - M^dag| = {resid:.3e}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def dag(self) -> "Operator":
        return Operator(self.layout, self.matrix.conj().T.tocsr(), self.hermitian)

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def _check(self, other: "Operator"):
        if other.layout != self.layout:
            raise LayoutError(f"layout mismatch: {self.layout} vs {other.layout}")

    def __add__(self, other: "Operator") -> "Operator":
        self._check(other)
        return Operator(self.layout, self.matrix + other.matrix, self.hermitian and other.hermitian)

    def __sub__(self, other: "Operator") -> "Operator":
        self._check(other)
        return Operator(self.layout, self.matrix - other.matrix, self.hermitian and other.hermitian)

    def __neg__(self) -> "Operator":
        return Operator(self.layout, -self.matrix, self.hermitian)

    def __mul__(self, scalar) -> "Operator":
        scalar = complex(scalar)
        keep = self.hermitian and scalar.imag == 0.0
        return Operator(self.layout, self.matrix * scalar, keep)

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, Operator):
            self._check(other)
            return Operator(self.layout, self.matrix @ other.matrix)
        if isinstance(other, StateVector):
            if other.layout != self.layout:
                raise LayoutError("state/operator layout mismatch")
            return StateVector(self.layout, self.matrix @ other.amplitudes)
        return self.matrix @ other

    def commutator(self, other: "Operator") -> "Operator":
        return self @ other - other @ self


@dataclass(eq=False)
class StateVector:
    """Dense amplitude vector; single-owner and mutable."""

    layout: SpaceLayout
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.amplitudes = np.ascontiguousarray(self.amplitudes, dtype=np.complex128).ravel()
        if self.amplitudes.size != self.layout.total_dim:
            raise LayoutError(
                f"state length {self.amplitudes.size} does not match layout dimension {self.layout.total_dim}"
            )

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalize(self) -> "StateVector":
        nrm = self.norm()
        if nrm < NORM_TOL:
            raise ValueError("cannot normalize a (numerically) zero state")
        self.amplitudes /= nrm
        return self

    def copy(self) -> "StateVector":
        return StateVector(self.layout, self.amplitudes.copy())

    def to_density(self) -> "DensityMatrix":
        return DensityMatrix(self.layout, np.outer(self.amplitudes, self.amplitudes.conj()))


@dataclass(eq=False)
class DensityMatrix:
    layout: SpaceLayout
    entries: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.complex128)
        n = self.layout.total_dim
        if self.entries.shape != (n, n):
            raise LayoutError(f"density matrix shape {self.entries.shape} != ({n}, {n})")

    def trace(self) -> complex:
        return complex(np.trace(self.entries))

    def purity(self) -> float:
        return float(np.real(np.vdot(self.entries, self.entries)))

    def validate(self, tol: float = 1e-10) -> "DensityMatrix":
        """Check Hermiticity, unit trace and positivity to ``tol``."""
        m = self.entries
        if np.max(np.abs(m - m.conj().T), initial=0.0) > tol:
            raise ValueError("density matrix is not Hermitian")
        if abs(np.trace(m) - 1.0) > tol:
            raise ValueError(f"density matrix trace {np.trace(m):.3e} != 1")
        if np.linalg.eigvalsh(0.5 * (m + m.conj().T)).min() < -tol:
            raise ValueError("density matrix has negative eigenvalues")
        return self


def hermiticity_residue(m) -> float:
    diff = (m - m.conj().T)
    if sp.issparse(diff):
        return float(np.max(np.abs(diff.data), initial=0.0))
    return float(np.max(np.abs(diff), initial=0.0))


# ---------------------------------------------------------------------------
# single-subsystem building blocks (plain sparse matrices)


def identity(n: int) -> sp.csr_matrix:
    return sp.identity(n, dtype=np.complex128, format="csr")


def annihilation(n: int) -> sp.csr_matrix:
    """Truncated ladder operator with ``<k-1|a|k> = sqrt(k)``."""
    if n < 2:
        raise ValueError(f"Fock dimension must be >= 2, got {n}")
    return sp.diags(np.sqrt(np.arange(1, n, dtype=float)), offsets=1, shape=(n, n), format="csr", dtype=np.complex128)


def creation(n: int) -> sp.csr_matrix:
    return annihilation(n).conj().T.tocsr()


def number(n: int) -> sp.csr_matrix:
    if n < 2:
        raise ValueError(f"Fock dimension must be >= 2, got {n}")
    return sp.diags(np.arange(n, dtype=float), format="csr", dtype=np.complex128)


def sigmaz() -> sp.csr_matrix:
    return sp.csr_matrix(np.diag([1.0, -1.0]).astype(np.complex128))


def sigmax() -> sp.csr_matrix:
    return sp.csr_matrix(np.array([[0, 1], [1, 0]], dtype=np.complex128))


def sigmay() -> sp.csr_matrix:
    return sp.csr_matrix(np.array([[0, -1j], [1j, 0]], dtype=np.complex128))


def sigmap() -> sp.csr_matrix:
    # raising takes |1> (sigma_z = -1) to |0> (sigma_z = +1)
    return sp.csr_matrix(np.array([[0, 1], [0, 0]], dtype=np.complex128))


def sigmam() -> sp.csr_matrix:
    return sp.csr_matrix(np.array([[0, 0], [1, 0]], dtype=np.complex128))


# ---------------------------------------------------------------------------
# composite-space construction


def tensor_product(ops: Sequence, layout: SpaceLayout | None = None) -> Operator:
    """Kronecker product of one factor per subsystem, in layout order.

    Factors may be sparse/dense matrices or ``Operator`` instances (in which
    case their full matrices are used and the result layout concatenates the
    factor layouts).
    """
    mats, dims = [], []
    for op in ops:
        if isinstance(op, Operator):
            mats.append(op.matrix)
            dims.extend(op.layout.subsystem_dims)
        else:
            m = sp.csr_matrix(op, dtype=np.complex128)
            if m.shape[0] != m.shape[1]:
                raise LayoutError(f"factor is not square: {m.shape}")
            mats.append(m)
            dims.append(m.shape[0])
    if not mats:
        raise LayoutError("tensor_product needs at least one factor")
    if layout is None:
        layout = SpaceLayout(tuple(dims))
    elif tuple(dims) != layout.subsystem_dims:
        raise LayoutError(f"factor dimensions {tuple(dims)} do not match layout {layout.subsystem_dims}")
    out = reduce(lambda x, y: sp.kron(x, y, format="csr"), mats)
    return Operator(layout, out)


def embed(op, index: int, layout: SpaceLayout) -> Operator:
    """Place a single-subsystem operator at ``index`` with identities elsewhere."""
    if not 0 <= index < layout.n_subsystems:
        raise LayoutError(f"subsystem index {index} out of range for {layout}")
    factors = [identity(d) for d in layout.subsystem_dims]
    m = sp.csr_matrix(op, dtype=np.complex128)
    if m.shape != (layout.subsystem_dims[index],) * 2:
        raise LayoutError(f"operator shape {m.shape} does not fit subsystem {index} of {layout}")
    factors[index] = m
    return tensor_product(factors, layout)


def _require_two_qubits(layout: SpaceLayout):
    dims = layout.subsystem_dims
    if len(dims) != 3 or dims[0] != 2 or dims[1] != 2:
        raise LayoutError(f"expected a qubit x qubit x oscillator layout, got {dims}")


def collective_ops(layout: SpaceLayout) -> dict[str, Operator]:
    """Collective spin and per-qubit ladder operators for two qubits.

    Returns a dict with keys ``Jz``, ``Jx``, ``sz1``, ``sz2``, ``sp1``,
    ``sm1``, ``sp2``, ``sm2``, all embedded on the full space.
    """
    _require_two_qubits(layout)
    sz1 = embed(sigmaz(), 0, layout)
    sz2 = embed(sigmaz(), 1, layout)
    sx1 = embed(sigmax(), 0, layout)
    sx2 = embed(sigmax(), 1, layout)
    return {
        "Jz": Operator(layout, 0.5 * (sz1.matrix + sz2.matrix), hermitian=True),
        "Jx": Operator(layout, 0.5 * (sx1.matrix + sx2.matrix), hermitian=True),
        "sz1": sz1,
        "sz2": sz2,
        "sp1": embed(sigmap(), 0, layout),
        "sm1": embed(sigmam(), 0, layout),
        "sp2": embed(sigmap(), 1, layout),
        "sm2": embed(sigmam(), 1, layout),
    }


# ---------------------------------------------------------------------------
# states


def basis_state(layout: SpaceLayout, indices: Iterable[int]) -> StateVector:
    idx = tuple(indices)
    if len(idx) != layout.n_subsystems:
        raise LayoutError(f"need {layout.n_subsystems} indices, got {len(idx)}")
    flat = np.ravel_multi_index(idx, layout.subsystem_dims)
    amps = np.zeros(layout.total_dim, dtype=np.complex128)
    amps[flat] = 1.0
    return StateVector(layout, amps)


def coherent_amplitudes(alpha: complex, n: int, warn_tol: float = 1e-6) -> np.ndarray:
    """Fock amplitudes ``exp(-|alpha|^2/2) alpha^k / sqrt(k!)``, renormalized.

    Warns when the top retained level carries more than ``warn_tol`` of the
    norm, which signals that the truncation is too small for ``alpha``.
    """
    amps = np.zeros(n, dtype=np.complex128)
    if alpha == 0:
        amps[0] = 1.0
        return amps
    k = np.arange(n)
    # log-space keeps k! finite for large k
    logmag = k * np.log(abs(alpha)) - 0.5 * gammaln(k + 1) - 0.5 * abs(alpha) ** 2
    amps[:] = np.exp(logmag + 1j * k * np.angle(alpha))
    top = abs(amps[-1]) ** 2 / np.sum(np.abs(amps) ** 2)
    if top > warn_tol:
        warnings.warn(
            f"coherent state alpha={alpha} truncated at N={n}: top-level population {top:.2e}",
            RuntimeWarning,
            stacklevel=2,
        )
    return amps / np.linalg.norm(amps)


def product_state(layout: SpaceLayout, factors: Sequence[np.ndarray]) -> StateVector:
    if len(factors) != layout.n_subsystems:
        raise LayoutError("one factor per subsystem required")
    vec = reduce(np.kron, [np.asarray(f, dtype=np.complex128) for f in factors])
    return StateVector(layout, vec)


# ---------------------------------------------------------------------------
# reductions and expectations


def partial_trace(state, keep: Iterable[int]) -> DensityMatrix:
    """Reduced density matrix on the subsystems listed in ``keep``.

    ``state`` may be a ``StateVector`` or a ``DensityMatrix``. Kept subsystems
    retain their layout order. Keeping nothing returns the 1x1 trace wrapped
    in a plain ndarray.
    """
    layout = state.layout
    dims = layout.subsystem_dims
    keep = sorted(set(int(k) for k in keep))
    if any(not 0 <= k < len(dims) for k in keep):
        raise LayoutError(f"invalid subsystem indices {keep} for {dims}")
    traced = [i for i in range(len(dims)) if i not in keep]
    dk = prod(dims[k] for k in keep) if keep else 1

    if isinstance(state, StateVector):
        psi = state.amplitudes.reshape(dims)
        psi = np.transpose(psi, keep + traced).reshape(dk, -1)
        rho = psi @ psi.conj().T
    else:
        n = len(dims)
        rho_t = state.entries.reshape(dims + dims)
        # trace pairs (i, i + n) for traced subsystems
        row = list(range(n))
        col = list(range(n, 2 * n))
        for i in traced:
            col[i] = row[i]
        out = [row[k] for k in keep] + [col[k] for k in keep]
        rho = np.einsum(rho_t, row + col, out).reshape(dk, dk)
    if not keep:
        return rho
    return DensityMatrix(SpaceLayout(tuple(dims[k] for k in keep)), rho)


def expectation(state: StateVector, op: Operator):
    """``<psi|M|psi>``; real for Hermitian-flagged operators."""
    if op.layout != state.layout:
        raise LayoutError("state/operator layout mismatch")
    val = complex(np.vdot(state.amplitudes, op.matrix @ state.amplitudes))
    if op.hermitian:
        scale = max(1.0, abs(val.real))
        if abs(val.imag) > 1e-10 * scale:
            raise ValueError(f"Hermitian expectation has imaginary residue {val.imag:.3e}")
        return val.real
    return val
