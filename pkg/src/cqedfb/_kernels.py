"""Compiled inner loop for homodyne SSE trajectories.

Everything here operates on raw CSR arrays so a whole trajectory runs in
nopython mode. Status codes: 0 ok, 1 norm collapse, 2 non-finite state.
"""
import numpy as np
from numba import njit

OK = 0
NORM_COLLAPSE = 1
NON_FINITE = 2


@njit(cache=True)
def csr_matvec(data, indices, indptr, x, out):
    n = indptr.size - 1
    for i in range(n):
        acc = 0.0 + 0.0j
        for k in range(indptr[i], indptr[i + 1]):
            acc += data[k] * x[indices[k]]
        out[i] = acc


@njit(cache=True)
def sse_trajectory(
    psi0,
    h_data, h_ind, h_ptr,
    a_data, a_ind, a_ptr,
    jx_data, jx_ind, jx_ptr,
    n_diag, jz_diag,
    dW, dt, kappa,
    lam, power, weights, norm_const, clamp,
    sample_every, n_qubit_states, fock_dim,
    record_dI,
):
    """Integrate one trajectory of the feedback SSE with Euler-Maruyama.

    ``weights[j]`` multiplies the increment ``j`` steps in the past (j = 0 is
    the current step). The feedback coefficient computed from step ``k`` is
    applied during step ``k + 1``.

    Returns ``(status, fail_step, psi, dI_record, samples...)``; the sample
    arrays hold the initial state plus one entry every ``sample_every`` steps.
    """
    dim = psi0.size
    n_steps = dW.size
    window = weights.size
    n_samples = n_steps // sample_every + 1

    psi = psi0.copy()
    ahat = np.empty(dim, dtype=np.complex128)
    hpsi = np.empty(dim, dtype=np.complex128)
    jpsi = np.empty(dim, dtype=np.complex128)
    ring = np.zeros(window, dtype=np.float64)
    if record_dI:
        dI_rec = np.empty(n_steps, dtype=np.float64)
    else:
        dI_rec = np.empty(0, dtype=np.float64)

    s_rho = np.empty((n_samples, n_qubit_states, n_qubit_states), dtype=np.complex128)
    s_jz = np.empty(n_samples)
    s_x = np.empty(n_samples)
    s_n = np.empty(n_samples)
    s_R = np.empty(n_samples)
    s_top = np.empty(n_samples)

    sqrt_kappa = np.sqrt(kappa)
    half_kappa = 0.5 * kappa
    fb = 0.0
    R = 0.0
    pos = 0
    sample = 0

    for k in range(n_steps + 1):
        if k % sample_every == 0:
            csr_matvec(a_data, a_ind, a_ptr, psi, ahat)
            ev_a = 0.0 + 0.0j
            jz = 0.0
            nph = 0.0
            top = 0.0
            for i in range(dim):
                p = psi[i].real * psi[i].real + psi[i].imag * psi[i].imag
                ev_a += np.conj(psi[i]) * ahat[i]
                jz += jz_diag[i] * p
                nph += n_diag[i] * p
                if i % fock_dim == fock_dim - 1:
                    top += p
            for q1 in range(n_qubit_states):
                for q2 in range(n_qubit_states):
                    acc = 0.0 + 0.0j
                    for m in range(fock_dim):
                        acc += psi[q1 * fock_dim + m] * np.conj(psi[q2 * fock_dim + m])
                    s_rho[sample, q1, q2] = acc
            s_jz[sample] = jz
            s_x[sample] = 2.0 * ev_a.real
            s_n[sample] = nph
            s_R[sample] = R
            s_top[sample] = top
            sample += 1
        if k == n_steps:
            break

        csr_matvec(a_data, a_ind, a_ptr, psi, ahat)
        ev_a = 0.0 + 0.0j
        for i in range(dim):
            ev_a += np.conj(psi[i]) * ahat[i]
        dI = kappa * 2.0 * ev_a.real * dt + sqrt_kappa * dW[k]

        csr_matvec(h_data, h_ind, h_ptr, psi, hpsi)
        if fb != 0.0:
            csr_matvec(jx_data, jx_ind, jx_ptr, psi, jpsi)
            for i in range(dim):
                hpsi[i] += fb * jpsi[i]
        nrm2 = 0.0
        for i in range(dim):
            v = psi[i] + (-1j * hpsi[i] - half_kappa * n_diag[i] * psi[i]) * dt + dI * ahat[i]
            psi[i] = v
            nrm2 += v.real * v.real + v.imag * v.imag
        if not np.isfinite(nrm2):
            return NON_FINITE, k, psi, dI_rec, s_rho, s_jz, s_x, s_n, s_R, s_top
        nrm = np.sqrt(nrm2)
        if nrm < 1e-12:
            return NORM_COLLAPSE, k, psi, dI_rec, s_rho, s_jz, s_x, s_n, s_R, s_top
        inv = 1.0 / nrm
        for i in range(dim):
            psi[i] *= inv

        if record_dI:
            dI_rec[k] = dI

        # filter: weighted sum over the last `window` increments
        ring[pos] = dI
        acc_r = 0.0
        for j in range(window):
            idx = pos - j
            if idx < 0:
                idx += window
            acc_r += weights[j] * ring[idx]
        pos += 1
        if pos == window:
            pos = 0
        R = acc_r / norm_const
        if clamp:
            if R > 1.0:
                R = 1.0
            elif R < -1.0:
                R = -1.0
        if lam != 0.0:
            fb = lam * R**power
        else:
            fb = 0.0

    return OK, n_steps, psi, dI_rec, s_rho, s_jz, s_x, s_n, s_R, s_top
