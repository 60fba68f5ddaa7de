"""Inner-loop kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``AFDM_ISAC_NUMBA`` is not set to ``0``/``false``/``off``.  Both
paths are always importable as ``*_numpy`` / ``*_numba`` so the benchmark
and the tests can compare them directly.
"""

import os

import numpy as np

_FLAG = os.environ.get("AFDM_ISAC_NUMBA", "1").strip().lower()

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and _FLAG not in ("0", "false", "off", "no")


# ---------------------------------------------------------------- numpy path


def column_inner_real_numpy(X, Y):
    """Re(x_j^H y_j) for every column pair."""
    return np.einsum("ij,ij->j", X.conj(), Y).real


def echo_time_domain_numpy(s_cpp, n_cpp, ells, f_norms, gains):
    L = s_cpp.shape[0]
    n = np.arange(L) - n_cpp
    r = np.zeros(L, dtype=np.complex128)
    for ell, f, g in zip(ells, f_norms, gains):
        m = n - ell
        valid = m >= -n_cpp
        r[valid] += g * np.exp(-2j * np.pi * f * m[valid]) * s_cpp[m[valid] + n_cpp]
    return r


def kappa_sweep_numpy(Xi, eta, kappa, half_width, gauss_seidel):
    P = eta.shape[0]
    old = kappa.copy()
    new = kappa.copy()
    skipped = np.zeros(P, dtype=np.bool_)
    for j in range(P):
        if Xi[j, j] == 0.0:
            skipped[j] = True
            continue
        ref = new if gauss_seidel else old
        off = Xi[j] @ ref - Xi[j, j] * ref[j]
        new[j] = min(max((eta[j] - off) / Xi[j, j], -half_width), half_width)
    return new, skipped


def delta_update_numpy(second_moment, b, floor):
    # (sqrt(1 + 4bx) - 1) / 2b rewritten to avoid cancellation for small bx
    delta = 2.0 * second_moment / (np.sqrt(1.0 + 4.0 * b * second_moment) + 1.0)
    return np.maximum(delta, floor)


def lagged_gram_numpy(s, ells, g):
    """sum_l s[n-l] conj(s[m-l]) g[l, n-m+N-1] over the delay rows (cyclic shifts)."""
    N = s.shape[0]
    n = np.arange(N)
    lag = n[:, None] - n[None, :] + N - 1
    out = np.zeros((N, N), dtype=np.complex128)
    for row, ell in enumerate(ells):
        sh = s[(n - ell) % N]
        out += np.outer(sh, sh.conj()) * g[row][lag]
    return out


def lagged_quadratic_numpy(s, ells, R):
    """h[l, d] = sum_{n-m=d-N+1} conj(s[n-l]) R[n, m] s[m-l] for every delay row."""
    N = s.shape[0]
    n = np.arange(N)
    lag = (n[:, None] - n[None, :] + N - 1).ravel()
    out = np.zeros((len(ells), 2 * N - 1), dtype=np.complex128)
    for row, ell in enumerate(ells):
        sh = s[(n - ell) % N]
        Q = (sh.conj()[:, None] * R * sh[None, :]).ravel()
        out[row] = (np.bincount(lag, Q.real, 2 * N - 1)
                    + 1j * np.bincount(lag, Q.imag, 2 * N - 1))
    return out


# ---------------------------------------------------------------- numba path

if HAS_NUMBA:

    @numba.njit(cache=True)
    def column_inner_real_numba(X, Y):
        n, m = X.shape
        out = np.zeros(m)
        for j in range(m):
            acc = 0.0
            for i in range(n):
                x = X[i, j]
                y = Y[i, j]
                acc += x.real * y.real + x.imag * y.imag
            out[j] = acc
        return out

    @numba.njit(cache=True)
    def echo_time_domain_numba(s_cpp, n_cpp, ells, f_norms, gains):
        L = s_cpp.shape[0]
        r = np.zeros(L, dtype=np.complex128)
        for p in range(ells.shape[0]):
            ell = ells[p]
            w = -2.0 * np.pi * f_norms[p]
            g = gains[p]
            for idx in range(L):
                m = idx - n_cpp - ell
                if m >= -n_cpp:
                    r[idx] += g * np.exp(1j * w * m) * s_cpp[m + n_cpp]
        return r

    @numba.njit(cache=True)
    def kappa_sweep_numba(Xi, eta, kappa, half_width, gauss_seidel):
        P = eta.shape[0]
        old = kappa.copy()
        new = kappa.copy()
        skipped = np.zeros(P, dtype=np.bool_)
        for j in range(P):
            d = Xi[j, j]
            if d == 0.0:
                skipped[j] = True
                continue
            off = 0.0
            for i in range(P):
                if i != j:
                    off += Xi[j, i] * (new[i] if gauss_seidel else old[i])
            v = (eta[j] - off) / d
            if v > half_width:
                v = half_width
            elif v < -half_width:
                v = -half_width
            new[j] = v
        return new, skipped

    @numba.njit(cache=True)
    def delta_update_numba(second_moment, b, floor):
        out = np.empty_like(second_moment)
        for j in range(second_moment.shape[0]):
            x = second_moment[j]
            v = 2.0 * x / (np.sqrt(1.0 + 4.0 * b * x) + 1.0)
            out[j] = v if v > floor else floor
        return out


    @numba.njit(cache=True, fastmath=True)
    def lagged_gram_numba(s, ells, g):
        N = s.shape[0]
        out = np.zeros((N, N), dtype=np.complex128)
        sh = np.empty(N, dtype=np.complex128)
        csh = np.empty(N, dtype=np.complex128)
        grev = np.empty(2 * N - 1, dtype=np.complex128)
        for row in range(ells.shape[0]):
            ell = ells[row]
            for n in range(N):
                v = s[(n - ell) % N]
                sh[n] = v
                csh[n] = np.conj(v)
            # reversed lag weights keep the inner loop on increasing addresses
            for k in range(2 * N - 1):
                grev[k] = g[row, 2 * N - 2 - k]
            for n in range(N):
                a = sh[n]
                base = N - 1 - n
                for m in range(N):
                    out[n, m] += a * csh[m] * grev[base + m]
        return out

    @numba.njit(cache=True, fastmath=True)
    def lagged_quadratic_numba(s, ells, R):
        N = s.shape[0]
        out = np.zeros((ells.shape[0], 2 * N - 1), dtype=np.complex128)
        sh = np.empty(N, dtype=np.complex128)
        acc = np.empty(2 * N - 1, dtype=np.complex128)
        for row in range(ells.shape[0]):
            ell = ells[row]
            for n in range(N):
                sh[n] = s[(n - ell) % N]
            acc[:] = 0.0
            for n in range(N):
                a = np.conj(sh[n])
                base = N - 1 - n
                for m in range(N):
                    acc[base + m] += a * R[n, m] * sh[m]
            for k in range(2 * N - 1):
                out[row, k] = acc[2 * N - 2 - k]
        return out

else:  # pragma: no cover
    column_inner_real_numba = column_inner_real_numpy
    echo_time_domain_numba = echo_time_domain_numpy
    kappa_sweep_numba = kappa_sweep_numpy
    delta_update_numba = delta_update_numpy
    lagged_gram_numba = lagged_gram_numpy
    lagged_quadratic_numba = lagged_quadratic_numpy


if USE_NUMBA:
    column_inner_real = column_inner_real_numba
    echo_time_domain = echo_time_domain_numba
    kappa_sweep = kappa_sweep_numba
    delta_update = delta_update_numba
    lagged_gram = lagged_gram_numba
    lagged_quadratic = lagged_quadratic_numba
else:
    column_inner_real = column_inner_real_numpy
    echo_time_domain = echo_time_domain_numpy
    kappa_sweep = kappa_sweep_numpy
    delta_update = delta_update_numpy
    lagged_gram = lagged_gram_numpy
    lagged_quadratic = lagged_quadratic_numpy

BACKEND = "numba" if USE_NUMBA else "numpy"
