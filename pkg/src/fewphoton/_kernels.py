"""Hot inner loops, compiled with numba when available.

Every kernel has a pure-numpy twin with identical semantics. The numpy path is
selected when numba is missing or when ``FEWPHOTON_DISABLE_NUMBA`` is set to a
truthy value before import. Both paths are exercised by the test-suite and
compared in ``benchmarks/bench_kernels.py``.
"""
import os

import numpy as np

_DISABLED = os.environ.get("FEWPHOTON_DISABLE_NUMBA", "").lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError
    from numba import njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

__all__ = [
    "HAS_NUMBA",
    "bloch_coherence",
    "hilbert_direct",
    "convolve_direct",
    "mode_sum",
    "numpy_kernels",
    "numba_kernels",
]


# ---------------------------------------------------------------------------
# pure numpy implementations
# ---------------------------------------------------------------------------

def _bloch_coherence_np(delta, rabi_abs2, gamma_tot, gamma_d):
    gamma2 = 0.5 * gamma_tot + gamma_d
    a = gamma2 - 1j * delta
    kappa = 2.0 * rabi_abs2 * gamma2 / (gamma_tot * (gamma2 * gamma2 + delta * delta))
    return 1.0 / (a * (1.0 + 2.0 * kappa))


def _hilbert_direct_np(f):
    n = f.shape[0]
    idx = np.arange(n)
    diff = idx[:, None] - idx[None, :]
    odd = (diff % 2) != 0
    w = np.zeros((n, n))
    w[odd] = 1.0 / diff[odd]
    return (2.0 / np.pi) * (w @ f)


def _convolve_direct_np(x, kernel):
    m = kernel.shape[0] // 2
    n = x.shape[0]
    idx = np.clip(np.arange(n)[:, None] + np.arange(-m, m + 1)[None, :], 0, n - 1)
    return x[idx] @ kernel


def _mode_sum_np(coeffs, evals, tau):
    # coeffs (N, K, M), evals (N, M), tau (T,) -> (N, K, T)
    phase = np.exp(evals[:, :, None] * tau[None, None, :])
    return np.einsum("nkm,nmt->nkt", coeffs, phase)


numpy_kernels = {
    "bloch_coherence": _bloch_coherence_np,
    "hilbert_direct": _hilbert_direct_np,
    "convolve_direct": _convolve_direct_np,
    "mode_sum": _mode_sum_np,
}


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAS_NUMBA:

    @njit(cache=True)
    def _bloch_coherence_nb(delta, rabi_abs2, gamma_tot, gamma_d):
        out = np.empty(delta.shape[0], dtype=np.complex128)
        gamma2 = 0.5 * gamma_tot + gamma_d
        for i in range(delta.shape[0]):
            d = delta[i]
            kappa = 2.0 * rabi_abs2[i] * gamma2 / (gamma_tot * (gamma2 * gamma2 + d * d))
            out[i] = 1.0 / (complex(gamma2, -d) * (1.0 + 2.0 * kappa))
        return out

    @njit(cache=True)
    def _hilbert_direct_nb(f):
        n = f.shape[0]
        out = np.zeros(n)
        for i in range(n):
            acc = 0.0
            # odd offsets only; the even/odd interleave removes the singular term
            j = 1 if i % 2 == 0 else 0
            while j < n:
                acc += f[j] / (i - j)
                j += 2
            out[i] = 2.0 * acc / np.pi
        return out

    @njit(cache=True)
    def _convolve_direct_nb(x, kernel):
        n = x.shape[0]
        m = kernel.shape[0] // 2
        out = np.zeros(n, dtype=x.dtype)
        for i in range(n):
            acc = x[0] * 0.0
            for k in range(-m, m + 1):
                j = i + k
                if j < 0:
                    j = 0
                elif j > n - 1:
                    j = n - 1
                acc += kernel[k + m] * x[j]
            out[i] = acc
        return out

    @njit(cache=True)
    def _mode_sum_nb(coeffs, evals, tau):
        nb, nk, nm = coeffs.shape
        nt = tau.shape[0]
        out = np.zeros((nb, nk, nt), dtype=np.complex128)
        for b in range(nb):
            for m in range(nm):
                lam = evals[b, m]
                for t in range(nt):
                    e = np.exp(lam * tau[t])
                    for k in range(nk):
                        out[b, k, t] += coeffs[b, k, m] * e
        return out

    numba_kernels = {
        "bloch_coherence": _bloch_coherence_nb,
        "hilbert_direct": _hilbert_direct_nb,
        "convolve_direct": _convolve_direct_nb,
        "mode_sum": _mode_sum_nb,
    }
else:
    numba_kernels = None


_active = numba_kernels if HAS_NUMBA else numpy_kernels


def bloch_coherence(delta, rabi_abs2, gamma_tot, gamma_d):
    """Steady-state ratio <sigma^->_ss / Omega of a driven, dephased two-level emitter.

    Closed-form optical Bloch solution; ``delta`` is laser minus emitter
    frequency and ``rabi_abs2`` is ``|Omega|**2``. Arrays broadcast together.
    """
    delta, rabi_abs2 = np.broadcast_arrays(np.asarray(delta, float), np.asarray(rabi_abs2, float))
    shape = delta.shape
    out = _active["bloch_coherence"](
        np.ascontiguousarray(delta).ravel(), np.ascontiguousarray(rabi_abs2).ravel(),
        float(gamma_tot), float(gamma_d),
    )
    return out.reshape(shape)


def hilbert_direct(f):
    """Discrete Hilbert transform by the odd-offset (Maclaurin) rule.

    Returns ``(1/pi) P int f(s) / (x - s) ds`` on the sample grid of ``f``.
    """
    return _active["hilbert_direct"](np.ascontiguousarray(f, dtype=float))


def convolve_direct(x, kernel):
    """Direct-summation convolution with a symmetric odd-length kernel.

    Samples beyond either end are replaced by the nearest endpoint value.
    """
    x = np.ascontiguousarray(x)
    kernel = np.ascontiguousarray(kernel, dtype=float)
    if np.iscomplexobj(x):
        return (_active["convolve_direct"](np.ascontiguousarray(x.real), kernel)
                + 1j * _active["convolve_direct"](np.ascontiguousarray(x.imag), kernel))
    return _active["convolve_direct"](x.astype(float), kernel)


def mode_sum(coeffs, evals, tau):
    """Evaluate ``sum_m coeffs[n, k, m] * exp(evals[n, m] * tau)`` on a delay grid."""
    return _active["mode_sum"](
        np.ascontiguousarray(coeffs, dtype=complex),
        np.ascontiguousarray(evals, dtype=complex),
        np.ascontiguousarray(tau, dtype=float),
    )
