"""Inverse pipeline: from intensities and g2 traces back to scattering amplitudes.

Responses analytic in the upper half of the complex frequency plane have
``Im f = H[Re f]`` with ``H[f](x) = (1/pi) P int f(s) / (x - s) ds``, the same
sign convention as :func:`scipy.signal.hilbert`.
"""
from __future__ import annotations

import numpy as np
import scipy.integrate
import scipy.signal
from scipy.fft import next_fast_len

from . import _kernels
from .analytic import reflection_factor
from .core import ComplexSpectrum, CorrelationTrace, DegenerateError, SpanError, TwoPhotonSector, is_uniform

__all__ = [
    "GridMismatchError",
    "EDGE_FRACTION",
    "kramers_kronig",
    "reconstruct_single",
    "relative_phase_deg",
    "reconstruct_t_real",
    "complete_t",
    "invert_to_sector",
    "reconstruct_field",
]

EDGE_FRACTION = 0.05
SECTOR_DECAY = 1e-4
_TAIL_FRACTION = 0.1


class GridMismatchError(ValueError):
    """Traces that must share a delay grid do not."""


def _edge_check(values, what="input"):
    peak = np.abs(values).max(axis=0)
    edge = np.maximum(np.abs(values[0]), np.abs(values[-1]))
    bad = edge >= EDGE_FRACTION * peak
    bad &= peak > 0
    if np.any(bad):
        ratio = float(np.max(edge[bad] / peak[bad])) if np.ndim(bad) else float(edge / peak)
        raise SpanError(f"{what} has not decayed at the grid edges (edge/peak = {ratio:.3g}, "
                        f"need < {EDGE_FRACTION}); widen the frequency scan")


def _tail_coeffs(x, values, centre):
    """Least-squares a1/(x-c) + a2/(x-c)^2 on the outer samples of both ends."""
    n = x.size
    k = max(2, int(round(_TAIL_FRACTION * n)))
    idx = np.concatenate([np.arange(k), np.arange(n - k, n)])
    u = x[idx] - centre
    design = np.stack([1.0 / u, 1.0 / u ** 2], axis=1)
    coef, *_ = np.linalg.lstsq(design, values[idx], rcond=None)
    return coef


def _tail_transform(x, lo, hi, centre, coef):
    """Hilbert transform of the tail model restricted to s < lo and s > hi."""
    y = x - centre
    ua, ub = lo - centre, hi - centre
    eps = 1e-4 * max(abs(ua), abs(ub))
    y = np.where(np.abs(y) < eps, np.where(y < 0, -eps, eps), y)

    def log_ratio(u):
        return np.log(np.abs(u / (y - u)))

    f1 = (log_ratio(ua) - log_ratio(ub)) / y
    f2 = (-1.0 / (y * ua) + 1.0 / (y * ub)) + (log_ratio(ua) - log_ratio(ub)) / y ** 2
    a1, a2 = coef[0], coef[1]
    if np.ndim(a1):
        return (np.outer(f1, a1) + np.outer(f2, a2)) / np.pi
    return (a1 * f1 + a2 * f2) / np.pi


def kramers_kronig(re_values, grid=None, method: str = "fft", tail: bool = True, check: bool = True):
    """Imaginary part of a causal response from its real part.

    Parameters
    ----------
    re_values : array_like
        Real part on a uniform frequency grid, shape (N,) or (N, M); the
        transform runs along axis 0.
    grid : array_like, optional
        The frequency grid. Only needed for the tail correction, which models
        the response beyond the grid as ``a1/(w - wc) + a2/(w - wc)**2``.
    method : {"fft", "direct"}
        Zero-padded FFT sign-kernel transform, or the odd-offset direct sum.
    check : bool
        Raise :class:`SpanError` if ``|edge| >= 0.05 max|input|``.

    Returns
    -------
    ndarray
        ``H[re_values]`` with the input's shape.
    """
    f = np.asarray(re_values, float)
    n = f.shape[0]
    if n < 8:
        raise SpanError("need at least 8 samples for a Hilbert transform")
    if grid is not None:
        grid = np.asarray(grid, float)
        if not is_uniform(grid) or grid.size != n:
            raise ValueError("grid must be uniform and match the samples")
    if check:
        _edge_check(f)
    if method == "fft":
        size = next_fast_len(8 * n)
        padded = np.zeros((size,) + f.shape[1:])
        padded[:n] = f
        out = scipy.signal.hilbert(padded, axis=0).imag[:n]
    elif method == "direct":
        if f.ndim == 1:
            out = _kernels.hilbert_direct(f)
        else:
            out = np.stack([_kernels.hilbert_direct(col) for col in f.T], axis=1)
    else:
        raise ValueError(f"unknown method {method!r}")
    if tail and grid is not None:
        step = grid[1] - grid[0]
        centre = 0.5 * (grid[0] + grid[-1])
        coef = _tail_coeffs(grid, f, centre)
        # half a step beyond each end: the discrete sum already covers +-h/2
        out = out + _tail_transform(grid, grid[0] - 0.5 * step, grid[-1] + 0.5 * step, centre, coef)
    return out


def reconstruct_single(grid, intensity_t, beta: float, z: complex, method: str = "fft"):
    """Single-photon response from a transmitted-intensity spectrum.

    Inverts ``I_t = 1 + Re[R G]`` for ``G``, then forms ``t`` and ``r``.

    Returns
    -------
    G, t, r : ComplexSpectrum
    """
    grid = np.asarray(grid, float)
    z = complex(z)
    R = reflection_factor(beta, z)
    if R == 0:
        raise DegenerateError("R = beta (beta - 2z)/|z|^2 vanishes; G cannot be recovered")
    re_rg = np.asarray(intensity_t, float) - 1.0
    im_rg = kramers_kronig(re_rg, grid, method=method)
    G = (re_rg + 1j * im_rg) / R
    t = z * (1.0 - z * beta * G / abs(z) ** 2)
    r = t - 1.0
    return ComplexSpectrum(grid, G), ComplexSpectrum(grid, t), ComplexSpectrum(grid, r)


def relative_phase_deg(values, reference: complex):
    """Unwrapped phase of ``values / reference`` in degrees.

    Referencing to the off-resonant value (z for t, z - 1 for r) removes the
    constant offset the facet reflections put on both amplitudes.
    """
    ph = np.unwrap(np.angle(np.asarray(values) / reference))
    return np.degrees(ph)


def _as_values(trace, tau):
    if isinstance(trace, CorrelationTrace):
        if tau is not None and (trace.tau_grid.shape != tau.shape or not np.allclose(trace.tau_grid, tau)):
            raise GridMismatchError("g2 traces are on different delay grids")
        return trace.values, trace.tau_grid
    return np.asarray(trace, float), tau


def reconstruct_t_real(g2_tt, g2_rr, g2_tr, t, r, as_printed: bool = False):
    """Real part of the two-photon delay kernel from three g2 traces.

    Parameters
    ----------
    g2_tt, g2_rr, g2_tr : CorrelationTrace or array_like
        Traces at one laser frequency on a common delay grid. Arrays may carry
        a leading frequency axis, matched by array-valued ``t`` and ``r``.
    t, r : complex or array_like
        Single-photon amplitudes at the laser frequency.
    as_printed : bool
        Use the raw ``g`` weights instead of ``g - 1``. That version is offset
        by ``(|t|^2 - |r|^2)^2 / 2``.

    Returns
    -------
    ndarray
    """
    tau = None
    vals = []
    for tr in (g2_tt, g2_rr, g2_tr):
        v, tau = _as_values(tr, tau)
        vals.append(v)
    if not (vals[0].shape == vals[1].shape == vals[2].shape):
        raise GridMismatchError("g2 traces have different shapes")
    t = np.asarray(t)
    r = np.asarray(r)
    if t.ndim:
        t, r = t[:, None], r[:, None]
    at, ar = np.abs(t) ** 2, np.abs(r) ** 2
    shift = 0.0 if as_printed else 1.0
    gtt, grr, gtr = (v - shift for v in vals)
    return 0.5 * at ** 2 * gtt + 0.5 * ar ** 2 * grr - at * ar * gtr


def complete_t(re_field, omega_grid, method: str = "fft"):
    """Complex delay kernel from its real part, by KK along the frequency axis.

    ``re_field`` has shape (len(omega_grid), n_tau).
    """
    re_field = np.asarray(re_field, float)
    im = kramers_kronig(re_field, omega_grid, method=method)
    return re_field + 1j * im


def invert_to_sector(tau_grid, values, omega: float = 0.0, delta_grid=None,
                     n_delta: int = 401) -> TwoPhotonSector:
    """Exchange-frequency sector from the delay kernel at one laser frequency.

    The kernel is even in delay, so ``(1/pi) int e^{i D tau} K dtau`` reduces to
    ``(2/pi) int_0^inf cos(D tau) K dtau`` (Simpson on the tau >= 0 samples).
    """
    tau = np.asarray(tau_grid, float)
    vals = np.asarray(values, complex)
    if not is_uniform(tau):
        raise ValueError("tau grid must be uniform")
    keep = tau >= -1e-12 * abs(tau).max()
    tau, vals = np.abs(tau[keep]), vals[keep]
    if tau[0] != 0.0:
        raise ValueError("tau grid must contain 0")
    peak = np.abs(vals).max()
    if peak > 0 and abs(vals[-1]) >= SECTOR_DECAY * peak:
        raise SpanError(f"kernel has decayed only to {abs(vals[-1]) / peak:.2e} of its peak at "
                        f"tau = {tau[-1]:.3g} ns; extend the delay span")
    if delta_grid is None:
        dmax = np.pi / (4.0 * (tau[1] - tau[0]))
        delta_grid = np.linspace(-dmax, dmax, n_delta)
    delta = np.asarray(delta_grid, float)
    integrand = np.cos(np.outer(delta, tau)) * vals[None, :]
    T = (2.0 / np.pi) * scipy.integrate.simpson(integrand, x=tau, axis=1)
    return TwoPhotonSector(omega=float(omega), delta_grid=delta, values=T)


def reconstruct_field(omega_grid, g2_tt, g2_rr, g2_tr, t, r, as_printed: bool = False,
                      method: str = "fft"):
    """Complex delay kernel over a frequency scan from g2 triples.

    The traces have shape (len(omega_grid), n_tau); ``t`` and ``r`` are the
    single-photon amplitudes on the same frequency grid.
    """
    re = reconstruct_t_real(g2_tt, g2_rr, g2_tr, t, r, as_printed=as_printed)
    return complete_t(re, omega_grid, method=method)
