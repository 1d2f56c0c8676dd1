"""Measurement-chain corruption: spectral diffusion, detector jitter, background.

Spectral diffusion is a Gaussian average over the emitter detuning, done with
Gauss-Hermite quadrature. Detector jitter (the instrument response, IRF) is a
Gaussian convolution in delay. Background counts mix a flat, uncorrelated
component into both the coincidence and the singles products.

For g2 traces the three layers act on a (numerator, denominator) pair per
quadrature node; the denominator is independent of delay, so the IRF commutes
with the other two and only the relative order of averaging and background
mixing changes the result.
"""
from __future__ import annotations

import math
import warnings

import numpy as np
import scipy.signal
from scipy.special import erf

from . import _kernels
from .analytic import g2_weak_numerator, port_amplitude, tau_kernel
from .core import (
    CorrelationTrace,
    DegenerateError,
    EmitterParams,
    NoiseModel,
    PAIRS,
    SpanError,
    is_uniform,
)
from .dynamics import solve

__all__ = [
    "DEFAULT_NODES",
    "DEFAULT_ORDER",
    "gauss_nodes",
    "spectral_average_intensity",
    "spectral_average_g2",
    "irf_kernel",
    "irf_convolve",
    "background_mix",
    "predicted_tbar",
    "g2_imperfect",
    "g2_imperfect_pairs",
]

DEFAULT_NODES = 61
DEFAULT_ORDER = ("sd", "bg", "irf")
_MIN_MASS = 0.999
_IRF_REACH = 5.0


def gauss_nodes(sigma: float, n: int = DEFAULT_NODES):
    """Offsets and weights that integrate against N(0, sigma^2).

    Weights sum to one. ``sigma = 0`` collapses to a single node at 0.
    numpy's node generator overflows past a few hundred nodes, so ``n`` is
    capped at 300.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if not 1 <= n <= 300:
        raise ValueError(f"n_nodes={n} outside [1, 300]")
    if sigma == 0.0:
        return np.zeros(1), np.ones(1)
    x, w = np.polynomial.hermite_e.hermegauss(n)
    return sigma * x, w / w.sum()


def _check_coverage(sigma, grid):
    span = grid[-1] - grid[0]
    mass = erf(span / (2.0 * math.sqrt(2.0) * sigma))
    if mass < _MIN_MASS:
        raise SpanError(
            f"grid span {span:.4g} holds only {mass:.4f} of the Gaussian mass (sigma={sigma:.4g}); "
            "widen the grid")


def spectral_average_intensity(intensity, sigma: float, grid, n_nodes: int = DEFAULT_NODES):
    """Average an intensity spectrum over Gaussian emitter-frequency jitter.

    Parameters
    ----------
    intensity : callable or array_like
        Either a vectorised function of laser frequency, or samples on ``grid``.
        Samples are interpolated linearly and held constant past the ends.
    sigma : float
        Standard deviation of the detuning jitter (rad/ns).
    grid : array_like
        Laser frequencies (rad/ns).

    Returns
    -------
    ndarray
        The averaged spectrum on ``grid``.
    """
    grid = np.asarray(grid, float)
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if callable(intensity):
        if sigma == 0.0:
            return np.asarray(intensity(grid), float)
        delta, w = gauss_nodes(sigma, n_nodes)
        vals = np.asarray(intensity(grid[None, :] - delta[:, None]), float)
        return w @ vals
    values = np.asarray(intensity, float)
    if values.shape != grid.shape:
        raise ValueError("samples must match the grid")
    if sigma == 0.0:
        return values.copy()
    _check_coverage(sigma, grid)
    delta, w = gauss_nodes(sigma, n_nodes)
    # emitter shifted by +delta looks like the laser shifted by -delta
    shifted = np.stack([np.interp(grid - d, grid, values) for d in delta])
    return w @ shifted


def spectral_average_g2(G2, I_mu, I_nu, sigma: float, grid, tau_grid,
                        n_nodes: int = DEFAULT_NODES, return_parts: bool = False):
    """Spectrally averaged g2, numerator and denominator averaged separately.

    ``G2(omega, tau)`` must return an array of shape ``(len(omega), len(tau))``
    and ``I_mu(omega)``, ``I_nu(omega)`` arrays of shape ``(len(omega),)``.

    Returns ``g2`` with shape ``(len(grid), len(tau_grid))``, or the pair
    ``(numerator, denominator)`` when ``return_parts`` is set.
    """
    grid = np.atleast_1d(np.asarray(grid, float))
    tau = np.asarray(tau_grid, float)
    delta, w = gauss_nodes(sigma, n_nodes)
    pts = (grid[:, None] - delta[None, :]).ravel()
    num = np.asarray(G2(pts, tau), float).reshape(grid.size, delta.size, tau.size)
    den = (np.asarray(I_mu(pts), float) * np.asarray(I_nu(pts), float)).reshape(grid.size, delta.size)
    num = np.einsum("k,nkt->nt", w, num)
    den = den @ w
    if return_parts:
        return num, den
    if np.any(den == 0.0):
        raise DegenerateError("averaged intensity product vanishes")
    return num / den[:, None]


def irf_kernel(sigma: float, step: float) -> np.ndarray:
    """Discrete Gaussian detector response on +-5 sigma, normalised to unit sum."""
    m = int(math.ceil(_IRF_REACH * sigma / step))
    x = np.arange(-m, m + 1) * step
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _pad(values, m, left_mode):
    right = np.repeat(values[-1:], m)
    if left_mode == "reflect":
        left = values[m:0:-1]
    else:
        left = np.repeat(values[:1], m)
    return np.concatenate([left, values, right])


def irf_convolve(trace, sigma_irf: float, tau_grid=None, method: str = "fft"):
    """Convolve a delay trace with a Gaussian detector response.

    Parameters
    ----------
    trace : CorrelationTrace or array_like
        Samples on a uniform delay grid. Plain arrays (real or complex) need
        ``tau_grid``.
    sigma_irf : float
        Response standard deviation (ns).
    method : {"fft", "direct"}
        Two independent implementations; both replicate the end samples over
        5 sigma. A one-sided same-port trace is extended by reflection about
        tau = 0 instead.

    Returns
    -------
    CorrelationTrace or ndarray
        Same kind as the input.
    """
    if sigma_irf < 0:
        raise ValueError("sigma_irf must be >= 0")
    is_trace = isinstance(trace, CorrelationTrace)
    if is_trace:
        tau, values = trace.tau_grid, trace.values
    else:
        if tau_grid is None:
            raise ValueError("tau_grid is required for array input")
        tau, values = np.asarray(tau_grid, float), np.asarray(trace)
        if not is_uniform(tau):
            raise ValueError("tau grid must be uniform")
    if sigma_irf == 0.0:
        out = values.copy()
    else:
        step = tau[1] - tau[0]
        if sigma_irf < 2.0 * step:
            warnings.warn(f"sigma_irf={sigma_irf:g} ns is below two grid steps ({step:g} ns); "
                          "the response is poorly resolved", RuntimeWarning, stacklevel=2)
        kern = irf_kernel(sigma_irf, step)
        m = kern.size // 2
        left_mode = "replicate"
        if tau[0] == 0.0:
            if is_trace and trace.pair[0] != trace.pair[1]:
                raise ValueError("cross-port traces need a two-sided delay grid for the IRF")
            left_mode = "reflect"
        if m >= values.size:
            raise SpanError("delay grid is shorter than the detector response")
        if method == "fft":
            out = scipy.signal.fftconvolve(_pad(values, m, left_mode), kern, mode="valid")
        elif method == "direct":
            padded = _pad(values, m, left_mode)
            out = _kernels.convolve_direct(padded, kern)[m:-m]
        else:
            raise ValueError(f"unknown method {method!r}")
    if is_trace:
        return CorrelationTrace(pair=trace.pair, tau_grid=tau, values=np.clip(out.real, 0.0, None),
                                counts=trace.counts, power=trace.power, omega=trace.omega)
    return out


def background_mix(G2, I_mu, I_nu, B: float):
    """g2 with an uncorrelated background fraction ``B`` in both counts and singles.

    ``I_mu * I_nu`` is the singles product; pass an already averaged product as
    ``I_mu`` with ``I_nu = 1``.
    """
    if not 0.0 <= B <= 1.0:
        raise ValueError(f"background B={B} outside [0, 1]")
    den = (1.0 - B) * np.asarray(I_mu) * np.asarray(I_nu) + B
    if np.any(den == 0.0):
        raise DegenerateError("intensity product vanishes and there is no background")
    return ((1.0 - B) * np.asarray(G2) + B) / den


def predicted_tbar(omega, tau_grid, params: EmitterParams, noise: NoiseModel,
                   n_nodes: int = DEFAULT_NODES, oversample: int = 8):
    """Two-photon delay kernel as a detector would see it.

    Averages the kernel over spectral diffusion (``noise.sigma_long``), then
    convolves in delay with the IRF on an internal symmetric fine grid and
    interpolates back to ``tau_grid``. Returns shape ``(len(tau),)`` for scalar
    ``omega`` and ``(len(omega), len(tau))`` otherwise.
    """
    scalar = np.ndim(omega) == 0
    omega = np.atleast_1d(np.asarray(omega, float))
    tau = np.asarray(tau_grid, float)
    delta, w = gauss_nodes(noise.sigma_long, n_nodes)

    def averaged(t):
        vals = tau_kernel(omega[:, None, None] - delta[None, :, None], t[None, None, :], params)
        return np.einsum("k,nkt->nt", w, vals)

    if noise.sigma_irf == 0.0:
        out = averaged(tau)
    else:
        s = noise.sigma_irf
        step = min(s / 10.0, 0.05 / params.gamma_tot)
        if tau.size > 1:
            step = min(step, abs(tau[1] - tau[0]) / oversample)
        reach = max(abs(tau).max(), 0.0) + 2.0 * _IRF_REACH * s
        m = int(math.ceil(reach / step))
        fine = np.arange(-m, m + 1) * step
        raw = averaged(fine)
        kern = irf_kernel(s, step)
        half = kern.size // 2
        conv = np.stack([scipy.signal.fftconvolve(_pad(row, half, "replicate"), kern, mode="valid")
                         for row in raw])
        out = np.stack([np.interp(tau, fine, c.real) + 1j * np.interp(tau, fine, c.imag) for c in conv])
    return out[0] if scalar else out


class _Nodes:
    """Per-node unnormalised G2 and singles, computed once for several pairs."""

    def __init__(self, omegas, rabi, tau_pos, params, model):
        self.omegas, self.tau_pos, self.params, self.model = omegas, tau_pos, params, model
        self.engine = solve(omegas, rabi, tau_pos, params) if model == "full" else None

    def parts(self, pair):
        a, b = pair[0], pair[1]
        if self.engine is None:
            om, p = self.omegas, self.params
            same = g2_weak_numerator(pair, om[:, None], self.tau_pos[None, :], p)
            # |chi_a chi_b + T|^2 is symmetric in the ports
            den = np.abs(port_amplitude(a, om, p) * port_amplitude(b, om, p)) ** 2
            return same, same, den
        same = self.engine.G2(pair)
        swap = same if a == b else self.engine.G2(b + a)
        return same, swap, self.engine.intensity(a) * self.engine.intensity(b)


def _irf_row(pair, tau, row, sigma):
    if tau[0] == 0.0:
        return irf_convolve(CorrelationTrace(pair, tau, np.clip(row, 0.0, None)), sigma).values
    return irf_convolve(row, sigma, tau_grid=tau).real


def _split_tau(tau, pairs):
    if not is_uniform(tau):
        raise ValueError("tau grid must be uniform")
    if tau[0] == 0.0:
        if any(p[0] != p[1] for p in pairs):
            raise ValueError("cross-port traces need a symmetric delay grid")
        return False, tau
    mid = tau.size // 2
    if tau.size % 2 == 0 or not np.isclose(tau[mid], 0.0, atol=1e-12 * abs(tau[-1])) \
            or not np.isclose(tau[0], -tau[-1]):
        raise ValueError("tau grid must start at 0 or be symmetric with 0 at its centre")
    return True, np.abs(tau[mid:])


def g2_imperfect_pairs(pairs, omega: float, rabi: complex, tau_grid, params: EmitterParams,
                       noise: NoiseModel, order=DEFAULT_ORDER, n_nodes: int = DEFAULT_NODES,
                       model: str = "full") -> dict:
    """:func:`g2_imperfect` for several pairs sharing one drive; returns ``{pair: trace}``."""
    pairs = tuple(pairs)
    for pair in pairs:
        if pair not in PAIRS:
            raise ValueError(f"unknown port pair {pair!r}")
    order = tuple(order)
    if set(order) - {"sd", "bg", "irf"} or len(set(order)) != len(order):
        raise ValueError(f"bad layer order {order!r}")
    if model not in ("full", "weak"):
        raise ValueError(f"unknown model {model!r}")
    tau = np.asarray(tau_grid, float)
    two_sided, tau_pos = _split_tau(tau, pairs)
    sigma = noise.sigma_long if "sd" in order else 0.0
    delta, w = gauss_nodes(sigma, n_nodes)
    nodes = _Nodes(omega - delta, rabi, tau_pos, params, model)

    out = {}
    for pair in pairs:
        same, swap, den = nodes.parts(pair)
        num = np.concatenate([swap[:, :0:-1], same], axis=1) if two_sided else same
        B = noise.b(pair)
        for layer in order:
            if layer == "sd":
                num, den = (w @ num)[None, :], np.atleast_1d(den @ w)
            elif layer == "bg":
                num = (1.0 - B) * num + B
                den = (1.0 - B) * den + B
            elif noise.sigma_irf > 0.0:
                # den does not depend on tau, so convolving the numerator suffices
                num = np.stack([_irf_row(pair, tau, row, noise.sigma_irf) for row in num])
        # without "sd" there is a single node at delta = 0
        if np.any(den == 0.0):
            raise DegenerateError(f"intensity product for {pair} vanishes")
        values = np.clip(num[0] / den[0], 0.0, None)
        out[pair] = CorrelationTrace(pair=pair, tau_grid=tau, values=values, omega=float(omega))
    return out


def g2_imperfect(pair: str, omega: float, rabi: complex, tau_grid, params: EmitterParams,
                 noise: NoiseModel, order=DEFAULT_ORDER, n_nodes: int = DEFAULT_NODES,
                 model: str = "full") -> CorrelationTrace:
    """Measured-looking g2 for one port pair.

    Parameters
    ----------
    pair : str
        One of ``tt``, ``rr``, ``tr``, ``rt``.
    omega, rabi : float, complex
        Laser frequency (rad/ns) and drive strength (1/ns).
    tau_grid : array_like
        Uniform delays, either symmetric about 0 with 0 on the grid, or
        starting at 0 (same-port pairs only).
    noise : NoiseModel
        ``sigma_long``, ``sigma_irf`` and ``background`` are used.
    order : sequence of str
        Any ordering of a subset of ``"sd"``, ``"bg"``, ``"irf"``; omitted
        layers are switched off.
    model : {"full", "weak"}
        Finite-drive regression model, or the closed-form vanishing-drive
        limit (``rabi`` is then ignored).
    """
    return g2_imperfect_pairs((pair,), omega, rabi, tau_grid, params, noise, order=order,
                              n_nodes=n_nodes, model=model)[pair]
