"""Closed-form weak-drive scattering quantities.

All functions broadcast over numpy arrays of frequencies (rad/ns, same
reference as ``EmitterParams.omega0``) and delays (ns).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DegenerateError, EmitterParams

__all__ = [
    "SingleCoeffs",
    "fano_z",
    "dephasing_response",
    "single_coeffs",
    "reflection_factor",
    "weak_intensity_t",
    "two_photon_T",
    "sector_T",
    "tau_kernel",
    "port_amplitude",
    "g2_weak_numerator",
    "g2_weak",
]


@dataclass(frozen=True, eq=False)
class SingleCoeffs:
    """Single-photon transmission and reflection amplitudes, t = 1 + r."""

    t: np.ndarray
    r: np.ndarray


def fano_z(xi):
    return 1.0 / (1.0 + 1j * np.asarray(xi, float))


def _fano_phase4(z):
    # z^4 / |z|^4
    return (z / abs(z)) ** 4


def dephasing_response(omega, params: EmitterParams):
    """Emitter response G(omega) for white-noise dephasing; G(omega0) = 1 without it."""
    half = 0.5 * params.gamma_tot
    return half / (half + params.gamma_d - 1j * (np.asarray(omega, float) - params.omega0))


def _t_from_G(G, params: EmitterParams):
    z = complex(fano_z(params.xi))
    return z * (1.0 - z * params.beta * G / abs(z) ** 2)


def single_coeffs(omega, params: EmitterParams) -> SingleCoeffs:
    t = _t_from_G(dephasing_response(omega, params), params)
    return SingleCoeffs(t=t, r=t - 1.0)


def reflection_factor(beta: float, z: complex) -> complex:
    """R = beta (beta - 2 z) / |z|^2, so that I_t = 1 + Re[R G] at weak drive."""
    return beta * (beta - 2.0 * z) / abs(z) ** 2


def weak_intensity_t(omega, params: EmitterParams):
    """Transmitted intensity in the weak-drive limit, normalised to 1 far off resonance."""
    R = reflection_factor(params.beta, complex(fano_z(params.xi)))
    return 1.0 + np.real(R * dephasing_response(omega, params))


def _T_prefactor(params: EmitterParams) -> complex:
    z = complex(fano_z(params.xi))
    return -4.0 * params.beta ** 2 / (np.pi * params.gamma_tot) * _fano_phase4(z)


def two_photon_T(nu1, nu2, om1, om2, params: EmitterParams):
    """Correlated two-photon scattering kernel T_{nu1 nu2 om1 om2}.

    Energy conservation (nu1 + nu2 = om1 + om2) is carried by a delta function
    outside this kernel and is not enforced here.
    """
    G = lambda w: dephasing_response(w, params)  # noqa: E731
    om1 = np.asarray(om1, float)
    om2 = np.asarray(om2, float)
    return _T_prefactor(params) * G(nu1) * G(nu2) * G(om1) * G(om2) / G(0.5 * (om1 + om2))


def sector_T(omega, delta, params: EmitterParams):
    """T(omega - delta, omega + delta, omega, omega), the monochromatic-input sector."""
    G = dephasing_response(omega, params)
    x = 2.0 * G * np.asarray(delta, float) / params.gamma_tot
    return _T_prefactor(params) * G ** 3 / (1.0 + x * x)


def tau_kernel(omega, tau, params: EmitterParams):
    """Delay-domain two-photon term, (1/2) int dDelta e^{-i Delta tau} sector_T."""
    omega = np.asarray(omega, float)
    tau = np.asarray(tau, float)
    z = complex(fano_z(params.xi))
    G = dephasing_response(omega, params)
    rate = 0.5 * params.gamma_tot + params.gamma_d - 1j * (omega - params.omega0)
    return -params.beta ** 2 * _fano_phase4(z) * G ** 2 * np.exp(-rate * np.abs(tau))


def port_amplitude(port: str, omega, params: EmitterParams):
    c = single_coeffs(omega, params)
    if port == "t":
        return c.t
    if port == "r":
        return c.r
    raise ValueError(f"unknown port {port!r}")


def _pair_product(pair: str, omega, params):
    if len(pair) != 2:
        raise ValueError(f"port pair must be two characters, got {pair!r}")
    return port_amplitude(pair[0], omega, params) * port_amplitude(pair[1], omega, params)


def g2_weak_numerator(pair: str, omega, tau, params: EmitterParams):
    """|chi^mu chi^mu' + T(omega, tau)|^2, finite even where g2 itself diverges."""
    return np.abs(_pair_product(pair, omega, params) + tau_kernel(omega, tau, params)) ** 2


def g2_weak(pair: str, omega, tau, params: EmitterParams, atol: float = 1e-12):
    """Second-order correlation between output ports at vanishing drive.

    Raises
    ------
    DegenerateError
        If |chi^mu chi^mu'| vanishes (e.g. transmission of a perfect emitter on
        resonance), where g2 is undefined.
    """
    chi = _pair_product(pair, omega, params)
    denom = np.abs(chi) ** 2
    if np.any(np.abs(chi) <= atol):
        raise DegenerateError(f"port amplitude product for {pair} vanishes; g2 is undefined")
    return np.abs(chi + tau_kernel(omega, tau, params)) ** 2 / denom
