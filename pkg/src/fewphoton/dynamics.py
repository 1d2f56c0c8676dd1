"""Finite-drive model of the waveguide-coupled emitter.

The emitter obeys a Lindblad master equation with radiative decay
gamma_tot D[sigma^-] and pure dephasing 2 gamma_d D[sigma^+ sigma^-], driven by

    H = -(omega - omega0) sigma^+ sigma^- + i (Omega sigma^+ - Omega^* sigma^-).

Two-time correlators follow from the quantum regression theorem,
``<B^dag(t) A(t + tau) C(t)> = Tr{A exp(L tau)[C rho_ss B^dag]}``, and the
photon observables from the input-output relation. Density matrices are
vectorised row-major, basis order (ground, excited).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg

from . import _kernels
from .core import DegenerateError, EmitterParams, CorrelationTrace, PAIRS, ScatterGeometry, validate

__all__ = [
    "SM",
    "SP",
    "NE",
    "DensityMatrix",
    "Liouvillian",
    "build_liouvillian",
    "steady_state",
    "propagate",
    "CORRELATORS",
    "regression_correlator",
    "Engine",
    "solve",
    "intensity_full",
    "intensity_batch",
    "g2_unnormalized",
    "g2_full",
    "mirror",
]

SM = np.array([[0, 1], [0, 0]], dtype=complex)
SP = SM.conj().T
NE = SP @ SM
ID = np.eye(2, dtype=complex)
_TRACE = np.array([1, 0, 0, 1], dtype=complex)


class DensityMatrix:
    """A 2x2 emitter state; constructing one checks Hermiticity, trace and positivity."""

    def __init__(self, matrix, tol: float = 1e-10):
        m = np.asarray(matrix, dtype=complex).reshape(2, 2)
        if not np.allclose(m, m.conj().T, atol=tol):
            raise ValueError("density matrix is not Hermitian")
        if abs(np.trace(m) - 1.0) > tol:
            raise ValueError(f"density matrix trace {np.trace(m)} != 1")
        ev = np.linalg.eigvalsh(0.5 * (m + m.conj().T))
        if ev.min() < -tol or ev.max() > 1 + tol:
            raise ValueError(f"density matrix eigenvalues {ev} outside [0, 1]")
        self.matrix = m

    def expect(self, op) -> complex:
        return complex(np.trace(op @ self.matrix))

    @property
    def vec(self):
        return self.matrix.reshape(4)

    def __repr__(self):
        return f"DensityMatrix({self.matrix!r})"


@dataclass(frozen=True, eq=False)
class Liouvillian:
    matrix: np.ndarray
    omega: float
    rabi: complex
    params: EmitterParams


def _liouvillian_batch(delta, rabi, gamma_tot, gamma_d):
    """Stack of 4x4 generators for an array of detunings (laser minus emitter)."""
    delta = np.atleast_1d(np.asarray(delta, float))
    rabi = complex(rabi)
    L = np.zeros(delta.shape + (4, 4), dtype=complex)
    for rate, c in ((gamma_tot, SM), (2.0 * gamma_d, NE)):
        if rate == 0.0:
            continue
        cdc = c.conj().T @ c
        L += rate * (np.kron(c, c.conj()) - 0.5 * np.kron(cdc, ID) - 0.5 * np.kron(ID, cdc.T))
    drive = 1j * (rabi * SP - np.conj(rabi) * SM)
    L += -1j * (np.kron(drive, ID) - np.kron(ID, drive.T))
    detuning_part = -1j * (np.kron(-NE, ID) - np.kron(ID, -NE.T))
    L += delta[:, None, None] * detuning_part
    return L


def build_liouvillian(omega: float, rabi: complex, params: EmitterParams) -> Liouvillian:
    validate(params)
    mat = _liouvillian_batch(omega - params.omega0, rabi, params.gamma_tot, params.gamma_d)[0]
    return Liouvillian(matrix=mat, omega=omega, rabi=complex(rabi), params=params)


def _steady_state_batch(L):
    # bordered system [L; tr] x = [0; 1], solved in the least-squares sense
    n = L.shape[0]
    bordered = np.concatenate([L, np.broadcast_to(_TRACE, (n, 1, 4))], axis=1)
    x = np.linalg.pinv(bordered)[:, :, 4]
    return x


def steady_state(L: Liouvillian) -> DensityMatrix:
    """Unique normalised null vector of ``L``.

    Raises
    ------
    np.linalg.LinAlgError
        If the null space is not one-dimensional.
    """
    sv = np.linalg.svd(L.matrix, compute_uv=False)
    if sv[-2] <= 1e-12 * sv[0]:
        raise np.linalg.LinAlgError("Liouvillian null space is degenerate; no unique steady state")
    x = _steady_state_batch(L.matrix[None])[0]
    rho = x.reshape(2, 2)
    rho = 0.5 * (rho + rho.conj().T)
    return DensityMatrix(rho)


def _eig_batch(L, cond_limit=1e10):
    evals, V = np.linalg.eig(L)
    cond = np.linalg.cond(V)
    ok = np.isfinite(cond) & (cond < cond_limit)
    Vinv = np.zeros_like(V)
    if ok.any():
        Vinv[ok] = np.linalg.inv(V[ok])
    return evals, V, Vinv, ok


def _propagate_expm(L, x0, tau):
    """exp(L tau) x0 by scaling-and-squaring, for generators that are nearly defective."""
    tau = np.asarray(tau, float)
    mats = scipy.linalg.expm(tau[:, None, None] * L[None, :, :])
    return np.einsum("tij,...j->...ti", mats, x0)


def propagate(L: Liouvillian, x0, tau):
    """Evolve vectorised operator(s) ``x0`` (shape (..., 4)) to each delay in ``tau``."""
    x0 = np.asarray(x0, complex)
    tau = np.asarray(tau, float)
    evals, V, Vinv, ok = _eig_batch(L.matrix[None])
    if not ok[0]:
        return _propagate_expm(L.matrix, x0, tau)
    flat = x0.reshape(-1, 4)
    coeff = np.einsum("ij,kj->ki", Vinv[0], flat)  # mode amplitudes
    # mode_sum wants (N, K, M): treat each output component as a "kind"
    out = []
    for c in coeff:
        cm = V[0] * c[None, :]  # (4 components, 4 modes)
        out.append(_kernels.mode_sum(cm[None], evals[:1], tau)[0].T)
    return np.asarray(out).reshape(x0.shape[:-1] + (tau.size, 4))


class _Kind(NamedTuple):
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    label: str


#: regression correlators entering G2: value = Tr{A exp(L tau)[B rho C]}
CORRELATORS = {
    "lower_lower": _Kind(SM, SM, ID, "<s-(t+tau) s-(t)>"),
    "raise_lower": _Kind(SP, SM, ID, "<s+(t+tau) s-(t)>"),
    "sandwich_lower": _Kind(SM, SM, SP, "<s+(t) s-(t+tau) s-(t)>"),
    "population_lower": _Kind(NE, SM, ID, "<s+(t+tau) s-(t+tau) s-(t)>"),
    "population_sandwich": _Kind(NE, SM, SP, "<s+(t) s+(t+tau) s-(t+tau) s-(t)>"),
}
_KIND_ORDER = tuple(CORRELATORS)


def _correlators_batch(L, rho_vec, tau):
    """All regression correlators for a stack of generators -> (N, kinds, T)."""
    n = L.shape[0]
    rho = rho_vec.reshape(n, 2, 2)
    x0 = np.stack([(k.B @ rho @ k.C).reshape(n, 4) for k in CORRELATORS.values()], axis=1)
    # Tr{A X} = sum_ij A_ij X_ji = vec(A^T) . vec(X)
    a_rows = np.stack([k.A.T.reshape(4) for k in CORRELATORS.values()])
    evals, V, Vinv, ok = _eig_batch(L)
    out = np.empty((n, len(CORRELATORS), tau.size), dtype=complex)
    if ok.any():
        left = np.einsum("kj,njm->nkm", a_rows, V[ok])
        right = np.einsum("nmj,nkj->nkm", Vinv[ok], x0[ok])
        out[ok] = _kernels.mode_sum(left * right, evals[ok], tau)
    for i in np.flatnonzero(~ok):
        y = _propagate_expm(L[i], x0[i], tau)  # (K, T, 4)
        out[i] = np.einsum("kj,ktj->kt", a_rows, y)
    return out


def regression_correlator(kind: str, tau_grid, L: Liouvillian, rho_ss: DensityMatrix):
    """Two-time steady-state correlator of the given ``kind`` on ``tau_grid`` (tau >= 0).

    ``kind`` is a key of :data:`CORRELATORS`.
    """
    if kind not in CORRELATORS:
        raise KeyError(f"unknown correlator {kind!r}; choose from {sorted(CORRELATORS)}")
    tau = np.asarray(tau_grid, float)
    if np.any(tau < 0):
        raise ValueError("regression correlators are defined here for tau >= 0")
    out = _correlators_batch(L.matrix[None], rho_ss.vec[None], tau)
    return out[0, _KIND_ORDER.index(kind)]


# Eight-term expansion of the normalised G2_{ab}(tau), a,b in {t, r}.  Each
# row: (correlator kind, power of beta*gamma_tot, numeric factor, sign,
# coefficient builder, drive divisor).  The two tau-independent rows that use
# <s-> and <s+s-> are handled in ``_G2_from``.
class _Term(NamedTuple):
    kind: str
    order: int
    factor: float
    coef: object
    divisor: str


_G2_TERMS = (
    _Term("lower_lower", 2, 0.5, lambda la, lb, w: np.conj(la) * np.conj(lb) * w ** 2, "rabi2"),
    _Term("raise_lower", 2, 0.5, lambda la, lb, w: np.conj(la) * lb, "abs2"),
    _Term("sandwich_lower", 3, -0.25, lambda la, lb, w: np.conj(lb) * w, "rabi_abs2"),
    _Term("population_lower", 3, -0.25, lambda la, lb, w: np.conj(la) * w, "rabi_abs2"),
    _Term("population_sandwich", 4, 1.0 / 16.0, lambda la, lb, w: 1.0, "abs4"),
)


@dataclass(frozen=True, eq=False)
class Engine:
    """Steady state and correlators for a batch of laser frequencies at one drive."""

    omega: np.ndarray
    rabi: complex
    tau: np.ndarray
    params: EmitterParams
    coherence_ratio: np.ndarray  # <s->_ss / Omega, shape (N,)
    population: np.ndarray  # <s+s->_ss, shape (N,)
    correlators: np.ndarray  # (N, kinds, T)

    def _divisor(self, name):
        om = self.rabi
        return {
            "rabi2": om * om,
            "abs2": abs(om) ** 2,
            "rabi_abs2": om * abs(om) ** 2,
            "abs4": abs(om) ** 4,
        }[name]

    def intensity(self, port: str):
        geo = self.params.geometry
        lam = geo.lam(port)
        z2 = abs(geo.z) ** 2
        w = geo.z ** 2 / z2
        bg = self.params.beta * self.params.gamma_tot
        return abs(lam) ** 2 / z2 + bg / z2 * np.real(
            (0.5 * self.params.beta - w * np.conj(lam)) * self.coherence_ratio)

    def G2(self, pair: str):
        """Unnormalised G2 for ``pair`` as an (N, T) real array."""
        geo = self.params.geometry
        la, lb = geo.lam(pair[0]), geo.lam(pair[1])
        z4 = abs(geo.z) ** 4
        w = geo.z ** 2 / abs(geo.z) ** 2
        bg = self.params.beta * self.params.gamma_tot
        aa, bb = abs(la) ** 2, abs(lb) ** 2
        s_ratio = self.coherence_ratio[:, None]
        p_ratio = (self.population / abs(self.rabi) ** 2)[:, None]
        out = np.full(self.correlators.shape[::2], aa * bb / z4)
        out = out - bg / z4 * np.real((aa * np.conj(lb) + bb * np.conj(la)) * w * s_ratio)
        out = out + bg ** 2 / (4.0 * z4) * (aa + bb) * p_ratio
        for term in _G2_TERMS:
            c = self.correlators[:, _KIND_ORDER.index(term.kind), :]
            val = term.coef(la, lb, w) * c / self._divisor(term.divisor)
            out = out + term.factor * bg ** term.order / z4 * np.real(val)
        return out


def solve(omega, rabi: complex, tau, params: EmitterParams) -> Engine:
    """Steady state and all regression correlators for each laser frequency in ``omega``."""
    validate(params)
    if rabi == 0:
        raise ValueError("finite-drive model needs Omega != 0; use the analytic weak-drive path")
    omega = np.atleast_1d(np.asarray(omega, float))
    tau = np.asarray(tau, float)
    if np.any(tau < 0):
        raise ValueError("tau grid must be non-negative; use mirror() for negative delays")
    L = _liouvillian_batch(omega - params.omega0, rabi, params.gamma_tot, params.gamma_d)
    rho = _steady_state_batch(L)
    coherence = rho[:, 2]  # Tr{s- rho} = rho_eg (row-major vec index 2)
    population = rho[:, 3].real
    corr = _correlators_batch(L, rho, tau)
    return Engine(omega=omega, rabi=complex(rabi), tau=tau, params=params,
                  coherence_ratio=coherence / rabi, population=population, correlators=corr)


def intensity_full(port: str, omega: float, rabi: complex, params: EmitterParams) -> float:
    """Output intensity at ``port`` (t or r), normalised so that I_t -> 1 off resonance."""
    if rabi == 0:
        raise ValueError("intensity_full needs Omega != 0; use analytic.weak_intensity_t")
    L = build_liouvillian(omega, rabi, params)
    rho = steady_state(L)
    eng_ratio = rho.expect(SM) / rabi
    geo = params.geometry
    lam = geo.lam(port)
    z2 = abs(geo.z) ** 2
    w = geo.z ** 2 / z2
    bg = params.beta * params.gamma_tot
    return float(abs(lam) ** 2 / z2 + bg / z2 * np.real((0.5 * params.beta - w * np.conj(lam)) * eng_ratio))


def intensity_batch(port: str, omega, rabi_abs, params: EmitterParams):
    """Vectorised intensity via the closed-form Bloch steady state.

    ``omega`` and ``rabi_abs`` (|Omega|) broadcast together. The global drive
    phase cancels in intensities, so only |Omega| is needed.
    """
    omega = np.asarray(omega, float)
    rabi_abs = np.asarray(rabi_abs, float)
    ratio = _kernels.bloch_coherence(omega - params.omega0, rabi_abs ** 2,
                                     params.gamma_tot, params.gamma_d)
    geo = params.geometry
    lam = geo.lam(port)
    z2 = abs(geo.z) ** 2
    w = geo.z ** 2 / z2
    bg = params.beta * params.gamma_tot
    return abs(lam) ** 2 / z2 + bg / z2 * np.real((0.5 * params.beta - w * np.conj(lam)) * ratio)


def g2_unnormalized(pair: str, omega, rabi: complex, tau, params: EmitterParams):
    """G2 (N, T) and the two intensities (N,) for each frequency in ``omega``."""
    eng = solve(omega, rabi, tau, params)
    return eng.G2(pair), eng.intensity(pair[0]), eng.intensity(pair[1])


def g2_full(pair: str, omega: float, rabi: complex, tau_grid, params: EmitterParams) -> CorrelationTrace:
    """Normalised g2 at any drive strength on a delay grid starting at 0."""
    if pair not in PAIRS:
        raise ValueError(f"unknown port pair {pair!r}")
    tau = np.asarray(tau_grid, float)
    if tau[0] != 0.0:
        raise ValueError("g2_full expects a delay grid starting at 0")
    G2, Ia, Ib = g2_unnormalized(pair, omega, rabi, tau, params)
    norm = Ia[0] * Ib[0]
    if norm == 0.0:
        raise DegenerateError(f"intensity product for {pair} is exactly zero")
    values = np.clip(G2[0] / norm, 0.0, None)
    return CorrelationTrace(pair=pair, tau_grid=tau, values=values, omega=float(omega))


def mirror(pos_same, pos_swapped, tau):
    """Two-sided trace from tau >= 0 halves, using g2_ab(-tau) = g2_ba(tau).

    Returns ``(tau_full, values_full)`` with tau_full running from -max to +max.
    """
    tau = np.asarray(tau, float)
    if tau[0] != 0.0:
        raise ValueError("mirror expects grids starting at 0")
    tau_full = np.concatenate([-tau[:0:-1], tau])
    values = np.concatenate([np.asarray(pos_swapped)[..., :0:-1], np.asarray(pos_same)], axis=-1)
    return tau_full, values
