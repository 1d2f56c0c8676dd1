"""Domain types, units and grids shared by every other module.

Conventions: all frequencies and rates are angular (rad/ns), all times in ns.
Frequencies are stored as detunings from a reference frequency, so an emitter
with ``omega0 = 0`` sits exactly at the reference.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

__all__ = [
    "DomainError",
    "SpanError",
    "DegenerateError",
    "EmitterParams",
    "ScatterGeometry",
    "DriveSpec",
    "NoiseModel",
    "ComplexSpectrum",
    "CorrelationTrace",
    "TwoPhotonSector",
    "IntensityScan",
    "MeasurementSet",
    "PAIRS",
    "validate",
    "angular_from_linear",
    "linear_from_angular",
    "make_grid",
    "is_uniform",
    "rabi_from_n",
    "n_from_rabi",
]

PAIRS = ("tt", "rr", "tr", "rt")
WEAK_DRIVE_THRESHOLD = 1e-2


class DomainError(ValueError):
    """A parameter lies outside its physical domain."""


class SpanError(ValueError):
    """A grid is too narrow (or too coarse) for the requested transform."""


class DegenerateError(ZeroDivisionError):
    """A normalisation or inversion would divide by an exact zero."""


@dataclass(frozen=True)
class EmitterParams:
    """Physical parameters of the emitter-waveguide system.

    Parameters
    ----------
    beta : float
        Waveguide coupling efficiency, gamma_wg / gamma_tot, in [0, 1].
    gamma_tot : float
        Total decay rate (1/ns).
    gamma_d : float
        Pure-dephasing rate (1/ns).
    omega0 : float
        Emitter transition frequency as an offset from the reference (rad/ns).
    xi : float
        Fano parameter; the facet reflections enter through z = 1/(1 + i xi).
    """

    beta: float
    gamma_tot: float
    gamma_d: float = 0.0
    omega0: float = 0.0
    xi: float = 0.0

    def replace(self, **changes) -> "EmitterParams":
        values = {k: getattr(self, k) for k in ("beta", "gamma_tot", "gamma_d", "omega0", "xi")}
        values.update(changes)
        return EmitterParams(**values)

    @property
    def geometry(self) -> "ScatterGeometry":
        return ScatterGeometry.from_xi(self.xi)


def validate(params: EmitterParams) -> EmitterParams:
    """Return ``params`` unchanged if every invariant holds, else raise DomainError."""
    checks = [
        ("beta", params.beta, 0.0 <= params.beta <= 1.0, "0 <= beta <= 1"),
        ("gamma_tot", params.gamma_tot, params.gamma_tot > 0.0, "gamma_tot > 0"),
        ("gamma_d", params.gamma_d, params.gamma_d >= 0.0, "gamma_d >= 0"),
        ("xi", params.xi, math.isfinite(params.xi), "xi finite"),
        ("omega0", params.omega0, math.isfinite(params.omega0), "omega0 finite"),
    ]
    for name, value, ok, bound in checks:
        if not (ok and math.isfinite(value)):
            raise DomainError(f"{name}={value!r} violates {bound}")
    return params


@dataclass(frozen=True)
class ScatterGeometry:
    """Fano coefficient and the input-output mixing coefficients it induces."""

    z: complex
    lambda_tt: complex
    lambda_rt: complex

    @classmethod
    def from_xi(cls, xi: float) -> "ScatterGeometry":
        z = 1.0 / complex(1.0, xi)
        return cls(z=z, lambda_tt=z, lambda_rt=z - 1.0)

    def lam(self, port: str) -> complex:
        """Lambda_{port, t}: how the driven input leaks into output ``port``."""
        if port == "t":
            return self.lambda_tt
        if port == "r":
            return self.lambda_rt
        raise ValueError(f"unknown port {port!r}")


def rabi_from_n(n: float, gamma_tot: float) -> float:
    """Drive strength with mean photon number per lifetime n = 2|Omega|^2/gamma_tot^2."""
    return gamma_tot * math.sqrt(n / 2.0)


def n_from_rabi(rabi: complex, gamma_tot: float) -> float:
    return 2.0 * abs(rabi) ** 2 / gamma_tot ** 2


@dataclass(frozen=True)
class DriveSpec:
    """A monochromatic cw drive.

    ``flux_scale`` is bookkeeping only: it converts |alpha|^2 F to photons/ns.
    """

    omega: float
    rabi: complex
    flux_scale: float = 1.0
    gamma_tot: float | None = None
    threshold: float = WEAK_DRIVE_THRESHOLD

    @property
    def weak(self) -> bool:
        if self.gamma_tot is None:
            raise ValueError("weak-drive flag needs gamma_tot")
        return n_from_rabi(self.rabi, self.gamma_tot) < self.threshold


@dataclass(frozen=True)
class NoiseModel:
    """Measurement-chain imperfections.

    Spectral-diffusion widths and detector jitter are standard deviations in
    rad/ns and ns respectively. ``background`` maps a port pair to B in [0, 1].
    """

    sigma_short: float = 0.0
    sigma_long: float = 0.0
    sigma_irf: float = 0.0
    background: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("sigma_short", "sigma_long", "sigma_irf"):
            if not getattr(self, name) >= 0.0:
                raise DomainError(f"{name} must be >= 0")
        for pair, b in self.background.items():
            if pair not in PAIRS:
                raise DomainError(f"unknown port pair {pair!r} in background")
            if not 0.0 <= b <= 1.0:
                raise DomainError(f"background[{pair}]={b} outside [0, 1]")

    def b(self, pair: str) -> float:
        if pair in self.background:
            return self.background[pair]
        # tr and rt are the same detector pair
        swapped = pair[::-1]
        return self.background.get(swapped, 0.0)


def is_uniform(grid, rtol: float = 1e-6) -> bool:
    grid = np.asarray(grid, float)
    if grid.ndim != 1 or grid.size < 2:
        return False
    steps = np.diff(grid)
    return bool(np.all(steps > 0) and np.ptp(steps) <= rtol * abs(steps.mean()) + 1e-15)


@dataclass(frozen=True, eq=False)
class ComplexSpectrum:
    """Complex samples on a uniform, strictly increasing frequency grid."""

    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, float)
        values = np.asarray(self.values, complex)
        if not is_uniform(grid):
            raise ValueError("spectrum grid must be uniform and strictly increasing")
        if values.shape != grid.shape:
            raise ValueError("values length must match grid length")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    @property
    def modulus(self):
        return np.abs(self.values)

    @property
    def phase_deg(self):
        return np.degrees(np.angle(self.values))


@dataclass(frozen=True, eq=False)
class CorrelationTrace:
    """Real g2 samples on a uniform delay grid for one port pair.

    ``power`` and ``omega`` record the drive (uW, rad/ns) when known.
    """

    pair: str
    tau_grid: np.ndarray
    values: np.ndarray
    counts: np.ndarray | None = None
    power: float | None = None
    omega: float = 0.0

    def __post_init__(self):
        if self.pair not in PAIRS:
            raise ValueError(f"unknown port pair {self.pair!r}")
        tau = np.asarray(self.tau_grid, float)
        values = np.asarray(self.values, float)
        if not is_uniform(tau):
            raise ValueError("tau grid must be uniform and strictly increasing")
        if values.shape != tau.shape:
            raise ValueError("values length must match tau grid length")
        if np.any(values < 0):
            raise ValueError("g2 samples must be non-negative")
        object.__setattr__(self, "tau_grid", tau)
        object.__setattr__(self, "values", values)
        if self.counts is not None:
            object.__setattr__(self, "counts", np.asarray(self.counts, float))

    @property
    def symmetric(self) -> bool:
        return bool(np.isclose(self.tau_grid[0], -self.tau_grid[-1]))

    @property
    def one_sided(self) -> bool:
        return bool(self.tau_grid[0] == 0.0)


@dataclass(frozen=True, eq=False)
class TwoPhotonSector:
    """T(omega - Delta, omega + Delta, omega, omega) sampled over Delta."""

    omega: float
    delta_grid: np.ndarray
    values: np.ndarray


@dataclass(frozen=True, eq=False)
class IntensityScan:
    """Transmitted intensity vs laser detuning at one input power (uW)."""

    power: float
    grid: np.ndarray
    values: np.ndarray
    counts: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "grid", np.asarray(self.grid, float))
        object.__setattr__(self, "values", np.asarray(self.values, float))
        if self.values.shape != self.grid.shape:
            raise ValueError("intensity values must match the frequency grid")
        if self.counts is not None:
            object.__setattr__(self, "counts", np.asarray(self.counts, float))


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    """Intensity scans at several powers plus g2 traces, with count weights."""

    intensity_scans: tuple[IntensityScan, ...]
    g2_traces: tuple[CorrelationTrace, ...]
    gamma_tot_fixed: float

    @property
    def powers(self):
        return sorted({s.power for s in self.intensity_scans})


def angular_from_linear(f):
    """GHz -> rad/ns."""
    return 2.0 * np.pi * np.asarray(f, float) if np.ndim(f) else 2.0 * math.pi * float(f)


def linear_from_angular(w):
    """rad/ns -> GHz."""
    return np.asarray(w, float) / (2.0 * np.pi) if np.ndim(w) else float(w) / (2.0 * math.pi)


def make_grid(lo: float, hi: float, n: int) -> np.ndarray:
    """``n`` equally spaced samples from ``lo`` to ``hi`` inclusive."""
    if not (math.isfinite(lo) and math.isfinite(hi)) or not lo < hi:
        raise ValueError(f"need finite lo < hi, got lo={lo}, hi={hi}")
    if int(n) != n or n < 2:
        raise ValueError(f"need an integer n >= 2, got {n}")
    return np.linspace(lo, hi, int(n))
