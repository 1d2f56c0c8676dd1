"""Weighted least-squares extraction of emitter and noise parameters.

The model ties intensity scans at several powers and g2 traces together
through a shared parameter set. The decay rate is measured separately and is
held fixed. The drive is ``Omega = sqrt(eta * P)`` with ``P`` in uW.

The optimiser is a box-projected Levenberg-Marquardt with a central-difference
Jacobian; confidence intervals come from the linearised covariance, with a
profile-likelihood fallback for parameters sitting on a bound.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import (
    CorrelationTrace,
    EmitterParams,
    IntensityScan,
    MeasurementSet,
    NoiseModel,
    n_from_rabi,
)
from .dynamics import intensity_batch
from .imperfect import DEFAULT_NODES, DEFAULT_ORDER, g2_imperfect_pairs, spectral_average_intensity

__all__ = [
    "PARAM_NAMES",
    "DEFAULT_BOUNDS",
    "Z95",
    "IdentifiabilityError",
    "BoundWarning",
    "FitConfig",
    "FitResult",
    "ExperimentDesign",
    "unpack",
    "predict",
    "model_residuals",
    "jacobian",
    "levenberg_marquardt",
    "fit",
    "saturation_curve",
    "simulate_dataset",
]

PARAM_NAMES = ("beta", "gamma_d", "xi", "eta", "sigma_short", "sigma_long", "background_rr")
DEFAULT_BOUNDS = {
    "beta": (0.0, 1.0),
    "gamma_d": (0.0, 20.0),
    "xi": (-5.0, 5.0),
    "eta": (1e-6, 1e3),
    "sigma_short": (0.0, 30.0),
    "sigma_long": (0.0, 30.0),
    "background_rr": (0.0, 1.0),
}
# finite-difference scale for parameters that may sit at zero
_TYPICAL = {"beta": 0.1, "gamma_d": 0.1, "xi": 0.1, "eta": 0.01, "sigma_short": 0.1,
            "sigma_long": 0.1, "background_rr": 0.01}
Z95 = 1.959963984540054
CHI2_95 = Z95 ** 2


class IdentifiabilityError(ValueError):
    """The data carry no (or degenerate) information on a free parameter."""


class BoundWarning(UserWarning):
    """A fitted parameter ended on its box bound."""


@dataclass(frozen=True)
class FitConfig:
    """Free-parameter mask, start point, bounds and stopping rules.

    ``initial`` must give a value for every name in :data:`PARAM_NAMES`; the
    ones not listed in ``free`` stay fixed there. ``sigma_irf`` and the
    backgrounds of the other port pairs are fixed inputs.
    """

    initial: Mapping[str, float]
    free: tuple = PARAM_NAMES
    bounds: Mapping[str, tuple] = field(default_factory=dict)
    gtol: float = 1e-8
    xtol: float = 1e-8
    ftol: float = 1e-10
    max_iter: int = 100
    weighting: str = "poisson"
    sigma_irf: float = 0.0
    background: Mapping[str, float] = field(default_factory=dict)
    omega0: float = 0.0
    n_nodes: int = DEFAULT_NODES
    order: tuple = DEFAULT_ORDER
    profile: bool = True
    restarts: int = 0
    seed: int = 0

    def __post_init__(self):
        unknown = set(self.free) - set(PARAM_NAMES)
        if unknown:
            raise ValueError(f"unknown free parameters {sorted(unknown)}")
        missing = set(PARAM_NAMES) - set(self.initial)
        if missing:
            raise ValueError(f"initial values missing for {sorted(missing)}")
        if self.weighting not in ("poisson", "uniform"):
            raise ValueError(f"weighting must be 'poisson' or 'uniform', got {self.weighting!r}")
        for name, (lo, hi) in self.bounds.items():
            if name not in PARAM_NAMES or not lo < hi:
                raise ValueError(f"bad bound for {name}: ({lo}, {hi})")

    def bound(self, name):
        return tuple(self.bounds.get(name, DEFAULT_BOUNDS[name]))


@dataclass(frozen=True, eq=False)
class FitResult:
    """Point estimates with 95% intervals.

    ``covariance`` is over ``names`` (the free parameters); rows of parameters
    that ended on a bound are zero there, and their interval comes from the
    profile likelihood.
    """

    names: tuple
    estimates: dict
    ci: dict
    covariance: np.ndarray
    residual_norm: float
    chi2: float
    dof: int
    status: str
    n_iter: int
    at_bound: tuple = ()
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def reduced_chi2(self) -> float:
        return self.chi2 / max(self.dof, 1)

    def stderr(self, name) -> float:
        i = self.names.index(name)
        return float(math.sqrt(max(self.covariance[i, i], 0.0)))

    def as_dict(self) -> dict:
        return {
            "estimates": dict(self.estimates),
            "ci95": {k: list(v) for k, v in self.ci.items()},
            "stderr": {k: self.stderr(k) for k in self.names},
            "residual_norm": self.residual_norm,
            "chi2": self.chi2,
            "dof": self.dof,
            "status": self.status,
            "n_iter": self.n_iter,
            "at_bound": list(self.at_bound),
            "message": self.message,
        }


def unpack(values: Mapping[str, float], gamma_tot: float, sigma_irf: float = 0.0,
           background: Mapping[str, float] | None = None, omega0: float = 0.0):
    """(EmitterParams, NoiseModel, eta) from a flat parameter mapping."""
    params = EmitterParams(beta=float(values["beta"]), gamma_tot=gamma_tot,
                           gamma_d=float(values["gamma_d"]), omega0=omega0, xi=float(values["xi"]))
    bg = dict(background or {})
    bg["rr"] = float(values["background_rr"])
    noise = NoiseModel(sigma_short=float(values["sigma_short"]), sigma_long=float(values["sigma_long"]),
                       sigma_irf=sigma_irf, background=bg)
    return params, noise, float(values["eta"])


def _rabi(eta, power):
    return math.sqrt(eta * power)


def _trace_groups(traces):
    groups = {}
    for i, tr in enumerate(traces):
        if tr.power is None:
            raise ValueError(f"g2 trace {i} ({tr.pair}) has no drive power")
        key = (float(tr.power), float(tr.omega), tr.tau_grid.tobytes())
        groups.setdefault(key, []).append(i)
    return groups


def predict(scans: Sequence[IntensityScan], traces: Sequence[CorrelationTrace], params: EmitterParams,
            noise: NoiseModel, eta: float, n_nodes: int = DEFAULT_NODES, order=DEFAULT_ORDER):
    """Model values for each scan and trace layout (lists of arrays, same order)."""
    out_scans = []
    for scan in scans:
        rabi = _rabi(eta, scan.power)
        out_scans.append(spectral_average_intensity(
            lambda w, rabi=rabi: intensity_batch("t", w, rabi, params), noise.sigma_short, scan.grid, n_nodes))
    out_traces = [None] * len(traces)
    for (power, omega, _), idx in _trace_groups(traces).items():
        pairs = tuple(dict.fromkeys(traces[i].pair for i in idx))
        res = g2_imperfect_pairs(pairs, omega, _rabi(eta, power), traces[idx[0]].tau_grid, params, noise,
                                 order=order, n_nodes=n_nodes)
        for i in idx:
            out_traces[i] = res[traces[i].pair].values
    return out_scans, out_traces


def _sigmas(values, counts, weighting):
    """Per-point standard deviations from Poisson counts (value / sqrt(counts))."""
    values = np.asarray(values, float)
    if weighting == "uniform" or counts is None:
        return np.ones_like(values)
    counts = np.asarray(counts, float)
    pos = (counts > 0) & (values > 0)
    if not pos.any():
        raise ValueError("record has no counts to weight by")
    # counts per unit value; zero-count points get a one-count uncertainty
    scale = counts[pos].sum() / values[pos].sum()
    sig = np.full_like(values, 1.0 / scale)
    sig[pos] = values[pos] / np.sqrt(counts[pos])
    return sig


class _Problem:
    """Residual function of the free-parameter vector, with cached weights."""

    def __init__(self, data: MeasurementSet, cfg: FitConfig):
        self.data, self.cfg = data, cfg
        self.names = tuple(n for n in PARAM_NAMES if n in cfg.free)
        self.base = {n: float(cfg.initial[n]) for n in PARAM_NAMES}
        self.lo = np.array([cfg.bound(n)[0] for n in self.names])
        self.hi = np.array([cfg.bound(n)[1] for n in self.names])
        self.typical = np.array([_TYPICAL[n] for n in self.names])
        self.scans = list(data.intensity_scans)
        self.traces = list(data.g2_traces)
        self.observed = np.concatenate([s.values for s in self.scans] + [t.values for t in self.traces])
        self.sigma = np.concatenate([_sigmas(s.values, s.counts, cfg.weighting) for s in self.scans]
                                    + [_sigmas(t.values, t.counts, cfg.weighting) for t in self.traces])
        self.n_eval = 0

    def values(self, x):
        v = dict(self.base)
        v.update(zip(self.names, (float(a) for a in x)))
        return v

    def model(self, x):
        params, noise, eta = unpack(self.values(x), self.data.gamma_tot_fixed, self.cfg.sigma_irf,
                                    self.cfg.background, self.cfg.omega0)
        s, t = predict(self.scans, self.traces, params, noise, eta, self.cfg.n_nodes, self.cfg.order)
        return np.concatenate(s + t)

    def __call__(self, x):
        self.n_eval += 1
        return (self.model(x) - self.observed) / self.sigma


def model_residuals(data: MeasurementSet, params: EmitterParams, noise: NoiseModel, eta: float,
                    weighting: str = "poisson", n_nodes: int = DEFAULT_NODES, order=DEFAULT_ORDER):
    """Weighted residuals ``(model - data) / sigma`` over every scan and trace point."""
    s, t = predict(data.intensity_scans, data.g2_traces, params, noise, eta, n_nodes, order)
    model = np.concatenate(s + t)
    obs = np.concatenate([r.values for r in data.intensity_scans] + [r.values for r in data.g2_traces])
    sig = np.concatenate([_sigmas(r.values, r.counts, weighting) for r in data.intensity_scans]
                         + [_sigmas(r.values, r.counts, weighting) for r in data.g2_traces])
    return (model - obs) / sig


def jacobian(fun: Callable, x, lo, hi, typical, rel_step: float = 1e-5, f0=None):
    """Finite-difference Jacobian, central inside the box and one-sided at its faces.

    The one-sided stencil is second order, ``(-3 f0 + 4 f1 - f2) / 2h``.
    """
    x = np.asarray(x, float)
    f0 = fun(x) if f0 is None else f0
    J = np.empty((f0.size, x.size))
    for i in range(x.size):
        h = rel_step * max(abs(x[i]), typical[i])
        e = np.zeros_like(x)
        e[i] = h
        if x[i] - h >= lo[i] and x[i] + h <= hi[i]:
            J[:, i] = (fun(x + e) - fun(x - e)) / (2 * h)
        elif x[i] + 2 * h <= hi[i]:
            J[:, i] = (-3 * f0 + 4 * fun(x + e) - fun(x + 2 * e)) / (2 * h)
        else:
            J[:, i] = (3 * f0 - 4 * fun(x - e) + fun(x - 2 * e)) / (2 * h)
    return J


def _projected_gradient(g, x, lo, hi):
    pg = g.copy()
    pg[(x <= lo) & (g > 0)] = 0.0
    pg[(x >= hi) & (g < 0)] = 0.0
    return pg


def levenberg_marquardt(fun: Callable, x0, lo, hi, typical=None, gtol=1e-8, xtol=1e-8, ftol=1e-10,
                        max_iter=100):
    """Minimise ``|fun(x)|^2`` over the box ``lo <= x <= hi``.

    Trial steps are clipped to the box. Returns ``(x, f, J, status, n_iter)``
    where ``status`` is ``"converged"``, ``"max_iter"`` or ``"stalled"``.
    """
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    x = np.clip(np.asarray(x0, float), lo, hi)
    typical = np.ones_like(x) if typical is None else np.asarray(typical, float)
    f = fun(x)
    cost = f @ f
    lam = 1e-3
    status = "max_iter"
    J = None
    it = 0
    for it in range(1, max_iter + 1):
        J = jacobian(fun, x, lo, hi, typical, f0=f)
        g = J.T @ f
        A = J.T @ J
        d = np.maximum(np.diag(A), 1e-12 * max(np.diag(A).max(), 1e-300))
        pg = _projected_gradient(g, x, lo, hi)
        if np.max(np.abs(pg) / np.sqrt(d * max(cost, 1e-300))) < gtol:
            status = "converged"
            break
        # components held on a face by the gradient are frozen for this step
        move = ~(((x <= lo) & (g > 0)) | ((x >= hi) & (g < 0)))
        sub = np.ix_(move, move)
        while True:
            step = np.zeros_like(x)
            M = A[sub] + lam * np.diag(d[move])
            try:
                step[move] = np.linalg.solve(M, -g[move])
            except np.linalg.LinAlgError:
                step[move] = np.linalg.lstsq(M, -g[move], rcond=None)[0]
            xn = np.clip(x + step, lo, hi)
            fn = fun(xn)
            cn = fn @ fn
            if np.isfinite(cn) and cn < cost:
                break
            lam *= 4.0
            if lam > 1e14:
                status = "stalled"
                break
        if status == "stalled":
            # no downhill step left: treat as converged if already flat
            status = "converged" if np.max(np.abs(pg) / np.sqrt(d * max(cost, 1e-300))) < 1e-4 else "stalled"
            break
        dx = xn - x
        decrease = (cost - cn) / max(cost, 1e-300)
        x, f, cost = xn, fn, cn
        lam = max(lam / 3.0, 1e-12)
        if np.all(np.abs(dx) <= xtol * (np.abs(x) + typical)) or decrease < ftol:
            status = "converged"
            J = jacobian(fun, x, lo, hi, typical, f0=f)
            break
    return x, f, J, status, it


def _check_design(data: MeasurementSet, cfg: FitConfig):
    if "eta" in cfg.free and len(data.powers) < 2:
        raise IdentifiabilityError("eta is free but the intensity scans cover a single power; "
                                   "beta and eta are then degenerate")
    pairs = {t.pair for t in data.g2_traces}
    if "background_rr" in cfg.free and "rr" not in pairs:
        raise IdentifiabilityError("background_rr is free but there is no rr trace")
    if "sigma_long" in cfg.free and not data.g2_traces:
        raise IdentifiabilityError("sigma_long is free but there are no g2 traces")
    if "sigma_short" in cfg.free and not data.intensity_scans:
        raise IdentifiabilityError("sigma_short is free but there are no intensity scans")


def _rank_check(J, names, active):
    cols = J[:, active]
    if cols.size == 0:
        return
    norms = np.linalg.norm(cols, axis=0)
    dead = [names[i] for i, k in zip(np.flatnonzero(active), norms) if k == 0.0]
    if dead:
        raise IdentifiabilityError(f"data carry no information on {dead}")
    u, s, vt = np.linalg.svd(cols / norms, full_matrices=False)
    if s[-1] < 1e-8 * s[0]:
        worst = np.argsort(np.abs(vt[-1]))[::-1][:2]
        act = np.flatnonzero(active)
        raise IdentifiabilityError("Jacobian is rank deficient; degenerate combination of "
                                   f"{[names[act[i]] for i in worst]}")


def _at_bound(x, lo, hi, g, typical):
    tol = 1e-6 * typical
    low = (x - lo <= tol) & (g >= 0)
    high = (hi - x <= tol) & (g <= 0)
    return low | high


def _profile_ci(prob: _Problem, x, cost, k, sd_guess, cfg: FitConfig):
    """95% interval for parameter ``k`` from the profile of chi^2 (threshold 3.84)."""
    lo, hi = prob.lo, prob.hi
    others = np.array([i for i in range(x.size) if i != k])

    def profile(v):
        if others.size == 0:
            xx = x.copy()
            xx[k] = v
            f = prob(xx)
            return f @ f
        fixed = x.copy()
        fixed[k] = v

        def sub(y):
            z = fixed.copy()
            z[others] = y
            return prob(z)

        y, f, *_ = levenberg_marquardt(sub, x[others], lo[others], hi[others], prob.typical[others],
                                       gtol=1e-6, xtol=1e-6, ftol=1e-8, max_iter=30)
        return f @ f

    def side(direction):
        edge = hi[k] if direction > 0 else lo[k]
        if abs(edge - x[k]) <= 1e-12:
            return x[k]
        step = max(sd_guess, 1e-3 * prob.typical[k])
        inner, outer = x[k], None
        for _ in range(8):
            v = float(np.clip(inner + direction * step, min(lo[k], hi[k]), max(lo[k], hi[k])))
            if profile(v) - cost >= CHI2_95:
                outer = v
                break
            inner = v
            if v == edge:
                return edge
            step *= 2.0
        if outer is None:
            return inner
        for _ in range(8):
            mid = 0.5 * (inner + outer)
            if profile(mid) - cost >= CHI2_95:
                outer = mid
            else:
                inner = mid
        return 0.5 * (inner + outer)

    return side(-1), side(+1)


def fit(data: MeasurementSet, config: FitConfig) -> FitResult:
    """Fit the free parameters of ``config`` to ``data``.

    Raises
    ------
    IdentifiabilityError
        When the design cannot constrain a free parameter (single power with
        ``eta`` free, missing trace for a free background, or a numerically
        rank-deficient Jacobian at the solution).
    """
    _check_design(data, config)
    prob = _Problem(data, config)
    if not prob.names:
        raise ValueError("no free parameters")
    x0 = np.array([config.initial[n] for n in prob.names], float)
    best = levenberg_marquardt(prob, x0, prob.lo, prob.hi, prob.typical, config.gtol, config.xtol,
                               config.ftol, config.max_iter)
    rng = np.random.default_rng(config.seed)
    for _ in range(config.restarts):
        trial = np.clip(x0 + rng.normal(0, 0.1, x0.size) * np.maximum(np.abs(x0), prob.typical),
                        prob.lo, prob.hi)
        cand = levenberg_marquardt(prob, trial, prob.lo, prob.hi, prob.typical, config.gtol,
                                   config.xtol, config.ftol, config.max_iter)
        if cand[1] @ cand[1] < best[1] @ best[1]:
            best = cand
    x, f, J, status, n_iter = best
    cost = float(f @ f)
    g = J.T @ f
    bound_mask = _at_bound(x, prob.lo, prob.hi, g, prob.typical)
    active = ~bound_mask
    _rank_check(J, prob.names, active)

    cov = np.zeros((x.size, x.size))
    A = J.T @ J
    if active.any():
        cov[np.ix_(active, active)] = np.linalg.inv(A[np.ix_(active, active)])
    cov = 0.5 * (cov + cov.T)

    ci = {}
    for i, name in enumerate(prob.names):
        if active[i]:
            half = Z95 * math.sqrt(max(cov[i, i], 0.0))
            ci[name] = (max(x[i] - half, prob.lo[i]), min(x[i] + half, prob.hi[i]))
    at_bound = tuple(n for n, b in zip(prob.names, bound_mask) if b)
    for i in np.flatnonzero(bound_mask):
        name = prob.names[i]
        warnings.warn(f"{name} ended on its bound at {x[i]:g}", BoundWarning, stacklevel=2)
        try:
            sd_full = math.sqrt(max(np.linalg.pinv(A)[i, i], 0.0))
        except np.linalg.LinAlgError:
            sd_full = prob.typical[i]
        if config.profile:
            ci[name] = _profile_ci(prob, x, cost, i, sd_full, config)
        else:
            ci[name] = (max(x[i] - Z95 * sd_full, prob.lo[i]), min(x[i] + Z95 * sd_full, prob.hi[i]))
    estimates = {n: float(v) for n, v in zip(prob.names, x)}
    dof = f.size - int(active.sum())
    msg = f"{prob.n_eval} model evaluations"
    return FitResult(names=prob.names, estimates=estimates, ci=ci, covariance=cov,
                     residual_norm=math.sqrt(cost), chi2=cost, dof=dof, status=status, n_iter=n_iter,
                     at_bound=at_bound, message=msg)


def saturation_curve(powers, params: EmitterParams, noise: NoiseModel, eta: float, omega=None,
                     n_nodes: int = DEFAULT_NODES):
    """Spectrally averaged transmission at the emitter frequency across a power ladder.

    Returns ``(n, I_t)`` with ``n = 2 |Omega|^2 / gamma_tot^2`` the mean photon
    number per lifetime.
    """
    powers = np.asarray(powers, float)
    if np.any(powers <= 0):
        raise ValueError("powers must be positive")
    omega = params.omega0 if omega is None else omega
    rabi = np.sqrt(eta * powers)
    n = np.array([n_from_rabi(r, params.gamma_tot) for r in rabi])
    grid = np.array([float(omega)])
    I = np.array([spectral_average_intensity(lambda w, r=r: intensity_batch("t", w, r, params),
                                             noise.sigma_short, grid, n_nodes)[0] for r in rabi])
    return n, I


@dataclass(frozen=True)
class ExperimentDesign:
    """Where and how long a synthetic experiment measures.

    ``intensity_counts`` and ``coincidence_counts`` are expected counts at
    I_t = 1 and g2 = 1 for unit exposure.
    """

    powers: tuple
    grid: np.ndarray
    g2_power: float
    tau_grid: np.ndarray
    g2_omegas: tuple = (0.0,)
    pairs: tuple = ("tt", "rr", "tr")
    intensity_counts: float = 1e4
    coincidence_counts: float = 1e4
    exposure: float = 1.0


def _draw(model, base, exposure, rng, shot_noise):
    expected = np.asarray(model, float) * base * exposure
    if not shot_noise:
        return model.copy(), expected
    if exposure == 0.0:
        return model.copy(), np.zeros_like(expected)
    counts = rng.poisson(expected).astype(float)
    return counts / (base * exposure), counts


def simulate_dataset(design: ExperimentDesign, params: EmitterParams, noise: NoiseModel, eta: float,
                     rng: np.random.Generator | None = None, shot_noise: bool = True,
                     n_nodes: int = DEFAULT_NODES, order=DEFAULT_ORDER) -> MeasurementSet:
    """Model, and optionally Poisson-sample, a full measurement set.

    Without shot noise the values are the model itself and the count columns
    hold the expected counts. With zero exposure the counts are all zero and
    the values stay at the model.
    """
    if shot_noise and rng is None:
        raise ValueError("shot noise needs an rng")
    grid = np.asarray(design.grid, float)
    tau = np.asarray(design.tau_grid, float)
    scans = [IntensityScan(power=float(p), grid=grid, values=np.zeros(grid.size)) for p in design.powers]
    traces = [CorrelationTrace(pair=pr, tau_grid=tau, values=np.zeros(tau.size), power=float(design.g2_power),
                               omega=float(om)) for om in design.g2_omegas for pr in design.pairs]
    ms, mt = predict(scans, traces, params, noise, eta, n_nodes, order)
    out_scans, out_traces = [], []
    for s, m in zip(scans, ms):
        v, c = _draw(m, design.intensity_counts, design.exposure, rng, shot_noise)
        out_scans.append(IntensityScan(power=s.power, grid=grid, values=v, counts=c))
    for t, m in zip(traces, mt):
        v, c = _draw(m, design.coincidence_counts, design.exposure, rng, shot_noise)
        out_traces.append(CorrelationTrace(pair=t.pair, tau_grid=tau, values=v, counts=c, power=t.power,
                                           omega=t.omega))
    return MeasurementSet(intensity_scans=tuple(out_scans), g2_traces=tuple(out_traces),
                          gamma_tot_fixed=params.gamma_tot)
