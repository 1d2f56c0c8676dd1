import math
import warnings

import numpy as np
import pytest
from scipy.optimize import least_squares

from fewphoton.fit import (
    PARAM_NAMES,
    BoundWarning,
    ExperimentDesign,
    FitConfig,
    IdentifiabilityError,
    _Problem,
    _rank_check,
    fit,
    jacobian,
    levenberg_marquardt,
    model_residuals,
    saturation_curve,
    simulate_dataset,
    unpack,
)

TWO_PI = 2 * math.pi
TRUTH = {"beta": 0.87, "gamma_d": 0.0, "xi": -0.26, "eta": 0.11, "sigma_short": TWO_PI * 0.33,
         "sigma_long": TWO_PI * 0.66, "background_rr": 0.07}
START = {"beta": 0.8, "gamma_d": 0.3, "xi": -0.1, "eta": 0.15, "sigma_short": 1.5, "sigma_long": 3.0,
         "background_rr": 0.03}
NODES = 31


def design(**kw):
    base = dict(powers=(2.0, 10.0, 50.0), grid=np.linspace(-40, 40, 61), g2_power=26.6,
                tau_grid=np.linspace(-2, 2, 81))
    base.update(kw)
    return ExperimentDesign(**base)


def truth_model():
    return unpack(TRUTH, 7.65, sigma_irf=0.2)


def dataset(rng=None, shot_noise=False, **kw):
    params, noise, eta = truth_model()
    return simulate_dataset(design(**kw), params, noise, eta, rng=rng, shot_noise=shot_noise, n_nodes=NODES)


def config(**kw):
    base = dict(initial=START, sigma_irf=0.2, n_nodes=NODES, profile=False)
    base.update(kw)
    return FitConfig(**base)


def test_noiseless_recovery():
    data = dataset()
    free = tuple(n for n in PARAM_NAMES if n != "gamma_d")
    start = dict(START, gamma_d=0.0)
    res = fit(data, config(initial=start, free=free))
    assert res.converged
    for name in free:
        assert res.estimates[name] == pytest.approx(TRUTH[name], rel=1e-4, abs=1e-6), name
    assert res.chi2 < 1e-6


def test_residuals_vanish_at_truth():
    data = dataset()
    params, noise, eta = truth_model()
    r = model_residuals(data, params, noise, eta, n_nodes=NODES)
    assert np.max(np.abs(r)) < 1e-10


def test_jacobian_matches_analytic():
    A = np.array([[1.0, 2.0], [3.0, -1.0], [0.5, 0.0]])

    def fun(x):
        return A @ x + np.array([x[0] ** 2, 0.0, math.sin(x[1])])

    def exact(x):
        return A + np.array([[2 * x[0], 0.0], [0.0, 0.0], [0.0, math.cos(x[1])]])

    lo, hi, typ = np.array([0.0, -1.0]), np.array([2.0, 1.0]), np.ones(2)
    for x in (np.array([0.7, 0.2]), np.array([0.0, 0.2]), np.array([0.7, 1.0])):
        np.testing.assert_allclose(jacobian(fun, x, lo, hi, typ), exact(x), atol=1e-8)


def test_lm_matches_scipy_on_bounded_problem():
    t = np.linspace(0, 3, 40)
    y = 2.0 * np.exp(-1.3 * t) - 0.2 + 0.05 * np.cos(5 * t)

    def fun(x):
        return x[0] * np.exp(-x[1] * t) + x[2] - y

    lo, hi = np.array([0, 0, 0.0]), np.array([5, 5, 1.0])
    x, f, J, status, _ = levenberg_marquardt(fun, np.array([1.0, 0.5, 0.5]), lo, hi)
    ref = least_squares(fun, [1.0, 0.5, 0.5], bounds=(lo, hi), method="trf", xtol=1e-12, ftol=1e-12)
    assert status == "converged"
    np.testing.assert_allclose(x, ref.x, atol=1e-6)
    # the offset wants to be negative and sits on its lower bound
    assert x[2] == 0.0


def test_fit_matches_scipy_trf():
    rng = np.random.default_rng(7)
    data = dataset(rng=rng, shot_noise=True)
    free = ("beta", "xi", "eta", "sigma_short")
    cfg = config(free=free, initial=dict(TRUTH, beta=0.8, xi=-0.1, eta=0.15, sigma_short=1.5))
    res = fit(data, cfg)
    prob = _Problem(data, cfg)
    x0 = [cfg.initial[n] for n in prob.names]
    ref = least_squares(prob, x0, bounds=(prob.lo, prob.hi), method="trf", x_scale=prob.typical,
                        xtol=1e-10, ftol=1e-10)
    for i, name in enumerate(prob.names):
        assert res.estimates[name] == pytest.approx(ref.x[i], abs=0.2 * res.stderr(name)), name
    assert res.chi2 == pytest.approx(2 * ref.cost, rel=1e-5)


def test_single_power_with_eta_free():
    data = dataset(powers=(10.0,))
    with pytest.raises(IdentifiabilityError, match="eta"):
        fit(data, config())


def test_missing_rr_with_background_free():
    data = dataset(pairs=("tt", "tr"))
    with pytest.raises(IdentifiabilityError, match="rr"):
        fit(data, config())


def test_rank_deficiency_detected():
    J = np.array([[1.0, 2.0, 0.0], [2.0, 4.0, 1.0], [3.0, 6.0, 0.0]])
    active = np.ones(3, bool)
    with pytest.raises(IdentifiabilityError, match="rank"):
        _rank_check(J, ("a", "b", "c"), active)
    J[:, 1] = 0.0
    with pytest.raises(IdentifiabilityError, match="no information"):
        _rank_check(J, ("a", "b", "c"), active)
    # a frozen column is ignored
    _rank_check(J, ("a", "b", "c"), np.array([True, False, True]))


def test_bound_parameter_gets_profile_interval():
    data = dataset(rng=np.random.default_rng(3), shot_noise=True)
    cfg = config(free=("beta", "gamma_d", "xi"), initial=dict(TRUTH, gamma_d=0.2), profile=True)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", BoundWarning)
        res = fit(data, cfg)
    assert res.converged
    if "gamma_d" in res.at_bound:
        assert any(issubclass(w.category, BoundWarning) for w in caught)
        lo, hi = res.ci["gamma_d"]
        assert lo == 0.0 and 0.0 < hi < 1.0
        i = res.names.index("gamma_d")
        assert np.all(res.covariance[i] == 0.0)
    else:
        assert res.ci["gamma_d"][0] <= res.estimates["gamma_d"] <= res.ci["gamma_d"][1]


def test_fit_config_validation():
    with pytest.raises(ValueError):
        FitConfig(initial=START, free=("beta", "alpha"))
    with pytest.raises(ValueError):
        FitConfig(initial={"beta": 0.8})
    with pytest.raises(ValueError):
        FitConfig(initial=START, weighting="gaussian")
    with pytest.raises(ValueError):
        FitConfig(initial=START, bounds={"beta": (1.0, 0.0)})


def test_saturation_curve_monotone():
    params, noise, eta = truth_model()
    n, I = saturation_curve(np.geomspace(0.1, 1000, 20), params, noise, eta, n_nodes=NODES)
    assert np.all(np.diff(n) > 0) and np.all(np.diff(I) > 0)
    assert I[0] < 0.35 and I[-1] > 0.9
    with pytest.raises(ValueError):
        saturation_curve([0.0, 1.0], params, noise, eta)


def test_simulation_modes():
    rng = np.random.default_rng(0)
    clean = dataset()
    zero = dataset(rng=rng, shot_noise=True, exposure=0.0)
    for a, b in zip(clean.intensity_scans, zero.intensity_scans):
        np.testing.assert_array_equal(a.values, b.values)
        assert np.all(b.counts == 0)
    np.testing.assert_allclose(clean.intensity_scans[0].counts, 1e4 * clean.intensity_scans[0].values)
    a = dataset(rng=np.random.default_rng(5), shot_noise=True)
    b = dataset(rng=np.random.default_rng(5), shot_noise=True)
    np.testing.assert_array_equal(a.g2_traces[0].values, b.g2_traces[0].values)
    with pytest.raises(ValueError):
        dataset(shot_noise=True)
