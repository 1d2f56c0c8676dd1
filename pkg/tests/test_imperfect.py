import itertools
import math
import warnings

import numpy as np
import pytest
from scipy.integrate import quad

from fewphoton.analytic import g2_weak, tau_kernel, weak_intensity_t
from fewphoton.core import CorrelationTrace, EmitterParams, NoiseModel, SpanError, rabi_from_n
from fewphoton.dynamics import g2_unnormalized, intensity_batch
from fewphoton.imperfect import (
    background_mix,
    g2_imperfect,
    g2_imperfect_pairs,
    gauss_nodes,
    irf_convolve,
    irf_kernel,
    predicted_tbar,
    spectral_average_g2,
    spectral_average_intensity,
)

TWO_PI = 2 * math.pi


def gauss_average(f, sigma):
    """Brute-force adaptive quadrature of f against N(0, sigma^2)."""
    pdf = lambda d: math.exp(-0.5 * (d / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))  # noqa: E731
    return quad(lambda d: f(d) * pdf(d), -10 * sigma, 10 * sigma, limit=200, epsabs=1e-13)[0]


def test_gauss_nodes_moments():
    x, w = gauss_nodes(2.0, 61)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    assert w @ x == pytest.approx(0.0, abs=1e-12)
    assert w @ x ** 2 == pytest.approx(4.0, rel=1e-12)
    assert w @ x ** 4 == pytest.approx(3 * 16.0, rel=1e-12)
    x0, w0 = gauss_nodes(0.0)
    assert x0.tolist() == [0.0] and w0.tolist() == [1.0]
    with pytest.raises(ValueError):
        gauss_nodes(1.0, 400)


def test_intensity_average_against_quadrature(table_params):
    sigma = TWO_PI * 0.33
    grid = np.linspace(-30, 30, 13)
    got = spectral_average_intensity(lambda w: weak_intensity_t(w, table_params), sigma, grid)
    want = [gauss_average(lambda d, w=w: float(weak_intensity_t(w - d, table_params)), sigma) for w in grid]
    np.testing.assert_allclose(got, want, atol=1e-9)
    # the dip gets shallower
    assert got[6] > weak_intensity_t(0.0, table_params)


def test_intensity_average_identities(table_params):
    grid = np.linspace(-60, 60, 601)
    vals = weak_intensity_t(grid, table_params)
    np.testing.assert_array_equal(spectral_average_intensity(vals, 0.0, grid), vals)
    np.testing.assert_allclose(spectral_average_intensity(np.full(grid.size, 0.7), 3.0, grid), 0.7, rtol=1e-12)
    # sampled input interpolates onto the same answer
    callable_path = spectral_average_intensity(lambda w: weak_intensity_t(w, table_params), 2.0, grid)
    sampled_path = spectral_average_intensity(vals, 2.0, grid)
    assert np.max(np.abs(callable_path - sampled_path)[100:-100]) < 1e-3


def test_intensity_average_span_error():
    grid = np.linspace(-1, 1, 21)
    with pytest.raises(SpanError):
        spectral_average_intensity(np.ones(21), 2.0, grid)


def test_g2_average_sigma_zero_and_uncorrelated(table_params):
    rabi = rabi_from_n(0.05, table_params.gamma_tot)
    tau = np.linspace(0, 1, 11)
    grid = np.array([0.0, 3.0])

    def G2(w, t):
        return g2_unnormalized("tt", w, rabi, t, table_params)[0]

    def I(w):
        return intensity_batch("t", w, rabi, table_params)

    plain = G2(grid, tau) / (I(grid) ** 2)[:, None]
    np.testing.assert_allclose(spectral_average_g2(G2, I, I, 0.0, grid, tau), plain, rtol=1e-12)
    flat = spectral_average_g2(lambda w, t: np.outer(I(w) ** 2, np.ones(t.size)), I, I, 3.0, grid, tau)
    np.testing.assert_allclose(flat, 1.0, rtol=1e-12)


def test_g2_average_against_quadrature(table_params):
    # weak-drive numerator and denominator, each averaged by adaptive quadrature
    sigma = TWO_PI * 0.66
    p = table_params
    t = np.array([0.0, 0.3])

    def num(w, tt):
        from fewphoton.analytic import g2_weak_numerator
        return g2_weak_numerator("tt", np.asarray(w)[:, None], np.asarray(tt)[None, :], p)

    def amp2(w):
        from fewphoton.analytic import port_amplitude
        return np.abs(port_amplitude("t", w, p)) ** 2

    den = gauss_average(lambda d: float(amp2(-d)) ** 2, sigma)
    want = [gauss_average(lambda d, k=k: float(num(np.array([-d]), t)[0, k]), sigma) / den for k in range(2)]
    # poles near the real axis: Gauss-Hermite converges algebraically here
    got = spectral_average_g2(num, amp2, amp2, sigma, np.array([0.0]), t)[0]
    np.testing.assert_allclose(got, want, rtol=1e-4)
    fine = spectral_average_g2(num, amp2, amp2, sigma, np.array([0.0]), t, n_nodes=201)[0]
    np.testing.assert_allclose(fine, want, rtol=1e-8)
    assert got[0] < 0.2 * g2_weak("tt", 0.0, 0.0, p)


def test_irf_identities():
    tau = np.linspace(-2, 2, 201)
    const = CorrelationTrace("tr", tau, np.full(tau.size, 1.3))
    np.testing.assert_allclose(irf_convolve(const, 0.2).values, 1.3, rtol=1e-12)
    tr = CorrelationTrace("tt", tau, 1 + np.exp(-tau ** 2))
    np.testing.assert_array_equal(irf_convolve(tr, 0.0).values, tr.values)
    k = irf_kernel(0.2, 0.02)
    assert k.sum() == pytest.approx(1.0, abs=1e-15)
    assert k.size == 2 * 50 + 1


def test_irf_gaussian_widths_add():
    tau = np.linspace(-5, 5, 1001)
    a, s = 0.3, 0.2
    out = irf_convolve(np.exp(-0.5 * (tau / a) ** 2), s, tau_grid=tau)
    c = math.hypot(a, s)
    np.testing.assert_allclose(out, a / c * np.exp(-0.5 * (tau / c) ** 2), atol=1e-6)


def test_irf_fft_matches_direct(ideal_params):
    tau = np.linspace(-2, 2, 201)
    rr = CorrelationTrace("rr", tau, g2_weak("rr", 0.0, tau, ideal_params))
    fft = irf_convolve(rr, 0.2, method="fft")
    direct = irf_convolve(rr, 0.2, method="direct")
    np.testing.assert_allclose(fft.values, direct.values, atol=1e-10)
    # the antibunching dip fills in
    assert rr.values[100] == pytest.approx(0.0, abs=1e-12)
    assert fft.values[100] > 0.01
    # one-sided same-port traces reflect about zero
    half = CorrelationTrace("rr", tau[100:], rr.values[100:])
    np.testing.assert_allclose(irf_convolve(half, 0.2).values, fft.values[100:], atol=1e-10)


def test_irf_guards():
    tau = np.linspace(0, 1, 11)
    with pytest.raises(ValueError):
        irf_convolve(CorrelationTrace("tr", tau, np.ones(11)), 0.2)
    with pytest.warns(RuntimeWarning):
        irf_convolve(np.ones(101), 0.01, tau_grid=np.linspace(-1, 1, 101))
    with pytest.raises(ValueError):
        irf_convolve(np.ones(5), 0.1)
    with pytest.raises(SpanError):
        irf_convolve(np.ones(5), 1.0, tau_grid=np.linspace(-1, 1, 5))


def test_background_mix_limits():
    G2 = np.array([0.0, 0.5, 2.0])
    I = np.array([0.5, 1.0, 2.0])
    np.testing.assert_allclose(background_mix(G2, I, I, 0.0), G2 / I ** 2)
    np.testing.assert_allclose(background_mix(G2, I, I, 1.0), 1.0)
    assert background_mix(0.0, 0.4, 0.4, 0.07) > 0
    with pytest.raises(ValueError):
        background_mix(G2, I, I, 1.5)


def test_layers_commute(table_params, table_noise):
    tau = np.linspace(-2, 2, 81)
    rabi = rabi_from_n(0.1, table_params.gamma_tot)
    ref = None
    for order in itertools.permutations(("sd", "bg", "irf")):
        res = g2_imperfect_pairs(("tt", "rr", "tr"), 0.0, rabi, tau, table_params, table_noise, order=order)
        v = np.concatenate([res[k].values for k in ("tt", "rr", "tr")])
        if ref is None:
            ref = v
        np.testing.assert_allclose(v, ref, atol=1e-12)


def test_layer_order_validation(table_params, table_noise):
    tau = np.linspace(-1, 1, 21)
    with pytest.raises(ValueError):
        g2_imperfect("tt", 0.0, 1.0, tau, table_params, table_noise, order=("sd", "sd"))
    with pytest.raises(ValueError):
        g2_imperfect("tt", 0.0, 1.0, tau, table_params, table_noise, order=("blur",))
    with pytest.raises(ValueError):
        g2_imperfect("tr", 0.0, 1.0, np.linspace(0, 1, 11), table_params, table_noise)


def test_no_layers_is_plain_model(table_params, table_noise):
    tau = np.linspace(0, 1, 11)
    rabi = rabi_from_n(0.1, table_params.gamma_tot)
    from fewphoton.dynamics import g2_full
    got = g2_imperfect("tt", 1.0, rabi, tau, table_params, table_noise, order=())
    np.testing.assert_allclose(got.values, g2_full("tt", 1.0, rabi, tau, table_params).values, rtol=1e-12)


def test_two_sided_grid_obeys_mirror_rule(table_params, table_noise):
    tau = np.linspace(-1, 1, 41)
    rabi = rabi_from_n(0.1, table_params.gamma_tot)
    res = g2_imperfect_pairs(("tr", "rt"), 2.0, rabi, tau, table_params, table_noise)
    np.testing.assert_allclose(res["tr"].values[::-1], res["rt"].values, rtol=1e-10)


def test_weak_model_matches_vanishing_drive(table_params, table_noise):
    tau = np.linspace(-1, 1, 41)
    weak = g2_imperfect("tt", 0.0, 1.0, tau, table_params, table_noise, model="weak")
    full = g2_imperfect("tt", 0.0, rabi_from_n(1e-5, table_params.gamma_tot), tau, table_params, table_noise)
    np.testing.assert_allclose(full.values, weak.values, rtol=1e-3)


def test_background_raises_rr_dip(ideal_params):
    tau = np.linspace(-1, 1, 41)
    rabi = rabi_from_n(1e-3, ideal_params.gamma_tot)
    clean = g2_imperfect("rr", 0.0, rabi, tau, ideal_params, NoiseModel())
    dirty = g2_imperfect("rr", 0.0, rabi, tau, ideal_params, NoiseModel(background={"rr": 0.07}))
    assert dirty.values[20] > clean.values[20] + 0.01


def test_predicted_tbar_limits_and_linearity(table_params, table_noise):
    tau = np.linspace(-1, 1, 81)
    np.testing.assert_allclose(predicted_tbar(0.0, tau, table_params, NoiseModel()),
                               tau_kernel(0.0, tau, table_params), rtol=1e-12)
    a = predicted_tbar(0.0, tau, table_params, table_noise)
    assert abs(a[40]) < abs(tau_kernel(0.0, 0.0, table_params))
    # T scales with beta^2 and nothing else in the kernel depends on beta
    b = predicted_tbar(0.0, tau, table_params.replace(beta=table_params.beta * math.sqrt(2)), table_noise)
    np.testing.assert_allclose(b, 2 * a, rtol=1e-12)
    # the |tau| cusp is smoothed: one-sided slopes at 0 agree
    fine = np.linspace(-0.1, 0.1, 201)
    v = predicted_tbar(0.0, fine, table_params, table_noise).real
    left, right = v[100] - v[99], v[101] - v[100]
    assert abs(left + right) < 1e-3 * abs(v[100])


def test_predicted_tbar_against_2d_quadrature(table_params, table_noise):
    p, s_sd, s_irf = table_params, table_noise.sigma_long, table_noise.sigma_irf
    tau0 = 0.1
    got = predicted_tbar(0.0, np.array([tau0]), p, table_noise)[0]
    nodes, w = gauss_nodes(s_sd, 61)

    def irf_avg(part, d):
        f = lambda tp: getattr(tau_kernel(-d, tp, p), part)  # noqa: E731
        g = lambda tp: math.exp(-0.5 * ((tp - tau0) / s_irf) ** 2) / (s_irf * math.sqrt(2 * math.pi))  # noqa: E731
        lo, hi = tau0 - 8 * s_irf, tau0 + 8 * s_irf
        return quad(lambda tp: f(tp) * g(tp), lo, hi, points=[0.0], limit=200, epsabs=1e-13)[0]

    want = sum(wk * (irf_avg("real", d) + 1j * irf_avg("imag", d)) for d, wk in zip(nodes, w))
    assert abs(got - want) < 1e-3 * abs(tau_kernel(0.0, 0.0, p))


def test_g2_average_converges_to_weak_pipeline(table_params, table_noise):
    tau = np.linspace(-1, 1, 21)
    noise = NoiseModel(sigma_long=table_noise.sigma_long)
    weak = g2_imperfect("tt", 1.0, 1.0, tau, table_params, noise, model="weak").values
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        full = g2_imperfect("tt", 1.0, rabi_from_n(1e-5, 7.65), tau, table_params, noise).values
    np.testing.assert_allclose(full, weak, rtol=1e-3)
