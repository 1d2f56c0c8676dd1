import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fewphoton.analytic import (
    dephasing_response,
    g2_weak,
    sector_T,
    single_coeffs,
    tau_kernel,
    weak_intensity_t,
)
from fewphoton.core import CorrelationTrace, DegenerateError, EmitterParams, SpanError
from fewphoton.reconstruct import (
    GridMismatchError,
    complete_t,
    invert_to_sector,
    kramers_kronig,
    reconstruct_field,
    reconstruct_single,
    reconstruct_t_real,
    relative_phase_deg,
)

GAMMA = 7.65


def lorentzian(n=1024, span=10.0, gd=0.0):
    p = EmitterParams(beta=0.87, gamma_tot=GAMMA, gamma_d=gd)
    w = np.linspace(-span * GAMMA, span * GAMMA, n)
    return w, dephasing_response(w, p)


@pytest.mark.parametrize("method", ["fft", "direct"])
def test_kk_recovers_lorentzian(method):
    w, G = lorentzian()
    im = kramers_kronig(G.real, w, method=method)
    assert np.max(np.abs(im - G.imag)) < 5e-3


def test_kk_tail_correction_helps():
    w, G = lorentzian(span=10.0)
    bare = kramers_kronig(G.real, method="direct")
    tailed = kramers_kronig(G.real, w, method="direct")
    assert np.max(np.abs(tailed - G.imag)) < 0.2 * np.max(np.abs(bare - G.imag))


def test_kk_methods_agree():
    w, G = lorentzian(n=512, gd=1.0)
    a = kramers_kronig(G.real, w, method="fft")
    b = kramers_kronig(G.real, w, method="direct")
    assert np.max(np.abs(a - b)) < 2e-3


def test_kk_involution_on_interior():
    # H[H[f]] = -f; the outer samples carry the truncation error
    w, G = lorentzian(n=2048, span=40.0)
    f = G.real
    once = kramers_kronig(f, w, check=False)
    twice = kramers_kronig(once, w, check=False)
    k = w.size // 10
    assert np.max(np.abs(twice + f)[k:-k]) < 1e-2


def test_kk_is_linear_and_batched():
    w, G = lorentzian(n=256)
    _, G2 = lorentzian(n=256, gd=2.0)
    stack = np.stack([G.real, G2.real], axis=1)
    out = kramers_kronig(stack, w)
    np.testing.assert_allclose(out[:, 0], kramers_kronig(G.real, w), atol=1e-12)
    np.testing.assert_allclose(out[:, 1], kramers_kronig(G2.real, w), atol=1e-12)
    np.testing.assert_allclose(kramers_kronig(2 * G.real + G2.real, w),
                               2 * out[:, 0] + out[:, 1], atol=1e-12)


def test_kk_guards():
    w, G = lorentzian(span=1.0)
    with pytest.raises(SpanError, match="widen"):
        kramers_kronig(G.real, w)
    with pytest.raises(SpanError):
        kramers_kronig(np.zeros(4))
    with pytest.raises(ValueError):
        kramers_kronig(np.zeros(16), np.geomspace(1, 2, 16), check=False)
    with pytest.raises(ValueError):
        kramers_kronig(np.zeros(16), method="magic", check=False)


def test_single_photon_round_trip():
    p = EmitterParams(beta=0.87, gamma_tot=GAMMA, xi=-0.26)
    w = np.linspace(-15 * GAMMA, 15 * GAMMA, 2001)
    G, t, r = reconstruct_single(w, weak_intensity_t(w, p), p.beta, p.geometry.z)
    c = single_coeffs(w, p)
    assert np.max(np.abs(G.values - dephasing_response(w, p))) < 5e-3
    assert np.max(np.abs(t.values - c.t)) < 5e-3
    np.testing.assert_allclose(t.values - r.values, 1.0, atol=1e-14)


def test_single_photon_degenerate():
    w = np.linspace(-50, 50, 101)
    with pytest.raises(DegenerateError):
        reconstruct_single(w, np.ones(101), 0.0, 1.0)


def test_relative_phase_reference():
    vals = np.exp(1j * np.linspace(0, 4 * np.pi, 50)) * (0.5 + 0.5j)
    ph = relative_phase_deg(vals, 0.5 + 0.5j)
    np.testing.assert_allclose(ph, np.degrees(np.linspace(0, 4 * np.pi, 50)), atol=1e-10)


params_st = st.builds(EmitterParams, beta=st.floats(0.05, 0.95), gamma_tot=st.floats(1.0, 15.0),
                      gamma_d=st.floats(0.0, 3.0), xi=st.floats(-1.0, 1.0))


@settings(max_examples=60)
@given(params_st, st.floats(-20, 20))
def test_exact_combination_recovers_kernel(p, omega):
    tau = np.linspace(0, 2, 21)
    c = single_coeffs(omega, p)
    g = [g2_weak(pair, omega, tau, p) for pair in ("tt", "rr", "tr")]
    got = reconstruct_t_real(*g, c.t, c.r)
    want = tau_kernel(omega, tau, p).real
    scale = max(1.0, np.max(np.abs(g[0])) * abs(c.t) ** 4)
    np.testing.assert_allclose(got, want, atol=1e-10 * scale)


@settings(max_examples=60)
@given(params_st, st.floats(-20, 20))
def test_printed_combination_offset(p, omega):
    tau = np.linspace(0, 2, 21)
    c = single_coeffs(omega, p)
    g = [g2_weak(pair, omega, tau, p) for pair in ("tt", "rr", "tr")]
    diff = reconstruct_t_real(*g, c.t, c.r, as_printed=True) - reconstruct_t_real(*g, c.t, c.r)
    want = 0.5 * (abs(c.t) ** 2 - abs(c.r) ** 2) ** 2
    np.testing.assert_allclose(diff, want, atol=1e-10)


def test_combination_with_traces_and_mismatch(table_params):
    tau = np.linspace(-1, 1, 21)
    c = single_coeffs(0.0, table_params)
    tr = {k: CorrelationTrace(k, tau, g2_weak(k, 0.0, tau, table_params)) for k in ("tt", "rr", "tr")}
    got = reconstruct_t_real(tr["tt"], tr["rr"], tr["tr"], c.t, c.r)
    np.testing.assert_allclose(got, tau_kernel(0.0, tau, table_params).real, atol=1e-10)
    other = CorrelationTrace("rr", np.linspace(-2, 2, 21), tr["rr"].values)
    with pytest.raises(GridMismatchError):
        reconstruct_t_real(tr["tt"], other, tr["tr"], c.t, c.r)
    with pytest.raises(GridMismatchError):
        reconstruct_t_real(tr["tt"].values, tr["rr"].values[:5], tr["tr"].values, c.t, c.r)


def test_sector_inversion_matches_closed_form(table_params):
    p = table_params
    tau = np.linspace(0, 40 / GAMMA, 1601)
    sec = invert_to_sector(tau, tau_kernel(0.0, tau, p), delta_grid=np.linspace(-30, 30, 61))
    want = sector_T(0.0, sec.delta_grid, p)
    assert np.max(np.abs(sec.values - want)) < 1e-3 * np.max(np.abs(want))
    # a symmetric delay grid gives the same answer
    full = np.linspace(-40 / GAMMA, 40 / GAMMA, 3201)
    sec2 = invert_to_sector(full, tau_kernel(0.0, full, p), delta_grid=sec.delta_grid)
    np.testing.assert_allclose(sec2.values, sec.values, atol=1e-12)


def test_sector_inversion_span_guard(table_params):
    tau = np.linspace(0, 1.0, 101)
    with pytest.raises(SpanError, match="extend"):
        invert_to_sector(tau, tau_kernel(0.0, tau, table_params))
    with pytest.raises(ValueError):
        invert_to_sector(np.linspace(0.1, 5, 50), np.zeros(50))


def test_complete_field_over_frequency(table_params):
    p = table_params
    w = np.linspace(-10 * GAMMA, 10 * GAMMA, 1024)
    tau = np.linspace(0, 1, 11)
    K = tau_kernel(w[:, None], tau[None, :], p)
    c = single_coeffs(w, p)
    g = [g2_weak(pair, w[:, None], tau[None, :], p) for pair in ("tt", "rr", "tr")]
    field = reconstruct_field(w, *g, c.t, c.r)
    assert np.max(np.abs(field - K)) < 1e-2 * np.max(np.abs(K))
    np.testing.assert_allclose(complete_t(K.real, w), field, atol=1e-9)
