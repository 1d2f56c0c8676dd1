"""Command-line front end: ``simulate``, ``fit``, ``reconstruct``, ``predict``.

Exit status: 0 success, 2 configuration error, 3 data error, 4 numerical span
error, 5 fit did not converge.
"""
from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .analytic import g2_weak, sector_T, tau_kernel
from .config import ConfigError, dump_config, load_config
from .core import DegenerateError, NoiseModel, SpanError, TwoPhotonSector, n_from_rabi
from .fit import BoundWarning, IdentifiabilityError, fit, simulate_dataset
from .imperfect import g2_imperfect_pairs, predicted_tbar
from .reconstruct import complete_t, invert_to_sector, reconstruct_single, reconstruct_t_real, relative_phase_deg
from .tables import (
    DataError,
    ghz_for,
    load_measurements,
    save_measurements,
    write_sector,
    write_spectrum,
    write_table,
)

__all__ = ["main", "EXIT_OK", "EXIT_CONFIG", "EXIT_DATA", "EXIT_SPAN", "EXIT_NOCONV", "parse_toggles"]

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_SPAN, EXIT_NOCONV = 0, 2, 3, 4, 5
TOGGLES = ("sd", "irf", "bg", "fano", "dephasing")
MIN_SCAN = 8


def _say(msg):
    print(msg, file=sys.stderr)


def _out_dir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- simulate ---------------------------------------------------------------

def cmd_simulate(args):
    cfg = load_config(args.config)
    rng = np.random.default_rng(args.seed)
    data = simulate_dataset(cfg.design, cfg.params, cfg.noise, cfg.eta, rng=rng, shot_noise=cfg.shot_noise,
                            n_nodes=cfg.n_nodes, order=cfg.order)
    out = _out_dir(args.out)
    meta = {"command": "simulate", "seed": args.seed, "shot_noise": str(cfg.shot_noise).lower(),
            "exposure": repr(cfg.design.exposure)}
    save_measurements(out, data, meta)
    (out / "truth.ini").write_text(dump_config(cfg))
    low = min(data.intensity_scans, key=lambda s: s.power)
    i0 = int(np.argmin(np.abs(low.grid - cfg.params.omega0)))
    print(f"wrote {out / 'intensity.csv'} and {out / 'g2.csv'} (seed {args.seed})")
    print(f"I_t at the emitter frequency, {low.power:g} uW: {low.values[i0]:.4f}")
    return EXIT_OK


# -- fit --------------------------------------------------------------------

def cmd_fit(args):
    cfg = load_config(args.config)
    data = load_measurements(args.data, gamma_tot=cfg.params.gamma_tot)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", BoundWarning)
        result = fit(data, cfg.fit)
    for w in caught:
        _say(f"warning: {w.message}")
    out = _out_dir(args.out)
    (out / "fit_result.json").write_text(json.dumps(result.as_dict(), indent=2, sort_keys=True) + "\n")
    lines = [f"status: {result.status} after {result.n_iter} iterations ({result.message})",
             f"chi2 = {result.chi2:.4f} for {result.dof} degrees of freedom "
             f"(reduced {result.reduced_chi2:.4f})", "",
             f"{'parameter':<15}{'estimate':>14}{'ci95_low':>14}{'ci95_high':>14}"]
    for n in result.names:
        lo, hi = result.ci[n]
        flag = "  (on bound)" if n in result.at_bound else ""
        lines.append(f"{n:<15}{result.estimates[n]:>14.6g}{lo:>14.6g}{hi:>14.6g}{flag}")
    report = "\n".join(lines) + "\n"
    (out / "fit_report.txt").write_text(report)
    (out / "params.ini").write_text(dump_config(cfg, overrides=result.estimates))
    print(report, end="")
    if not result.converged:
        _say(f"fit did not converge ({result.status})")
        return EXIT_NOCONV
    return EXIT_OK


# -- reconstruct ------------------------------------------------------------

def _interp_complex(x, xp, fp):
    return np.interp(x, xp, fp.real) + 1j * np.interp(x, xp, fp.imag)


def cmd_reconstruct(args):
    cfg = load_config(args.params)
    data = load_measurements(args.data, gamma_tot=cfg.params.gamma_tot)
    p = cfg.params
    z = p.geometry.z
    scan = min(data.intensity_scans, key=lambda s: s.power)
    out = _out_dir(args.out)
    try:
        G, t, r = reconstruct_single(scan.grid - p.omega0, scan.values, p.beta, z)
    except SpanError as exc:
        raise SpanError(f"{exc}. Remedy: re-measure the intensity over a wider detuning range "
                        "(at least +-5 linewidths)") from None
    ph_t = relative_phase_deg(t.values, z)
    ph_r = relative_phase_deg(r.values, z - 1.0)
    meta = {"command": "reconstruct", "power_uW": repr(scan.power),
            "phase_reference": "off-resonant value (z for t, z - 1 for r)"}
    shift = lambda s: type(s)(s.grid + p.omega0, s.values)  # noqa: E731
    write_spectrum(out / "t_spectrum.csv", shift(t), meta, phase_deg=ph_t)
    write_spectrum(out / "r_spectrum.csv", shift(r), meta, phase_deg=ph_r)
    write_spectrum(out / "G_spectrum.csv", shift(G), meta)
    print(f"single-photon phase extrema: min arg t = {ph_t.min():.1f} deg, max arg r = {ph_r.max():.1f} deg")

    # group g2 traces by detuning at the best-covered power
    traces = [tr for tr in data.g2_traces]
    if not traces:
        print("no g2 traces: two-photon reconstruction skipped")
        return EXIT_OK
    by_power = {}
    for tr in traces:
        by_power.setdefault(tr.power, {}).setdefault(tr.omega, {})[tr.pair] = tr
    power, by_omega = max(by_power.items(), key=lambda kv: len(kv[1]))
    rows, omegas, re_rows, tau = [], [], [], None
    for om in sorted(by_omega):
        d = by_omega[om]
        cross = d.get("tr", d.get("rt"))
        if "tt" not in d or "rr" not in d or cross is None:
            continue
        tt, rr = d["tt"], d["rr"]
        if tau is None:
            tau = tt.tau_grid
        tv = _interp_complex(om - p.omega0, t.grid, t.values)
        rv = tv - 1.0
        try:
            re = reconstruct_t_real(tt, rr, cross, tv, rv)
        except ValueError as exc:
            raise DataError(f"traces at {ghz_for(om):g} GHz: {exc}") from None
        omegas.append(om)
        re_rows.append(re)
    if not omegas:
        raise DataError("no detuning has a complete tt, rr, tr triple")
    re_field = np.array(re_rows)
    omegas = np.array(omegas)
    meta2 = {"command": "reconstruct", "g2_power_uW": repr(power)}
    scanable = omegas.size >= MIN_SCAN and np.allclose(np.diff(omegas), omegas[1] - omegas[0], rtol=1e-6)
    if not scanable:
        rows = [(ghz_for(om), tt_, v) for om, row in zip(omegas, re_field) for tt_, v in zip(tau, row)]
        write_table(out / "tau_kernel.csv", ("detuning_GHz", "tau_ns", "re_T"), rows, meta2)
        print(f"Re T(tau) written for {omegas.size} detuning(s); sector skipped: Kramers-Kronig over "
              f"frequency needs g2 traces on a uniform scan of at least {MIN_SCAN} detunings")
        return EXIT_OK
    if omegas[1] - omegas[0] > 0.25 * p.gamma_tot:
        _say(f"warning: g2 detuning step {ghz_for(omegas[1] - omegas[0]):.3g} GHz exceeds a quarter "
             "linewidth; the Kramers-Kronig step over frequency will be inaccurate")
    try:
        field = complete_t(re_field, omegas)
    except SpanError as exc:
        raise SpanError(f"{exc}. Remedy: extend the g2 detuning scan") from None
    rows = [(ghz_for(om), tt_, v.real, v.imag) for om, row in zip(omegas, field) for tt_, v in zip(tau, row)]
    write_table(out / "tau_kernel.csv", ("detuning_GHz", "tau_ns", "re_T", "im_T"), rows, meta2)
    k = int(np.argmin(np.abs(omegas - p.omega0)))
    try:
        sector = invert_to_sector(tau, field[k], omega=float(omegas[k]))
    except SpanError as exc:
        raise SpanError(f"{exc}. Remedy: record g2 over a longer delay window") from None
    write_sector(out / "sector.csv", sector, {"command": "reconstruct", "detuning_GHz": repr(ghz_for(omegas[k]))})
    i0 = int(np.argmin(np.abs(sector.delta_grid)))
    print(f"sector at {ghz_for(omegas[k]):g} GHz: T(0) = {sector.values[i0]:.5g} ns")
    return EXIT_OK


# -- predict ----------------------------------------------------------------

def parse_toggles(text: str) -> set:
    """Set of imperfections switched on, from e.g. ``"sd,irf,bg"``, ``"all"`` or ``"ideal"``."""
    items = [s.strip().lower() for s in text.replace(";", ",").split(",") if s.strip()]
    on = set()
    for it in items:
        if it == "all":
            on.update(TOGGLES)
        elif it in ("none", "ideal"):
            continue
        elif it in TOGGLES:
            on.add(it)
        else:
            raise ConfigError(f"unknown toggle {it!r}; choose from {', '.join(TOGGLES)}, all, none, ideal")
    return on


def cmd_predict(args):
    cfg = load_config(args.config)
    on = parse_toggles(args.toggles)
    p = cfg.params
    if "fano" not in on:
        p = p.replace(xi=0.0)
    if "dephasing" not in on:
        p = p.replace(gamma_d=0.0)
    nz = cfg.noise
    noise = NoiseModel(sigma_short=nz.sigma_short if "sd" in on else 0.0,
                       sigma_long=nz.sigma_long if "sd" in on else 0.0,
                       sigma_irf=nz.sigma_irf if "irf" in on else 0.0,
                       background=dict(nz.background) if "bg" in on else {})
    order = tuple(layer for layer in cfg.order if layer in on)
    d = cfg.design
    omega = d.g2_omegas[0]
    rabi = float(np.sqrt(cfg.eta * d.g2_power))
    tau = d.tau_grid
    pairs = ("tt", "rr", "tr")
    traces = g2_imperfect_pairs(pairs, omega, rabi, tau, p, noise, order=order, n_nodes=cfg.n_nodes)
    rows = []
    zero = int(np.argmin(np.abs(tau)))
    summary = [f"toggles: {', '.join(sorted(on)) or 'none'}",
               f"n = {n_from_rabi(rabi, p.gamma_tot):.4g} photons per lifetime at {d.g2_power:g} uW"]
    for pair in pairs:
        try:
            weak = g2_weak(pair, omega, tau, p)
        except DegenerateError:
            weak = np.full(tau.size, np.nan)
        rows += [(pair, tt_, g, w) for tt_, g, w in zip(tau, traces[pair].values, weak)]
        summary.append(f"g2_{pair}(0): model {traces[pair].values[zero]:.4g}, vanishing drive {weak[zero]:.4g}")
    out = _out_dir(args.out)
    meta = {"command": "predict", "toggles": ",".join(sorted(on)) or "none",
            "detuning_GHz": repr(ghz_for(omega)), "power_uW": repr(float(d.g2_power))}
    write_table(out / "predict_g2.csv", ("pair", "tau_ns", "g2", "g2_weak"), rows, meta)
    K = tau_kernel(omega, tau, p)
    Kbar = predicted_tbar(omega, tau, p, noise, n_nodes=cfg.n_nodes)
    write_table(out / "predict_tau_kernel.csv", ("tau_ns", "re_T", "im_T", "re_Tbar", "im_Tbar"),
                zip(tau, K.real, K.imag, Kbar.real, Kbar.imag), meta)
    delta = np.linspace(-5 * p.gamma_tot, 5 * p.gamma_tot, 201)
    sector = TwoPhotonSector(omega=omega, delta_grid=delta, values=sector_T(omega, delta, p))
    write_sector(out / "predict_sector.csv", sector, meta)
    (out / "predict_summary.txt").write_text("\n".join(summary) + "\n")
    print("\n".join(summary))
    return EXIT_OK


# -- entry point ------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="fewphoton", description="Few-photon waveguide scattering toolkit.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="synthesise intensity scans and g2 traces")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit emitter and noise parameters to a data directory")
    f.add_argument("--data", required=True)
    f.add_argument("--config", required=True)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)

    r = sub.add_parser("reconstruct", help="recover t, r and the two-photon kernel from data")
    r.add_argument("--data", required=True)
    r.add_argument("--params", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("predict", help="model curves with selected imperfections")
    p.add_argument("--config", required=True)
    p.add_argument("--toggles", default="all")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        _say(f"config error: {exc}")
        return EXIT_CONFIG
    except (DataError, IdentifiabilityError) as exc:
        _say(f"data error: {exc}")
        return EXIT_DATA
    except (SpanError, DegenerateError) as exc:
        _say(f"numerical error: {exc}")
        return EXIT_SPAN


if __name__ == "__main__":
    sys.exit(main())
