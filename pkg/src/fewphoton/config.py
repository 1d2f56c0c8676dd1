"""Experiment configuration files.

A config is an INI file with sections ``[emitter]``, ``[noise]``, ``[drive]``,
``[grids]`` and ``[fit]``. Values use laboratory units (GHz, 1/ns, ns, uW) and
are converted to rad/ns here.
"""
from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .core import DomainError, EmitterParams, NoiseModel, PAIRS, angular_from_linear, make_grid, validate
from .fit import DEFAULT_BOUNDS, PARAM_NAMES, ExperimentDesign, FitConfig
from .tables import ghz_for
from .imperfect import DEFAULT_NODES

__all__ = ["ConfigError", "Config", "load_config", "parse_config", "dump_config"]

SECTIONS = ("emitter", "noise", "drive", "grids", "fit")


class ConfigError(ValueError):
    """A configuration file is malformed or holds an invalid value."""


@dataclass(frozen=True, eq=False)
class Config:
    params: EmitterParams
    noise: NoiseModel
    eta: float
    design: ExperimentDesign
    fit: FitConfig
    shot_noise: bool = True
    order: tuple = ("sd", "bg", "irf")
    n_nodes: int = DEFAULT_NODES
    source: str = "<string>"
    extras: dict = field(default_factory=dict)


class _Reader:
    """Typed access to a parsed INI that reports the offending line on failure."""

    def __init__(self, parser, text, source):
        self.parser, self.source = parser, source
        self.lines = text.splitlines()

    def _line(self, section, key):
        in_section = False
        for i, raw in enumerate(self.lines, 1):
            s = raw.strip()
            if s.startswith("["):
                in_section = s.lower() == f"[{section}]"
            elif in_section and re.match(rf"{re.escape(key)}\s*[=:]", s, re.IGNORECASE):
                return i
        return None

    def fail(self, section, key, msg):
        line = self._line(section, key)
        where = f"{self.source}:{line}" if line else self.source
        raise ConfigError(f"{where}: [{section}] {key}: {msg}")

    def raw(self, section, key, default=None):
        if self.parser.has_option(section, key):
            return self.parser.get(section, key)
        if default is None:
            raise ConfigError(f"{self.source}: [{section}] missing required field {key!r}")
        return default

    def float(self, section, key, default=None):
        text = self.raw(section, key, None if default is None else repr(float(default)))
        try:
            v = float(text)
        except ValueError:
            self.fail(section, key, f"expected a number, got {text!r}")
        if not math.isfinite(v):
            self.fail(section, key, f"must be finite, got {text!r}")
        return v

    def int(self, section, key, default=None):
        text = self.raw(section, key, None if default is None else str(default))
        try:
            return int(text)
        except ValueError:
            self.fail(section, key, f"expected an integer, got {text!r}")

    def bool(self, section, key, default):
        text = self.raw(section, key, "true" if default else "false").strip().lower()
        if text in ("1", "true", "yes", "on"):
            return True
        if text in ("0", "false", "no", "off"):
            return False
        self.fail(section, key, f"expected true/false, got {text!r}")

    def floats(self, section, key, default=None):
        text = self.raw(section, key, default)
        try:
            vals = tuple(float(t) for t in text.replace(";", ",").split(",") if t.strip())
        except ValueError:
            self.fail(section, key, f"expected a comma-separated list of numbers, got {text!r}")
        if not vals:
            self.fail(section, key, "empty list")
        return vals

    def words(self, section, key, default):
        text = self.raw(section, key, default)
        return tuple(t.strip().lower() for t in text.replace(";", ",").split(",") if t.strip())


def parse_config(text: str, source: str = "<string>") -> Config:
    """Build a :class:`Config` from INI text; errors name the file, line and field."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    unknown = [s for s in parser.sections() if s not in SECTIONS]
    if unknown:
        raise ConfigError(f"{source}: unknown section(s) {unknown}; expected {list(SECTIONS)}")
    rd = _Reader(parser, text, source)

    # [emitter]
    try:
        params = validate(EmitterParams(
            beta=rd.float("emitter", "beta"),
            gamma_tot=rd.float("emitter", "gamma_tot"),
            gamma_d=rd.float("emitter", "gamma_d", 0.0),
            omega0=angular_from_linear(rd.float("emitter", "omega0_GHz", 0.0)),
            xi=rd.float("emitter", "xi", 0.0),
        ))
    except DomainError as exc:
        field_name = str(exc).split("=")[0]
        rd.fail("emitter", field_name, str(exc))

    # [noise]
    background = {}
    for pair in PAIRS:
        if parser.has_option("noise", f"background_{pair}"):
            background[pair] = rd.float("noise", f"background_{pair}")
    try:
        noise = NoiseModel(
            sigma_short=angular_from_linear(rd.float("noise", "sigma_short_GHz", 0.0)),
            sigma_long=angular_from_linear(rd.float("noise", "sigma_long_GHz", 0.0)),
            sigma_irf=rd.float("noise", "sigma_irf_ns", 0.0),
            background=background,
        )
    except DomainError as exc:
        raise ConfigError(f"{source}: [noise] {exc}") from None
    shot_noise = rd.bool("noise", "shot_noise", True)
    icounts = rd.float("noise", "intensity_counts", 1e4)
    ccounts = rd.float("noise", "coincidence_counts", 1e4)
    if icounts < 0 or ccounts < 0:
        rd.fail("noise", "intensity_counts" if icounts < 0 else "coincidence_counts", "must be >= 0")

    # [drive]
    eta = rd.float("drive", "eta")
    if eta <= 0:
        rd.fail("drive", "eta", "must be > 0")
    powers = rd.floats("drive", "powers_uW")
    if any(p <= 0 for p in powers):
        rd.fail("drive", "powers_uW", "powers must be > 0")
    g2_power = rd.float("drive", "g2_power_uW")
    if g2_power <= 0:
        rd.fail("drive", "g2_power_uW", "must be > 0")
    g2_det = rd.floats("drive", "g2_detunings_GHz", "0")
    exposure = rd.float("drive", "exposure", 1.0)
    if exposure < 0:
        rd.fail("drive", "exposure", "must be >= 0")

    # [grids]
    span = rd.float("grids", "detuning_span_GHz", 15.0)
    n_det = rd.int("grids", "n_detuning", 301)
    tau_span = rd.float("grids", "tau_span_ns", 2.0)
    n_tau = rd.int("grids", "n_tau", 81)
    if n_tau % 2 == 0:
        rd.fail("grids", "n_tau", "must be odd so that tau = 0 is sampled")
    try:
        grid = angular_from_linear(make_grid(-span, span, n_det)) + params.omega0
        tau = make_grid(-tau_span, tau_span, n_tau)
    except ValueError as exc:
        raise ConfigError(f"{source}: [grids] {exc}") from None
    pairs = rd.words("grids", "pairs", "tt, rr, tr")
    bad = [p for p in pairs if p not in PAIRS]
    if bad:
        rd.fail("grids", "pairs", f"unknown port pair(s) {bad}")
    design = ExperimentDesign(
        powers=powers, grid=grid, g2_power=g2_power, tau_grid=tau,
        g2_omegas=tuple(float(angular_from_linear(f)) + params.omega0 for f in g2_det),
        pairs=pairs, intensity_counts=icounts, coincidence_counts=ccounts, exposure=exposure)

    # [fit]
    order = rd.words("fit", "order", "sd, bg, irf")
    if set(order) - {"sd", "bg", "irf"}:
        rd.fail("fit", "order", f"layers must be among sd, bg, irf; got {order}")
    n_nodes = rd.int("fit", "n_nodes", DEFAULT_NODES)
    free = rd.words("fit", "free", ", ".join(PARAM_NAMES))
    bad = [p for p in free if p not in PARAM_NAMES]
    if bad:
        rd.fail("fit", "free", f"unknown parameter(s) {bad}")
    current = {
        "beta": params.beta, "gamma_d": params.gamma_d, "xi": params.xi, "eta": eta,
        "sigma_short": noise.sigma_short, "sigma_long": noise.sigma_long,
        "background_rr": noise.b("rr"),
    }
    initial = {n: rd.float("fit", f"initial_{n}", current[n]) for n in PARAM_NAMES}
    bounds = {}
    for n in PARAM_NAMES:
        if parser.has_option("fit", f"bound_{n}"):
            lohi = rd.floats("fit", f"bound_{n}")
            if len(lohi) != 2 or not lohi[0] < lohi[1]:
                rd.fail("fit", f"bound_{n}", "expected 'lo, hi' with lo < hi")
            bounds[n] = lohi
    for n in PARAM_NAMES:
        lo, hi = bounds.get(n, DEFAULT_BOUNDS[n])
        if not lo <= initial[n] <= hi:
            rd.fail("fit", f"initial_{n}", f"value {initial[n]} outside bounds [{lo}, {hi}]")
    other_bg = {k: v for k, v in background.items() if k != "rr"}
    try:
        fit_cfg = FitConfig(
            initial=initial, free=tuple(n for n in PARAM_NAMES if n in free), bounds=bounds,
            gtol=rd.float("fit", "gtol", 1e-8), xtol=rd.float("fit", "xtol", 1e-8),
            ftol=rd.float("fit", "ftol", 1e-10), max_iter=rd.int("fit", "max_iter", 100),
            weighting=rd.raw("fit", "weighting", "poisson").strip().lower(),
            sigma_irf=noise.sigma_irf, background=other_bg, omega0=params.omega0,
            n_nodes=n_nodes, order=order, profile=rd.bool("fit", "profile", True),
            restarts=rd.int("fit", "restarts", 0), seed=rd.int("fit", "seed", 0),
        )
    except ValueError as exc:
        raise ConfigError(f"{source}: [fit] {exc}") from None
    return Config(params=params, noise=noise, eta=eta, design=design, fit=fit_cfg, shot_noise=shot_noise,
                  order=order, n_nodes=n_nodes, source=source)


def load_config(path) -> Config:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, source=str(path))


def _ghz(w):
    return ghz_for(float(w))


def dump_config(cfg: Config, overrides: dict | None = None) -> str:
    """INI text for ``cfg``; ``overrides`` replaces fitted parameter values."""
    v = {
        "beta": cfg.params.beta, "gamma_d": cfg.params.gamma_d, "xi": cfg.params.xi, "eta": cfg.eta,
        "sigma_short": cfg.noise.sigma_short, "sigma_long": cfg.noise.sigma_long,
        "background_rr": cfg.noise.b("rr"),
    }
    v.update(overrides or {})
    d = cfg.design
    span = _ghz(d.grid[-1] - cfg.params.omega0)
    lines = [
        "[emitter]",
        f"beta = {v['beta']!r}",
        f"gamma_tot = {cfg.params.gamma_tot!r}",
        f"gamma_d = {v['gamma_d']!r}",
        f"xi = {v['xi']!r}",
        f"omega0_GHz = {_ghz(cfg.params.omega0)!r}",
        "",
        "[noise]",
        f"sigma_short_GHz = {_ghz(v['sigma_short'])!r}",
        f"sigma_long_GHz = {_ghz(v['sigma_long'])!r}",
        f"sigma_irf_ns = {cfg.noise.sigma_irf!r}",
    ]
    bg = dict(cfg.noise.background)
    bg["rr"] = v["background_rr"]
    lines += [f"background_{k} = {bg[k]!r}" for k in PAIRS if k in bg]
    lines += [
        f"shot_noise = {'true' if cfg.shot_noise else 'false'}",
        f"intensity_counts = {d.intensity_counts!r}",
        f"coincidence_counts = {d.coincidence_counts!r}",
        "",
        "[drive]",
        f"eta = {v['eta']!r}",
        "powers_uW = " + ", ".join(repr(float(p)) for p in d.powers),
        f"g2_power_uW = {float(d.g2_power)!r}",
        "g2_detunings_GHz = " + ", ".join(repr(_ghz(w - cfg.params.omega0)) for w in d.g2_omegas),
        f"exposure = {d.exposure!r}",
        "",
        "[grids]",
        f"detuning_span_GHz = {span!r}",
        f"n_detuning = {d.grid.size}",
        f"tau_span_ns = {float(d.tau_grid[-1])!r}",
        f"n_tau = {d.tau_grid.size}",
        "pairs = " + ", ".join(d.pairs),
        "",
        "[fit]",
        "free = " + ", ".join(cfg.fit.free),
        "order = " + ", ".join(cfg.order),
        f"n_nodes = {cfg.n_nodes}",
        f"weighting = {cfg.fit.weighting}",
        f"max_iter = {cfg.fit.max_iter}",
        f"profile = {'true' if cfg.fit.profile else 'false'}",
        "",
    ]
    return "\n".join(lines)
