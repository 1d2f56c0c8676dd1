"""Plain CSV tables with ``# key = value`` metadata lines on top.

Floats are written with ``repr`` so that reading a table back gives the same
numbers bit for bit. Frequencies go to disk as GHz detunings; a value is
nudged by one ulp where needed so that the GHz -> rad/ns conversion on
reading restores the original angular frequency.
"""
from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .core import ComplexSpectrum, CorrelationTrace, IntensityScan, MeasurementSet, TwoPhotonSector

__all__ = [
    "DataError",
    "INTENSITY_COLUMNS",
    "G2_COLUMNS",
    "SPECTRUM_COLUMNS",
    "SECTOR_COLUMNS",
    "ghz_for",
    "write_table",
    "read_table",
    "write_intensity",
    "read_intensity",
    "write_g2",
    "read_g2",
    "write_spectrum",
    "write_sector",
    "save_measurements",
    "load_measurements",
]

INTENSITY_COLUMNS = ("power_uW", "detuning_GHz", "I_t", "counts")
G2_COLUMNS = ("pair", "tau_ns", "g2", "coincidences", "detuning_GHz", "power_uW")
SPECTRUM_COLUMNS = ("detuning_GHz", "re", "im", "modulus", "phase_deg")
SECTOR_COLUMNS = ("delta_GHz", "re_T", "im_T")

_TWO_PI = 2.0 * math.pi


class DataError(ValueError):
    """A data file is missing, malformed or inconsistent."""


def ghz_for(w: float) -> float:
    """GHz value ``f`` with ``2 pi f == w`` exactly whenever one exists nearby.

    Among the exact candidates the one with the shortest decimal form wins,
    so 2 pi * 15 is written as 15.0.
    """
    f = float(w) / _TWO_PI
    cands = [f]
    lo = hi = f
    for _ in range(4):
        lo, hi = math.nextafter(lo, -math.inf), math.nextafter(hi, math.inf)
        cands += [lo, hi]
    exact = [c for c in cands if _TWO_PI * c == w]
    if not exact:
        return f
    return min(exact, key=lambda c: len(repr(c)))


def _fmt(v):
    if isinstance(v, str):
        return v
    return repr(float(v))


def write_table(path, columns, rows, meta=None):
    """Write ``rows`` (iterables matching ``columns``) with a metadata preamble."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        for k, v in (meta or {}).items():
            fh.write(f"# {k} = {v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_table(path, required):
    """Return ``(meta, header, rows)``; rows are lists of strings keyed by line number."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    meta = {}
    rows = []
    header = None
    with path.open(newline="") as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                if "=" in s:
                    k, v = s[1:].split("=", 1)
                    meta[k.strip()] = v.strip()
                continue
            cells = next(csv.reader([s]))
            cells = [c.strip() for c in cells]
            if header is None:
                header = cells
                missing = [c for c in required if c not in header]
                if missing:
                    raise DataError(f"{path}:{lineno}: header lacks column(s) {missing}")
                continue
            if len(cells) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, found {len(cells)}")
            rows.append((lineno, dict(zip(header, cells))))
    if header is None:
        raise DataError(f"{path}: no header row")
    return meta, header, rows


def _num(path, lineno, row, key):
    try:
        v = float(row[key])
    except ValueError:
        raise DataError(f"{path}:{lineno}: column {key!r} holds non-numeric value {row[key]!r}") from None
    if not math.isfinite(v):
        raise DataError(f"{path}:{lineno}: column {key!r} is not finite")
    return v


def write_intensity(path, scans, meta=None):
    rows = []
    for s in scans:
        counts = s.counts if s.counts is not None else np.zeros(s.grid.size)
        for w, v, c in zip(s.grid, s.values, counts):
            rows.append((s.power, ghz_for(w), v, c))
    write_table(path, INTENSITY_COLUMNS, rows, meta)


def read_intensity(path):
    """Intensity scans grouped by power, in order of first appearance."""
    meta, _, rows = read_table(path, INTENSITY_COLUMNS)
    groups = {}
    for lineno, row in rows:
        p = _num(path, lineno, row, "power_uW")
        if p <= 0:
            raise DataError(f"{path}:{lineno}: power_uW must be positive")
        rec = groups.setdefault(p, ([], [], []))
        rec[0].append(_TWO_PI * _num(path, lineno, row, "detuning_GHz"))
        rec[1].append(_num(path, lineno, row, "I_t"))
        c = _num(path, lineno, row, "counts")
        if c < 0:
            raise DataError(f"{path}:{lineno}: counts must be >= 0")
        rec[2].append(c)
    scans = []
    for p, (w, v, c) in groups.items():
        w = np.array(w)
        if w.size < 2 or np.any(np.diff(w) <= 0):
            raise DataError(f"{path}: detunings at power {p} uW must increase strictly")
        scans.append(IntensityScan(power=p, grid=w, values=np.array(v), counts=np.array(c)))
    return meta, scans


def write_g2(path, traces, meta=None):
    rows = []
    for t in traces:
        counts = t.counts if t.counts is not None else np.zeros(t.tau_grid.size)
        power = "" if t.power is None else t.power
        for tau, v, c in zip(t.tau_grid, t.values, counts):
            rows.append((t.pair, tau, v, c, ghz_for(t.omega), power))
    write_table(path, G2_COLUMNS, rows, meta)


def read_g2(path):
    """g2 traces grouped by (pair, detuning, power), in order of first appearance."""
    meta, header, rows = read_table(path, G2_COLUMNS[:4])
    groups = {}
    for lineno, row in rows:
        pair = row["pair"].lower()
        if pair not in ("tt", "rr", "tr", "rt"):
            raise DataError(f"{path}:{lineno}: unknown port pair {row['pair']!r}")
        det = _num(path, lineno, row, "detuning_GHz") if "detuning_GHz" in row else 0.0
        power = _num(path, lineno, row, "power_uW") if row.get("power_uW", "") != "" else None
        rec = groups.setdefault((pair, det, power), ([], [], [], lineno))
        rec[0].append(_num(path, lineno, row, "tau_ns"))
        g = _num(path, lineno, row, "g2")
        if g < 0:
            raise DataError(f"{path}:{lineno}: g2 must be >= 0")
        rec[1].append(g)
        rec[2].append(_num(path, lineno, row, "coincidences"))
    traces = []
    for (pair, det, power), (tau, v, c, first) in groups.items():
        try:
            traces.append(CorrelationTrace(pair=pair, tau_grid=np.array(tau), values=np.array(v),
                                           counts=np.array(c), power=power, omega=_TWO_PI * det))
        except ValueError as exc:
            raise DataError(f"{path}:{first}: trace {pair} at {det} GHz: {exc}") from None
    return meta, traces


def write_spectrum(path, spectrum: ComplexSpectrum, meta=None, phase_deg=None):
    ph = spectrum.phase_deg if phase_deg is None else phase_deg
    rows = zip((ghz_for(w) for w in spectrum.grid), spectrum.values.real, spectrum.values.imag,
               spectrum.modulus, ph)
    write_table(path, SPECTRUM_COLUMNS, rows, meta)


def write_sector(path, sector: TwoPhotonSector, meta=None):
    rows = zip((ghz_for(d) for d in sector.delta_grid), sector.values.real, sector.values.imag)
    write_table(path, SECTOR_COLUMNS, rows, meta)


def save_measurements(directory, data: MeasurementSet, meta=None):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    m = {"gamma_tot_per_ns": repr(float(data.gamma_tot_fixed))}
    m.update(meta or {})
    write_intensity(directory / "intensity.csv", data.intensity_scans, m)
    write_g2(directory / "g2.csv", data.g2_traces, m)


def load_measurements(directory, gamma_tot: float | None = None) -> MeasurementSet:
    """Read ``intensity.csv`` and ``g2.csv`` from ``directory``.

    ``gamma_tot`` overrides the value recorded in the file headers.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"{directory}: data directory not found")
    meta_i, scans = read_intensity(directory / "intensity.csv")
    g2_path = directory / "g2.csv"
    traces = read_g2(g2_path)[1] if g2_path.exists() else []
    if gamma_tot is None:
        try:
            gamma_tot = float(meta_i["gamma_tot_per_ns"])
        except (KeyError, ValueError):
            raise DataError(f"{directory / 'intensity.csv'}: no gamma_tot_per_ns header and none given") from None
    return MeasurementSet(intensity_scans=tuple(scans), g2_traces=tuple(traces), gamma_tot_fixed=gamma_tot)
