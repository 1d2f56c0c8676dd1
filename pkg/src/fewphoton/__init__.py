"""Few-photon scattering off a two-level emitter coupled to a waveguide.

Forward models for transmitted intensity and photon correlations (weak-drive
closed forms and the finite-drive master equation), measurement imperfections,
parameter fitting, and reconstruction of the single- and two-photon
scattering amplitudes.

Units: rates and angular frequencies in rad/ns, times in ns. Frequencies are
detunings from a reference.
"""
__version__ = "0.1.0"

from .core import (  # noqa: E402
    ComplexSpectrum,
    CorrelationTrace,
    DegenerateError,
    DomainError,
    DriveSpec,
    EmitterParams,
    IntensityScan,
    MeasurementSet,
    NoiseModel,
    ScatterGeometry,
    SpanError,
    TwoPhotonSector,
    angular_from_linear,
    linear_from_angular,
    make_grid,
    n_from_rabi,
    rabi_from_n,
    validate,
)
