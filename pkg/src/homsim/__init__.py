"""Two-photon interference between independent single-photon emitters.

Modules: ``emitter`` (wavepacket model), ``hom`` (coincidence level by closed
form, quadrature and Monte Carlo), ``stream`` (time-tag synthesis and
correlation), ``analysis`` (fitters), ``pipelines`` and ``cli``.
"""

from .emitter import EmitterParams, Grid, SampledWavepacket, sample_wavepacket, wavepacket_overlap
from .hom import (
    HomCurveParams,
    PhysicalPair,
    hom_curve,
    mc_hom_scan,
    physical_to_phenomenological,
    quadrature_hom_scan,
)

__version__ = "0.1.0"

__all__ = [
    "EmitterParams",
    "Grid",
    "HomCurveParams",
    "PhysicalPair",
    "SampledWavepacket",
    "hom_curve",
    "mc_hom_scan",
    "physical_to_phenomenological",
    "quadrature_hom_scan",
    "sample_wavepacket",
    "wavepacket_overlap",
]
