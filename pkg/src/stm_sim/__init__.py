"""Solvers for slabs of travelling-wave space-time modulated material.

The package works in natural units: c = 1, and the modulation frequency
omega_s is normally taken as the unit of frequency.  TE polarization only
(E_y out of the x-z plane, slab normal along x, modulation travelling
along z).
"""

__version__ = "0.1.0"

from .medium import (
    IncidentWave,
    ModulationProfile,
    SlabGeometry,
    ValidationError,
    derived_config,
    make_profile,
    sample_material,
)

__all__ = [
    "IncidentWave",
    "ModulationProfile",
    "SlabGeometry",
    "ValidationError",
    "derived_config",
    "make_profile",
    "sample_material",
    "__version__",
]
