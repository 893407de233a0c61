"""Absorption physics of the dye sample.

Units: concentration mol/l, volume l, cross-sections cm^2 (ETPA, SPA) and
cm^4 s (classical TPA), flux density 1/(cm^2 s). Number densities are
converted to cm^-3 with 1000 cm^3 per litre.
"""

from __future__ import annotations

import math
import warnings
from decimal import Decimal
from dataclasses import dataclass

import numpy as np

AVOGADRO = 6.02214076e23  # 1/mol
CM3_PER_LITRE = 1000.0
DEPLETION_THRESHOLD = 0.05


class DepletionWarning(UserWarning):
    """The undepleted-flux assumption behind the ETPA rate law is violated."""


@dataclass(frozen=True)
class SampleSpec:
    concentration: float  # mol/l
    active_volume: float = 5.6e-9  # l
    quantum_yield: float = 0.95
    sigma_e: float = 1e-21  # cm^2
    delta_r: float = 1e-47  # cm^4 s
    sigma_spa: float = 1e-17  # cm^2
    path_length: float = 0.05  # cm
    yield_known: bool = True
    strict: bool = True  # False admits zero-valued fields for oracle checks

    def __post_init__(self):
        if not self.strict:
            return
        for name in ("concentration", "active_volume", "quantum_yield", "sigma_e", "delta_r",
                     "sigma_spa", "path_length"):
            value = getattr(self, name)
            if not value > 0:
                raise ValueError(f"{name} must be > 0, got {value}")
        if self.quantum_yield > 1:
            raise ValueError(f"quantum_yield must be <= 1, got {self.quantum_yield}")


@dataclass(frozen=True)
class BeamGeometry:
    """Uniform disc of radius ``waist`` [cm]."""

    waist: float = 60e-4

    def __post_init__(self):
        if not self.waist > 0:
            raise ValueError(f"waist must be > 0, got {self.waist}")

    @property
    def area(self) -> float:
        return math.pi * self.waist**2


@dataclass(frozen=True)
class AbsorptionRate:
    entangled: float
    classical: float

    @property
    def total(self) -> float:
        return self.entangled + self.classical

    @property
    def entangled_share(self) -> float:
        t = self.total
        return 1.0 if t == 0 else self.entangled / t


@dataclass(frozen=True)
class DepletionCheck:
    passed: bool
    ratio: float


def flux_density(pair_rate, geometry: BeamGeometry):
    if np.any(np.asarray(pair_rate) < 0):
        raise ValueError("pair rate must be >= 0")
    area = geometry.area
    if area <= 0:
        raise ValueError("beam area must be > 0")
    return pair_rate / area


def molecule_count(spec: SampleSpec) -> float:
    """Molecules in the active volume, C * V * N_A."""
    return spec.concentration * spec.active_volume * AVOGADRO


def per_molecule_rate(phi: float, spec: SampleSpec) -> AbsorptionRate:
    """Single-molecule two-photon absorption rate, split into the entangled
    (sigma_e * phi) and classical (delta_r * phi^2) parts."""
    if phi < 0:
        raise ValueError(f"flux density must be >= 0, got {phi}")
    return AbsorptionRate(entangled=spec.sigma_e * phi, classical=spec.delta_r * phi * phi)


def crossover_flux(spec: SampleSpec) -> float:
    """Flux density at which classical TPA equals ETPA.

    The quotient is taken in decimal on the shortest repr of each input, so
    decimal-specified constants (1e-17 / 1e-47) give decimal-exact results.
    """
    if not spec.delta_r > 0:
        raise ValueError("delta_r must be > 0")
    return float(Decimal(repr(float(spec.sigma_e))) / Decimal(repr(float(spec.delta_r))))


def undepleted_check(phi: float, pair_rate: float, spec: SampleSpec,
                     threshold: float = DEPLETION_THRESHOLD) -> DepletionCheck:
    if not pair_rate > 0:
        raise ValueError(f"pair rate must be > 0, got {pair_rate}")
    absorbed = molecule_count(spec) * per_molecule_rate(phi, spec).total
    ratio = absorbed / pair_rate
    return DepletionCheck(passed=ratio < threshold, ratio=ratio)


def etpa_fluorescence_rate(phi, spec: SampleSpec, pair_rate: float | None = None):
    """ETPA-induced fluorescence rate Y * C * V * N_A * sigma_e * phi [1/s].

    When ``pair_rate`` is given the undepleted-flux premise is checked and a
    :class:`DepletionWarning` is emitted on violation.
    """
    phi_arr = np.asarray(phi, dtype=float)
    if np.any(phi_arr < 0):
        raise ValueError("flux density must be >= 0")
    if pair_rate is not None and pair_rate > 0:
        check = undepleted_check(float(np.max(phi_arr)), pair_rate, spec)
        if not check.passed:
            warnings.warn(f"absorbed/incident ratio {check.ratio:.3g} exceeds depletion threshold",
                          DepletionWarning, stacklevel=2)
    out = spec.quantum_yield * molecule_count(spec) * spec.sigma_e * phi_arr
    return float(out) if out.ndim == 0 else out


def two_photon_fluorescence_rate(phi, spec: SampleSpec):
    """Fluorescence from ETPA plus the classical quadratic TPA term."""
    phi_arr = np.asarray(phi, dtype=float)
    out = spec.quantum_yield * molecule_count(spec) * (spec.sigma_e * phi_arr + spec.delta_r * phi_arr**2)
    return float(out) if out.ndim == 0 else out


def spa_absorbed_fraction(spec: SampleSpec, geometry: BeamGeometry | None = None) -> float:
    """Beer-Lambert fraction of 532 nm photons absorbed along the path.

    ``geometry`` is accepted for interface symmetry; a uniform beam makes the
    fraction independent of its area.
    """
    n = spec.concentration * AVOGADRO / CM3_PER_LITRE
    return -math.expm1(-spec.sigma_spa * n * spec.path_length)


def spa_fluorescence_rate(photon_rate: float, spec: SampleSpec,
                          geometry: BeamGeometry | None = None) -> float:
    if photon_rate < 0:
        raise ValueError(f"photon rate must be >= 0, got {photon_rate}")
    return spec.quantum_yield * photon_rate * spa_absorbed_fraction(spec, geometry)
