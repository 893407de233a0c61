"""PPLN type-0 SPDC pair source: pump power to pair rate, coincidence
calibration, and the dispersion-limited effective flux."""

from __future__ import annotations

from dataclasses import dataclass

# Coincidence calibration point of the source: 2.6e6 fiber-coupled pairs/s at 5.1 mW.
CALIBRATION_PAIR_RATE = 2.6e6
CALIBRATION_PUMP_POWER = 5.1e-3


@dataclass(frozen=True)
class SourceSpec:
    pairs_per_watt: float = CALIBRATION_PAIR_RATE / CALIBRATION_PUMP_POWER
    coherence_time_fwhm: float = 140.0  # fs
    coincident_fraction: float = 0.10
    center_wavelength: float = 1064.0  # nm
    eta_free: float = 0.03
    eta_gated: float = 0.03
    splitter_coincidence_prob: float = 0.5

    def __post_init__(self):
        if not self.pairs_per_watt > 0:
            raise ValueError(f"pairs_per_watt must be > 0, got {self.pairs_per_watt}")
        if not self.coherence_time_fwhm > 0:
            raise ValueError(f"coherence_time_fwhm must be > 0, got {self.coherence_time_fwhm}")
        if not self.center_wavelength > 0:
            raise ValueError(f"center_wavelength must be > 0, got {self.center_wavelength}")
        for name in ("coincident_fraction", "eta_free", "eta_gated", "splitter_coincidence_prob"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {value}")


@dataclass(frozen=True)
class PairFlux:
    raw_rate: float
    effective_rate: float


def pair_rate(pump_power: float, spec: SourceSpec) -> float:
    """Fiber-coupled pair rate [1/s] for a pump power in watts."""
    if pump_power < 0:
        raise ValueError(f"pump power must be >= 0, got {pump_power}")
    return spec.pairs_per_watt * pump_power


def effective_flux(raw_rate: float, spec: SourceSpec) -> PairFlux:
    """Split a raw pair rate into the part arriving within the two-photon
    coherence time (the only part that drives ETPA)."""
    if raw_rate < 0:
        raise ValueError(f"raw rate must be >= 0, got {raw_rate}")
    return PairFlux(raw_rate=raw_rate, effective_rate=raw_rate * spec.coincident_fraction)


def _coincidence_efficiency(spec: SourceSpec) -> float:
    return spec.splitter_coincidence_prob * spec.eta_free * spec.eta_gated


def expected_coincidence_rate(pair_rate: float, spec: SourceSpec) -> float:
    if pair_rate < 0:
        raise ValueError(f"pair rate must be >= 0, got {pair_rate}")
    return pair_rate * _coincidence_efficiency(spec)


def infer_pair_rate_from_coincidences(cc_rate: float, spec: SourceSpec) -> float:
    """Invert :func:`expected_coincidence_rate`."""
    if cc_rate < 0:
        raise ValueError(f"coincidence rate must be >= 0, got {cc_rate}")
    eff = _coincidence_efficiency(spec)
    if eff <= 0:
        raise ValueError("coincidence efficiency is zero; pair rate is not recoverable")
    return cc_rate / eff
