"""Simulation and analysis of entangled two-photon absorption fluorescence
experiments on dye solutions."""

from .analysis import (Estimate, FitResult, RatePoint, calibrate_k, extract_sigma_e,
                       fit_gaussian_delay, fit_linear_flux, fluorescence_rate_from_counts,
                       leak_check, net_counts, polarization_flatness)
from .config import PRESETS, Scenario, validate_config
from .detection import Condition, DetectorSpec, MeasurementRecord
from .interferometer import InterferometerSetting
from .sample import BeamGeometry, SampleSpec
from .spdc_source import SourceSpec

__version__ = "0.1.0"

__all__ = [
    "BeamGeometry", "Condition", "DetectorSpec", "Estimate", "FitResult", "InterferometerSetting",
    "MeasurementRecord", "PRESETS", "RatePoint", "SampleSpec", "Scenario", "SourceSpec",
    "calibrate_k", "extract_sigma_e", "fit_gaussian_delay", "fit_linear_flux",
    "fluorescence_rate_from_counts", "leak_check", "net_counts", "polarization_flatness",
    "validate_config",
]
