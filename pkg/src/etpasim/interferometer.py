"""Michelson stage placed before the sample.

Each photon of a pair independently takes the short (S) or long (L) arm.
Same-path pairs (SS, LL) keep their zero relative delay; cross-path pairs
(SL, LS) acquire the set delay and lose ETPA efficiency according to the
Gaussian two-photon envelope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .spdc_source import SourceSpec

FOUR_LN2 = 4.0 * math.log(2.0)
POLARIZATION_LABELS = ("HH", "HV", "VH", "VV")


@dataclass(frozen=True)
class Shoulders:
    """Optional side bumps at +/- offset from dispersion-cancelled pairs.

    The amplitude is relative to the main cross-path overlap peak.
    """

    amplitude: float = 0.0
    offset: float = 0.0  # fs
    fwhm: float = 0.0  # fs

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("shoulder amplitude must be >= 0")
        if self.amplitude > 0 and self.fwhm <= 0:
            raise ValueError("shoulder fwhm must be > 0 when amplitude > 0")


@dataclass(frozen=True)
class InterferometerSetting:
    delay: float = 0.0  # fs, signed
    waveplate_angle: float = 0.0  # deg
    enabled: bool = False
    reflectivity: float = 0.5  # power reflectivity r^2 of the splitter
    zero_delay_offset: float = 0.0  # fs
    epsilon: float = 0.0  # polarization sensitivity, 0 = flat
    shoulders: Shoulders = field(default_factory=Shoulders)

    def __post_init__(self):
        if not 0.0 <= self.reflectivity <= 1.0:
            raise ValueError(f"reflectivity must lie in [0, 1], got {self.reflectivity}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")


@dataclass(frozen=True)
class PathEnsemble:
    weight_same_path: float
    weight_cross_path: float
    pol_mixture: dict


def _pol_mixture(waveplate_angle: float, r: float, t: float) -> dict:
    # Waveplate sits in the long arm; double-passed, it rotates a photon's
    # linear polarization by 2*angle. Weights are projections onto H/V.
    rel = math.radians(2.0 * waveplate_angle)
    c2, s2 = math.cos(rel) ** 2, math.sin(rel) ** 2
    ss, ll, sl, ls = r * r, t * t, r * t, t * r
    mix = {
        "HH": ss + ll * c2 * c2 + sl * c2 + ls * c2,
        "HV": ll * c2 * s2 + sl * s2,
        "VH": ll * s2 * c2 + ls * s2,
        "VV": ll * s2 * s2,
    }
    total = sum(mix.values())
    return {k: v / total for k, v in mix.items()}


def split_paths(setting: InterferometerSetting) -> PathEnsemble:
    if not setting.enabled:
        return PathEnsemble(1.0, 0.0, {"HH": 1.0, "HV": 0.0, "VH": 0.0, "VV": 0.0})
    r = setting.reflectivity
    t = 1.0 - r
    # Photon paths are independent: SS = r*r, LL = t*t, SL = LS = r*t.
    same = r * r + t * t
    cross = 2.0 * r * t
    return PathEnsemble(same, cross, _pol_mixture(setting.waveplate_angle, r, t))


def temporal_overlap(delay, coherence_fwhm: float, offset: float = 0.0):
    """Gaussian two-photon envelope, 1 at ``delay == offset``, 0.5 at +/- fwhm/2.

    Accepts scalars or arrays.
    """
    if not coherence_fwhm > 0:
        raise ValueError(f"coherence FWHM must be > 0, got {coherence_fwhm}")
    d = np.asarray(delay, dtype=float) - offset
    out = np.exp(-FOUR_LN2 * d * d / (coherence_fwhm * coherence_fwhm))
    return float(out) if out.ndim == 0 else out


def polarization_factor(waveplate_angle, epsilon: float):
    """1 - epsilon * sin^2(relative polarization angle), relative angle = 2 * waveplate angle."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    rel = np.radians(2.0 * np.asarray(waveplate_angle, dtype=float))
    out = 1.0 - epsilon * np.sin(rel) ** 2
    return float(out) if out.ndim == 0 else out


def _cross_path_overlap(delay, spec: SourceSpec, setting: InterferometerSetting):
    tau0 = setting.zero_delay_offset
    overlap = temporal_overlap(delay, spec.coherence_time_fwhm, tau0)
    sh = setting.shoulders
    if sh.amplitude > 0:
        bumps = temporal_overlap(delay, sh.fwhm, tau0 + sh.offset) + temporal_overlap(
            delay, sh.fwhm, tau0 - sh.offset
        )
        overlap = np.minimum(1.0, overlap + sh.amplitude * bumps)
    return overlap


def etpa_flux_multiplier(
    setting: InterferometerSetting,
    spec: SourceSpec,
    background_same_path: float = 1.0,
    delay=None,
):
    """Fraction of the incident effective flux that remains ETPA-active.

    ``delay`` overrides ``setting.delay`` and may be an array for scans.
    """
    if not 0.0 <= background_same_path <= 1.0:
        raise ValueError(f"background_same_path must lie in [0, 1], got {background_same_path}")
    if not setting.enabled:
        return 1.0 if delay is None or np.ndim(delay) == 0 else np.ones(np.shape(delay))
    ens = split_paths(setting)
    d = setting.delay if delay is None else delay
    value = ens.weight_same_path * background_same_path + ens.weight_cross_path * _cross_path_overlap(
        d, spec, setting
    )
    value = value * polarization_factor(setting.waveplate_angle, setting.epsilon)
    return float(value) if np.ndim(value) == 0 else value
