"""Scenario configuration: presets, flat YAML config files and validation.

Config files are a single flat YAML mapping. Every dimensional key carries
its unit as a suffix (``exposure_s``, ``waist_um``, ``delay_step_fs``).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .detection import DetectorSpec
from .interferometer import InterferometerSetting, Shoulders
from .sample import BeamGeometry, SampleSpec
from .spdc_source import SourceSpec

KINDS = ("flux_scan", "delay_scan", "polarization_scan", "spa_calibration", "table1",
         "background_audit")


class ConfigError(ValueError):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(self.diagnostics))


@dataclass(frozen=True)
class Preset:
    name: str
    sample: SampleSpec
    # parameter name -> (value, 1 sigma, units) as published
    expected: dict = field(default_factory=dict)


# Y at 110 mmol/l is unknown; sigma_e is chosen so that Y * sigma_e matches the
# published product, and Y = 0.95 is only used for the SPA calibration.
PRESETS = {
    "rh6g-110mmol": Preset(
        "rh6g-110mmol",
        SampleSpec(concentration=0.110, sigma_e=6.4e-23 / 0.95, yield_known=False),
        {"Y_sigma_e": (6.4e-23, 0.5e-23, "cm2")},
    ),
    "rh6g-4.5mmol": Preset(
        "rh6g-4.5mmol",
        SampleSpec(concentration=4.5e-3, sigma_e=9.9e-22),
        {"sigma_e": (9.9e-22, 4.9e-22, "cm2")},
    ),
    "rh6g-38umol": Preset(
        "rh6g-38umol",
        SampleSpec(concentration=38e-6, sigma_e=1.9e-21),
        {"sigma_e": (1.9e-21, 0.9e-21, "cm2")},
    ),
}

TABLE1_PRESETS = ("rh6g-4.5mmol", "rh6g-38umol", "rh6g-110mmol")

DEFAULT_PRESET = {
    "flux_scan": "rh6g-4.5mmol",
    "delay_scan": "rh6g-110mmol",
    "polarization_scan": "rh6g-110mmol",
    "spa_calibration": "rh6g-110mmol",
    "table1": "rh6g-4.5mmol",
    "background_audit": "rh6g-110mmol",
}

K_CAL_EXPECTED = (4.5, 0.9, "1/counts")
FWHM_EXPECTED = (140.0, None, "fs")


@dataclass(frozen=True)
class Scenario:
    kind: str
    preset: str
    source: SourceSpec
    sample: SampleSpec
    detector: DetectorSpec
    geometry: BeamGeometry
    interferometer: InterferometerSetting
    background_same_path: float = 1.0
    raw_pair_rates: tuple = ()  # 1/s, flux scans
    effective_pair_rate: float = 4.2e7  # 1/s, delay and polarization scans
    pump_power: float = 1.0  # W, background audit
    delays: tuple = ()  # fs
    angles: tuple = ()  # deg
    spa_photon_rate: float = 1e8  # 1/s
    seed: int = 0
    noiseless: bool = False
    output_dir: str = "out"
    workers: int = 1

    @property
    def expected(self) -> dict:
        return PRESETS[self.preset].expected if self.preset in PRESETS else {}


def inclusive_range(start: float, stop: float, step: float) -> tuple:
    if step <= 0:
        raise ValueError("step must be > 0")
    if stop < start:
        raise ValueError("scan range is empty (stop < start)")
    n = int(np.floor((stop - start) / step + 1e-9)) + 1
    return tuple(float(start + i * step) for i in range(n))


# config key -> (target, field name, scale to internal units)
_KEYS = {
    "pairs_per_watt": ("source", "pairs_per_watt", 1.0),
    "coherence_time_fwhm_fs": ("source", "coherence_time_fwhm", 1.0),
    "coincident_fraction": ("source", "coincident_fraction", 1.0),
    "center_wavelength_nm": ("source", "center_wavelength", 1.0),
    "eta_free": ("source", "eta_free", 1.0),
    "eta_gated": ("source", "eta_gated", 1.0),
    "splitter_coincidence_prob": ("source", "splitter_coincidence_prob", 1.0),
    "concentration_mol_l": ("sample", "concentration", 1.0),
    "concentration_mmol_l": ("sample", "concentration", 1e-3),
    "active_volume_l": ("sample", "active_volume", 1.0),
    "quantum_yield": ("sample", "quantum_yield", 1.0),
    "yield_known": ("sample", "yield_known", None),
    "sigma_e_cm2": ("sample", "sigma_e", 1.0),
    "delta_r_cm4s": ("sample", "delta_r", 1.0),
    "sigma_spa_cm2": ("sample", "sigma_spa", 1.0),
    "path_length_cm": ("sample", "path_length", 1.0),
    "waist_um": ("geometry", "waist", 1e-4),
    "k_cal": ("detector", "k_cal", 1.0),
    "k_cal_uncertainty": ("detector", "k_cal_uncertainty", 1.0),
    "ethanol_bg_rate_cps": ("detector", "ethanol_bg_rate", 1.0),
    "dark_rate_cps": ("detector", "dark_rate", 1.0),
    "exposure_s": ("detector", "exposure", 1.0),
    "repeats": ("detector", "repeats", None),
    "interferometer_enabled": ("interferometer", "enabled", None),
    "delay_fs": ("interferometer", "delay", 1.0),
    "waveplate_angle_deg": ("interferometer", "waveplate_angle", 1.0),
    "splitter_reflectivity": ("interferometer", "reflectivity", 1.0),
    "zero_delay_offset_fs": ("interferometer", "zero_delay_offset", 1.0),
    "polarization_epsilon": ("interferometer", "epsilon", 1.0),
    "shoulder_amplitude": ("shoulders", "amplitude", 1.0),
    "shoulder_offset_fs": ("shoulders", "offset", 1.0),
    "shoulder_fwhm_fs": ("shoulders", "fwhm", 1.0),
    "background_same_path": ("scenario", "background_same_path", 1.0),
    "raw_pair_rates_cps": ("scenario", "raw_pair_rates", None),
    "pump_powers_w": ("scan", "pump_powers", None),
    "effective_pair_rate_cps": ("scenario", "effective_pair_rate", 1.0),
    "pump_power_w": ("scenario", "pump_power", 1.0),
    "delay_start_fs": ("scan", "delay_start", None),
    "delay_stop_fs": ("scan", "delay_stop", None),
    "delay_step_fs": ("scan", "delay_step", None),
    "angle_start_deg": ("scan", "angle_start", None),
    "angle_stop_deg": ("scan", "angle_stop", None),
    "angle_step_deg": ("scan", "angle_step", None),
    "spa_photon_rate_cps": ("scenario", "spa_photon_rate", 1.0),
    "kind": ("run", "kind", None),
    "preset": ("run", "preset", None),
    "seed": ("run", "seed", None),
    "noiseless": ("run", "noiseless", None),
    "output_dir": ("run", "output_dir", None),
    "workers": ("run", "workers", None),
}

REQUIRED_KEYS = ("kind",)
_BOOL_KEYS = {"yield_known", "interferometer_enabled", "noiseless"}
_INT_KEYS = {"repeats", "seed", "workers"}
_STR_KEYS = {"kind", "preset", "output_dir"}
_LIST_KEYS = {"raw_pair_rates_cps", "pump_powers_w"}

SCAN_DEFAULTS = {
    "delay_start": -400.0, "delay_stop": 400.0, "delay_step": 20.0,
    "angle_start": 0.0, "angle_stop": 90.0, "angle_step": 10.0,
}
# Effective 2.0e7 .. 1.2e8 pairs/s after the 10 % coincident fraction.
DEFAULT_RAW_PAIR_RATES = tuple(float(r) for r in np.linspace(2.0e8, 1.2e9, 6))


def _parse_yaml(text: str) -> tuple[dict, dict, list]:
    """Return (values, key line numbers, diagnostics)."""
    diags: list[str] = []
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}: " if mark is not None else ""
        return {}, {}, [f"{where}YAML syntax error: {getattr(exc, 'problem', exc)}"]
    if node is None:
        return {}, {}, []
    if not isinstance(node, yaml.MappingNode):
        return {}, {}, [f"line {node.start_mark.line + 1}: config must be a flat key: value mapping"]
    values, lines = {}, {}
    constructor = yaml.SafeLoader("")
    for key_node, value_node in node.value:
        key = key_node.value
        line = key_node.start_mark.line + 1
        if key in lines:
            diags.append(f"line {line}: duplicate key '{key}' (first on line {lines[key]})")
            continue
        if isinstance(value_node, yaml.MappingNode):
            diags.append(f"line {line}: '{key}' must be a scalar or list, not a mapping")
            continue
        lines[key] = line
        values[key] = constructor.construct_object(value_node, deep=True)
    return values, lines, diags


def _coerce(key: str, value, line: int, diags: list):
    where = f"line {line}: " if line else ""
    if key in _BOOL_KEYS:
        if not isinstance(value, bool):
            diags.append(f"{where}'{key}' must be true or false")
            return None
        return value
    if key in _INT_KEYS:
        if isinstance(value, bool) or not isinstance(value, int):
            diags.append(f"{where}'{key}' must be an integer")
            return None
        return value
    if key in _STR_KEYS:
        return str(value)
    if key in _LIST_KEYS:
        if not isinstance(value, list) or not value:
            diags.append(f"{where}'{key}' must be a non-empty list of numbers")
            return None
        try:
            return tuple(float(v) for v in value)
        except (TypeError, ValueError):
            diags.append(f"{where}'{key}' must be a list of numbers")
            return None
    try:
        if isinstance(value, bool):
            raise TypeError
        return float(value)
    except (TypeError, ValueError):
        diags.append(f"{where}'{key}' must be a number, got {value!r}")
        return None


def validate_config(text: str, overrides: dict | None = None) -> Scenario:
    """Parse and normalize a config into a :class:`Scenario`.

    ``overrides`` (e.g. from command-line flags) use config key names and
    take precedence over the file. Raises :class:`ConfigError` carrying
    line-numbered diagnostics.
    """
    values, lines, diags = _parse_yaml(text)
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
            lines.pop(key, None)

    for key in values:
        if key not in _KEYS:
            diags.append(f"line {lines.get(key, '?')}: unknown key '{key}'")
    missing = [k for k in REQUIRED_KEYS if k not in values]
    if missing:
        diags.append("missing required keys: " + ", ".join(missing))

    buckets: dict[str, dict] = {t: {} for t in
                                ("source", "sample", "geometry", "detector", "interferometer",
                                 "shoulders", "scenario", "scan", "run")}
    origin: dict[tuple, str] = {}
    for key, raw in values.items():
        if key not in _KEYS:
            continue
        target, name, scale = _KEYS[key]
        value = _coerce(key, raw, lines.get(key, 0), diags)
        if value is None:
            continue
        if scale is not None and scale != 1.0:
            value = value * scale
        buckets[target][name] = value
        origin[(target, name)] = key
    if diags:
        raise ConfigError(diags)

    run = buckets["run"]
    kind = run["kind"]
    if kind not in KINDS:
        raise ConfigError([f"line {lines.get('kind', '?')}: unknown scenario kind '{kind}' "
                           f"(expected one of: {', '.join(KINDS)})"])
    preset_name = run.get("preset", DEFAULT_PRESET[kind])
    if preset_name not in PRESETS:
        raise ConfigError([f"line {lines.get('preset', '?')}: unknown preset '{preset_name}' "
                           f"(available: {', '.join(PRESETS)})"])

    def build(target, factory, base=None):
        kwargs = buckets[target]
        try:
            if base is not None:
                return dataclasses.replace(base, **kwargs)
            return factory(**kwargs)
        except ValueError as exc:
            msg = str(exc)
            keys = [k for (t, n), k in origin.items() if t == target and msg.startswith(n)]
            where = f"line {lines.get(keys[0], '?')}: " if keys else ""
            diags.append(f"{where}invariant violated: {msg}")
            return None

    source = build("source", SourceSpec)
    sample = build("sample", None, PRESETS[preset_name].sample)
    geometry = build("geometry", BeamGeometry)
    detector = build("detector", DetectorSpec)
    if kind in ("delay_scan", "polarization_scan"):
        buckets["interferometer"].setdefault("enabled", True)
    shoulders = build("shoulders", Shoulders)
    if shoulders is not None:
        buckets["interferometer"]["shoulders"] = shoulders
    interferometer = build("interferometer", InterferometerSetting)

    scan = {**SCAN_DEFAULTS, **buckets["scan"]}
    scenario_kw = dict(buckets["scenario"])
    try:
        delays = inclusive_range(scan["delay_start"], scan["delay_stop"], scan["delay_step"])
        angles = inclusive_range(scan["angle_start"], scan["angle_stop"], scan["angle_step"])
    except ValueError as exc:
        diags.append(f"invariant violated: {exc}")
        delays = angles = ()
    if "pump_powers" in scan and "raw_pair_rates" in scenario_kw:
        diags.append(f"line {lines.get('pump_powers_w', '?')}: give either pump_powers_w or "
                     "raw_pair_rates_cps, not both")
    bsp = scenario_kw.get("background_same_path", 1.0)
    if not 0.0 <= bsp <= 1.0:
        diags.append(f"line {lines.get('background_same_path', '?')}: invariant violated: "
                     f"background_same_path must lie in [0, 1], got {bsp}")
    for key in ("effective_pair_rate", "spa_photon_rate", "pump_power"):
        if key in scenario_kw and scenario_kw[key] < 0:
            cfg_key = origin[("scenario", key)]
            diags.append(f"line {lines.get(cfg_key, '?')}: invariant violated: {cfg_key} must be >= 0")
    if run.get("workers", 1) < 1:
        diags.append(f"line {lines.get('workers', '?')}: workers must be >= 1")
    if diags:
        raise ConfigError(diags)

    if "pump_powers" in scan:
        if any(p < 0 for p in scan["pump_powers"]):
            raise ConfigError([f"line {lines.get('pump_powers_w', '?')}: pump powers must be >= 0"])
        scenario_kw["raw_pair_rates"] = tuple(source.pairs_per_watt * p for p in scan["pump_powers"])
    scenario_kw.setdefault("raw_pair_rates", DEFAULT_RAW_PAIR_RATES)
    if any(r < 0 for r in scenario_kw["raw_pair_rates"]):
        raise ConfigError(["invariant violated: pair rates must be >= 0"])

    return Scenario(
        kind=kind, preset=preset_name, source=source, sample=sample, detector=detector,
        geometry=geometry, interferometer=interferometer, delays=delays, angles=angles,
        seed=run.get("seed", 0), noiseless=run.get("noiseless", False),
        output_dir=run.get("output_dir", "out"), workers=run.get("workers", 1), **scenario_kw,
    )


def load_config(path: str | Path, overrides: dict | None = None) -> Scenario:
    return validate_config(Path(path).read_text(), overrides)
