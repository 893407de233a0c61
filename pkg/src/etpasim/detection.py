"""Camera model: fluorescence rate to counts, background populations, Poisson
shot noise and the repeated-exposure protocol.

Condition tags follow the background audit:

* ``PM``  phase matched, dye in the cuvette (signal + ethanol background + dark)
* ``NPM`` crystal detuned, no pairs (ethanol background + dark)
* ``E``   pure ethanol (ethanol background + dark)
* ``D``   laser off (dark only)
"""

from __future__ import annotations

import csv
import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

RECORD_COLUMNS = ("condition", "counts", "exposure_s", "seed")


class Condition(str, enum.Enum):
    PM = "PM"
    NPM = "NPM"
    E = "E"
    D = "D"


_CONDITION_INDEX = {c: i for i, c in enumerate(Condition)}


@dataclass(frozen=True)
class DetectorSpec:
    k_cal: float = 4.5  # G / (eta_coll * eta_cam), 1/counts
    k_cal_uncertainty: float = 0.9
    ethanol_bg_rate: float = 2000.0  # counts/s, synthetic
    dark_rate: float = 400.0  # counts/s, synthetic
    exposure: float = 300.0  # s
    repeats: int = 10

    def __post_init__(self):
        if not self.k_cal > 0:
            raise ValueError(f"k_cal must be > 0, got {self.k_cal}")
        if self.k_cal_uncertainty < 0:
            raise ValueError("k_cal_uncertainty must be >= 0")
        if not self.exposure > 0:
            raise ValueError(f"exposure must be > 0, got {self.exposure}")
        if int(self.repeats) != self.repeats or self.repeats < 1:
            raise ValueError(f"repeats must be an integer >= 1, got {self.repeats}")
        if self.ethanol_bg_rate < 0 or self.dark_rate < 0:
            raise ValueError("background rates must be >= 0")


@dataclass(frozen=True)
class MeasurementRecord:
    condition: Condition
    counts: int
    exposure: float
    seed: int
    group: str = ""

    def __post_init__(self):
        if self.counts < 0:
            raise ValueError("counts must be >= 0")


def expected_counts(fluorescence_rate: float, det: DetectorSpec, condition: Condition | str) -> float:
    """Mean camera counts for one exposure."""
    if fluorescence_rate < 0:
        raise ValueError(f"fluorescence rate must be >= 0, got {fluorescence_rate}")
    condition = Condition(condition)
    rate = det.dark_rate
    if condition is not Condition.D:
        rate += det.ethanol_bg_rate
    if condition is Condition.PM:
        rate += fluorescence_rate / det.k_cal
    return rate * det.exposure


def derive_seed(master_seed: int, group: int, condition: Condition | str, repeat: int) -> int:
    """Counter-based 64-bit seed: depends only on its coordinates, never on
    call order, so serial and parallel runs agree."""
    ss = np.random.SeedSequence(int(master_seed),
                                spawn_key=(int(group), _CONDITION_INDEX[Condition(condition)], int(repeat)))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return (int(hi) << 32) | int(lo)


def simulate_record(fluorescence_rate: float, det: DetectorSpec, condition: Condition | str,
                    seed: int, group: str = "") -> MeasurementRecord:
    mean = expected_counts(fluorescence_rate, det, condition)
    rng = np.random.default_rng(seed)
    counts = int(rng.poisson(mean)) if mean > 0 else 0
    return MeasurementRecord(Condition(condition), counts, det.exposure, int(seed), group)


def run_protocol(rates: Mapping[Condition | str, float], det: DetectorSpec, master_seed: int,
                 group: int = 0, label: str | None = None,
                 workers: int | None = None) -> list[MeasurementRecord]:
    """Simulate ``det.repeats`` exposures for each condition in ``rates``.

    ``rates`` maps condition to the fluorescence rate seen in that condition
    (only PM uses it). Output is ordered by condition, then repeat.
    """
    label = str(group) if label is None else label
    jobs = []
    for cond, rate in rates.items():
        cond = Condition(cond)
        for k in range(int(det.repeats)):
            jobs.append((float(rate), cond, derive_seed(master_seed, group, cond, k)))

    def one(job):
        rate, cond, seed = job
        return simulate_record(rate, det, cond, seed, label)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, jobs))
    return [one(j) for j in jobs]


def select(records: Iterable[MeasurementRecord], condition: Condition | str,
           group: str | None = None) -> list[MeasurementRecord]:
    condition = Condition(condition)
    return [r for r in records if r.condition is condition and (group is None or r.group == group)]


def write_records_csv(path: str | Path, records: Sequence[MeasurementRecord]) -> None:
    """Columns: condition, counts, exposure_s, seed, plus a trailing group label."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_COLUMNS + ("group",))
        for r in records:
            w.writerow([r.condition.value, r.counts, repr(float(r.exposure)), r.seed, r.group])


def read_records_csv(path: str | Path) -> list[MeasurementRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in RECORD_COLUMNS if c not in (reader.fieldnames or ())]
        if missing:
            raise ValueError(f"{path}: missing columns {', '.join(missing)}")
        out = []
        for row in reader:
            out.append(MeasurementRecord(
                condition=Condition(row["condition"].strip()),
                counts=int(row["counts"]),
                exposure=float(row["exposure_s"]),
                seed=int(row["seed"]),
                group=row.get("group", "") or "",
            ))
    return out
