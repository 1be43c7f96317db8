"""Telemetry simulator and fault injection.

Four simulated devices emit per-minute energy/cpu/duration readings which are
aggregated into a single three-channel stream (energy summed, cpu and
duration averaged). Eleven fault classes in four families can be injected;
class 12 is "no fault". Channel signatures are synthetic but severity
ordered, so classes are statistically distinguishable.

Normal behavior includes occasional benign energy excursions (sustained
dips that are not faults); they exist to give detectors a realistic
false-positive temptation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import REGIMES, FaultSignatures, SimConfig, derive_seed
from .errors import CsvFormatError, InvariantViolation, ShapeMismatchError

CSV_HEADER = ["timestamp", "energy", "cpu", "duration", "anomaly", "fault_class"]
NO_FAULT = 12
N_FAULT_CLASSES = 11

FAMILIES = {
    **{c: "undervoltage" for c in range(1, 7)},
    7: "sensor_stuck",
    8: "sensor_stuck",
    9: "mcu_high_temp",
    10: "mcu_high_temp",
    11: "buffer_overflow",
}


@dataclass
class TelemetryRecord:
    timestamp: int
    energy: float
    cpu: float
    duration: float
    anomaly: bool
    fault_class: int


@dataclass
class FaultSpec:
    """A fault class plus its family; params may override signature knobs."""

    class_id: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.class_id not in FAMILIES:
            raise InvariantViolation(f"fault class {self.class_id} outside 1..11")

    @property
    def family(self) -> str:
        return FAMILIES[self.class_id]


class TimeSeriesDataset:
    """Columnar store of TelemetryRecords plus the regime tag."""

    def __init__(self, timestamps, energy, cpu, duration, anomaly, fault_class, regime):
        self.timestamps = np.asarray(timestamps, dtype=np.int64)
        self.energy = np.asarray(energy, dtype=float)
        self.cpu = np.asarray(cpu, dtype=float)
        self.duration = np.asarray(duration, dtype=float)
        self.anomaly = np.asarray(anomaly, dtype=bool)
        self.fault_class = np.asarray(fault_class, dtype=np.int64)
        if regime not in REGIMES:
            raise InvariantViolation(f"unknown regime {regime!r}")
        self.regime = regime
        n = len(self.timestamps)
        for name in ("energy", "cpu", "duration", "anomaly", "fault_class"):
            if len(getattr(self, name)) != n:
                raise ShapeMismatchError(f"column {name} length != {n}")

    def __len__(self) -> int:
        return len(self.timestamps)

    def __getitem__(self, i: int) -> TelemetryRecord:
        return TelemetryRecord(
            int(self.timestamps[i]), float(self.energy[i]), float(self.cpu[i]),
            float(self.duration[i]), bool(self.anomaly[i]), int(self.fault_class[i]),
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, TimeSeriesDataset):
            return NotImplemented
        return (
            self.regime == other.regime
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.energy, other.energy)
            and np.array_equal(self.cpu, other.cpu)
            and np.array_equal(self.duration, other.duration)
            and np.array_equal(self.anomaly, other.anomaly)
            and np.array_equal(self.fault_class, other.fault_class)
        )

    def features(self) -> np.ndarray:
        """The (T, 3) feature matrix X: energy, cpu, duration."""
        return np.column_stack([self.energy, self.cpu, self.duration])

    def slice(self, start: int, end: int) -> "TimeSeriesDataset":
        return TimeSeriesDataset(
            self.timestamps[start:end], self.energy[start:end], self.cpu[start:end],
            self.duration[start:end], self.anomaly[start:end],
            self.fault_class[start:end], self.regime,
        )

    def validate(self) -> None:
        if np.any((self.cpu < 0.0) | (self.cpu > 1.0)):
            raise InvariantViolation("cpu outside [0,1]")
        if np.any(self.duration <= 0.0):
            raise InvariantViolation("non-positive duration")
        if len(self) > 1 and np.any(np.diff(self.timestamps) <= 0):
            raise InvariantViolation("timestamps not strictly increasing")
        mismatched = self.anomaly != (self.fault_class <= N_FAULT_CLASSES)
        if np.any(mismatched):
            raise InvariantViolation("anomaly flag inconsistent with fault_class")
        if self.regime == "normal_only" and np.any(self.anomaly):
            raise InvariantViolation("normal_only dataset contains anomalies")
        if self.regime == "anomaly_only" and not np.all(self.anomaly):
            raise InvariantViolation("anomaly_only dataset contains normal records")


def aggregate_noise_sigma(cfg: SimConfig) -> dict:
    """Baseline noise std of each aggregated channel."""
    nd = cfg.n_devices
    return {
        "energy": cfg.energy_noise * np.sqrt(nd),
        "cpu": cfg.cpu_noise / np.sqrt(nd),
        "duration": cfg.duration_noise / np.sqrt(nd),
    }


def simulate_normal(cfg: SimConfig, n: int | None = None,
                    rng: np.random.Generator | None = None,
                    benign: bool = True) -> TimeSeriesDataset:
    """Baseline stream with seeded noise, diurnal cpu cycle, benign dips."""
    cfg.validate()
    if n is None:
        n = cfg.size_for("normal_only")
    if n < 1:
        raise InvariantViolation("series length must be >= 1")
    if rng is None:
        rng = np.random.default_rng(derive_seed(cfg.seed, "simgen:normal_only"))

    nd = cfg.n_devices
    t = np.arange(n)
    energy = np.zeros(n)
    cpu = np.zeros(n)
    duration = np.zeros(n)
    for d in range(nd):
        energy += cfg.energy_base[d] + rng.normal(0.0, cfg.energy_noise, n)
        phase = d * cfg.diurnal_period_steps / (2 * nd)
        cpu += (
            cfg.cpu_base[d]
            + cfg.cpu_diurnal_amp * np.sin(2 * np.pi * (t + phase) / cfg.diurnal_period_steps)
            + rng.normal(0.0, cfg.cpu_noise, n)
        )
        duration += cfg.duration_base[d] + rng.normal(0.0, cfg.duration_noise, n)
    cpu /= nd
    duration /= nd

    if benign and cfg.benign_rate > 0:
        sigma = aggregate_noise_sigma(cfg)["energy"]
        lo, hi = cfg.benign_len
        starts = rng.random(n)
        pos = 0
        while pos < n:
            if starts[pos] < cfg.benign_rate:
                length = int(rng.integers(lo, hi + 1))
                mag = rng.uniform(*cfg.benign_mag_sigma) * sigma
                # load shifts ramp in and out rather than stepping
                span = np.arange(length, dtype=float)
                ramp = np.minimum(1.0, np.minimum(span + 1.0, length - span) / cfg.benign_ramp)
                seg = energy[pos:pos + length]
                seg -= mag * ramp[:len(seg)]
                pos += length
            else:
                pos += 1

    cpu = np.clip(cpu, 0.0, 1.0)
    duration = np.maximum(duration, 1e-3)
    timestamps = cfg.start_timestamp + t * cfg.period_s
    ds = TimeSeriesDataset(
        timestamps, energy, cpu, duration,
        np.zeros(n, dtype=bool), np.full(n, NO_FAULT), "normal_only",
    )
    return ds


def inject_fault(ds: TimeSeriesDataset, spec: FaultSpec, start: int, length: int,
                 rng: np.random.Generator | int) -> TimeSeriesDataset:
    """Apply one fault window in place; returns the same dataset.

    Rejects windows that fall outside the series or touch a previously
    injected fault.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    if length == 0:
        return ds
    if length < 0 or start < 0 or start + length > len(ds):
        raise InvariantViolation(
            f"fault window [{start}, {start + length}) outside series of length {len(ds)}"
        )
    if np.any(ds.anomaly[start:start + length]):
        raise InvariantViolation(
            f"fault window [{start}, {start + length}) overlaps an existing fault"
        )
    sig = spec.params.get("signatures")
    if sig is None:
        sig = getattr(ds, "_signatures", None) or FaultSignatures()
    end = start + length
    w = slice(start, end)
    cid = spec.class_id

    if spec.family == "undervoltage":
        floor = sig.uv_floors_v[cid - 1]
        sag = sig.uv_nominal_v - floor
        drop = sig.uv_energy_per_volt * sag
        extra_sd = sig.uv_noise_gain * sag
        ds.energy[w] = ds.energy[w] - drop + rng.normal(0.0, extra_sd, length)
    elif spec.family == "sensor_stuck":
        if cid == 7:
            ds.energy[w] = ds.energy[start]
            ds.duration[w] = ds.duration[w] + sig.stuck7_duration_shift
        else:
            ds.duration[w] = ds.duration[start]
            ds.cpu[w] = ds.cpu[w] + sig.stuck8_cpu_shift
    elif spec.family == "mcu_high_temp":
        idx = cid - 9
        target = sig.mcu_cpu_targets[idx]
        gain = sig.mcu_duration_gains[idx]
        ramp_len = max(1, int(np.ceil(sig.mcu_ramp_frac * length)))
        ramp = np.minimum(1.0, np.arange(1, length + 1) / ramp_len)
        ds.cpu[w] = ds.cpu[w] * (1.0 - ramp) + target * ramp
        ds.duration[w] = ds.duration[w] * gain
    else:  # buffer_overflow
        spikes = rng.random(length) < sig.overflow_spike_prob
        factors = np.where(spikes, sig.overflow_duration_gain, sig.overflow_duration_base_gain)
        ds.duration[w] = ds.duration[w] * factors
        cpu_win = ds.cpu[w].copy()
        cpu_win[spikes] = sig.overflow_cpu_burst
        ds.cpu[w] = cpu_win

    ds.cpu[w] = np.clip(ds.cpu[w], 0.0, 1.0)
    ds.duration[w] = np.maximum(ds.duration[w], 1e-3)
    ds.anomaly[w] = True
    ds.fault_class[w] = cid
    return ds


def _attach_signatures(ds: TimeSeriesDataset, cfg: SimConfig) -> None:
    ds._signatures = cfg.signatures


def true_fault_windows(ds: TimeSeriesDataset) -> list[tuple[int, int, int]]:
    """Ground-truth fault extents as (start, end, class_id) half-open triples."""
    out = []
    t = 0
    n = len(ds)
    while t < n:
        if ds.anomaly[t]:
            s = t
            cid = int(ds.fault_class[t])
            while t < n and ds.anomaly[t] and ds.fault_class[t] == cid:
                t += 1
            out.append((s, t, cid))
        else:
            t += 1
    return out


def generate_dataset(regime: str, cfg: SimConfig) -> TimeSeriesDataset:
    """Produce one of the three dataset regimes, deterministically per seed."""
    if regime not in REGIMES:
        raise InvariantViolation(f"unknown regime {regime!r}")
    cfg.validate()
    n = cfg.size_for(regime)
    rng = np.random.default_rng(derive_seed(cfg.seed, f"simgen:{regime}"))

    if regime == "normal_only":
        return simulate_normal(cfg, n=n, rng=rng)

    if regime == "anomaly_only":
        # Back-to-back fault windows tiling the whole series; classes cycle
        # through shuffled permutations so every class appears.
        ds = simulate_normal(cfg, n=n, rng=rng, benign=False)
        _attach_signatures(ds, cfg)
        lo, hi = cfg.anomaly_window_len
        pos = 0
        class_queue: list[int] = []
        while pos < n:
            if not class_queue:
                class_queue = list(rng.permutation(np.arange(1, N_FAULT_CLASSES + 1)))
            length = int(rng.integers(lo, hi + 1))
            if n - pos - length < lo:
                length = n - pos
            inject_fault(ds, FaultSpec(int(class_queue.pop())), pos, length, rng)
            pos += length
        ds.regime = "anomaly_only"
        ds.validate()
        return ds

    # mixed
    ds = simulate_normal(cfg, n=n, rng=rng)
    _attach_signatures(ds, cfg)
    pool = tuple(cfg.mixed_classes) if cfg.mixed_classes else tuple(range(1, N_FAULT_CLASSES + 1))
    target = int(round(cfg.fault_rate * n))
    lo, hi = cfg.fault_len
    total = 0
    attempts = 0
    class_queue: list[int] = []
    while total < target and attempts < 50 * max(1, target):
        attempts += 1
        length = int(rng.integers(lo, hi + 1))
        start = int(rng.integers(0, max(1, n - length)))
        # Keep one normal step of clearance so adjacent faults never merge.
        guard_lo = max(0, start - 1)
        guard_hi = min(n, start + length + 1)
        if np.any(ds.anomaly[guard_lo:guard_hi]):
            continue
        # Classes cycle through shuffled permutations of the pool so counts
        # stay near-balanced even with few windows.
        if not class_queue:
            class_queue = list(rng.permutation(np.asarray(pool)))
        inject_fault(ds, FaultSpec(int(class_queue.pop())), start, length, rng)
        total += length
    ds.regime = "mixed"
    ds.validate()
    return ds


def write_csv(ds: TimeSeriesDataset, path: str | Path) -> None:
    """Serialize with full float precision (repr round-trips float64)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for i in range(len(ds)):
            writer.writerow([
                int(ds.timestamps[i]), repr(float(ds.energy[i])), repr(float(ds.cpu[i])),
                repr(float(ds.duration[i])), int(ds.anomaly[i]), int(ds.fault_class[i]),
            ])


def read_csv(path: str | Path) -> TimeSeriesDataset:
    """Parse and validate; regime inferred from the label columns."""
    rows: list[list[str]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(1, "empty file, expected header") from None
        if header != CSV_HEADER:
            raise CsvFormatError(1, f"bad header {header!r}")
        rows = list(reader)

    n = len(rows)
    timestamps = np.empty(n, dtype=np.int64)
    energy = np.empty(n)
    cpu = np.empty(n)
    duration = np.empty(n)
    anomaly = np.empty(n, dtype=bool)
    fault_class = np.empty(n, dtype=np.int64)
    for i, row in enumerate(rows):
        line_no = i + 2  # header is line 1
        if len(row) != 6:
            raise CsvFormatError(line_no, f"expected 6 fields, got {len(row)}")
        try:
            timestamps[i] = int(row[0])
            energy[i] = float(row[1])
            cpu[i] = float(row[2])
            duration[i] = float(row[3])
            flag = int(row[4])
            fault_class[i] = int(row[5])
        except ValueError as exc:
            raise CsvFormatError(line_no, f"unparsable field: {exc}") from None
        if flag not in (0, 1):
            raise CsvFormatError(line_no, f"anomaly flag must be 0/1, got {row[4]}")
        anomaly[i] = bool(flag)
        if not 0.0 <= cpu[i] <= 1.0:
            raise CsvFormatError(line_no, f"cpu {cpu[i]} outside [0,1]")
        if duration[i] <= 0:
            raise CsvFormatError(line_no, f"duration {duration[i]} not positive")
        if not 1 <= fault_class[i] <= 12:
            raise CsvFormatError(line_no, f"fault_class {fault_class[i]} outside 1..12")
        if anomaly[i] != (fault_class[i] <= N_FAULT_CLASSES):
            raise CsvFormatError(line_no, "anomaly flag inconsistent with fault_class")
        if i > 0 and timestamps[i] <= timestamps[i - 1]:
            raise CsvFormatError(line_no, "timestamps not strictly increasing")

    if n and bool(np.all(anomaly)):
        regime = "anomaly_only"
    elif bool(np.any(anomaly)):
        regime = "mixed"
    else:
        regime = "normal_only"
    return TimeSeriesDataset(timestamps, energy, cpu, duration, anomaly, fault_class, regime)
