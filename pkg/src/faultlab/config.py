"""Configuration dataclasses for every stage, plus seed plumbing.

All experiment randomness flows from one global seed: each stage derives its
own child seed via `derive_seed(global_seed, stage_name)`, so stages can be
rerun in isolation and still reproduce.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .errors import ConfigError

REGIMES = ("anomaly_only", "normal_only", "mixed")

# Desk-scale defaults; the paper-scale sizes sit behind SimConfig.paper_scale.
DESK_SIZES = {"anomaly_only": 8432, "normal_only": 50000, "mixed": 50000}
PAPER_SIZES = {"anomaly_only": 8432, "normal_only": 740448, "mixed": 718444}


def derive_seed(global_seed: int, stage: str) -> int:
    """Stable per-stage child seed: first 8 bytes of sha256("seed:stage")."""
    digest = hashlib.sha256(f"{global_seed}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass
class FaultSignatures:
    """How each fault family manifests in the three channels.

    Entirely synthetic: magnitudes are severity-ordered within a family and
    tunable so dataset difficulty can be dialed up or down.
    """

    # Undervoltage, classes 1..6: nominal 3.3 V sagging to a class-specific
    # floor; energy drops proportionally to (nominal - floor), noise grows.
    uv_nominal_v: float = 3.3
    uv_floors_v: tuple = (3.0, 2.84, 2.68, 2.52, 2.36, 2.2)
    uv_energy_per_volt: float = 20.0
    uv_noise_gain: float = 1.0
    # Sensor stuck, classes 7..8: one channel frozen at its start value,
    # plus a small side effect on another channel so the window is visible
    # to mean-level detectors as well. The side effects avoid the energy
    # channel, where benign excursions would camouflage them.
    stuck7_duration_shift: float = 0.018
    stuck8_cpu_shift: float = 0.05
    # MCU high temperature, classes 9..10: cpu ramps toward a saturation
    # target over the first quarter of the window, duration inflates.
    mcu_cpu_targets: tuple = (0.95, 0.80)
    mcu_duration_gains: tuple = (1.6, 1.3)
    mcu_ramp_frac: float = 0.25
    # Buffer overflow, class 11: duration spikes and cpu bursts.
    overflow_duration_gain: float = 3.0
    overflow_duration_base_gain: float = 1.5
    overflow_cpu_burst: float = 0.97
    overflow_spike_prob: float = 0.5


@dataclass
class SimConfig:
    """Telemetry simulator knobs (four devices aggregated into one stream)."""

    seed: int = 0
    n_points: int | None = None  # None -> per-regime default size
    paper_scale: bool = False
    n_devices: int = 4
    start_timestamp: int = 1_577_836_800
    period_s: int = 60
    # Per-device channel baselines; aggregation sums energy and averages
    # cpu/duration, so channel-level noise is what detectors actually see.
    energy_base: tuple = (10.5, 12.0, 9.0, 11.2)
    cpu_base: tuple = (0.32, 0.38, 0.30, 0.35)
    duration_base: tuple = (0.21, 0.26, 0.19, 0.24)
    energy_noise: float = 0.35
    cpu_noise: float = 0.012
    duration_noise: float = 0.006
    cpu_diurnal_amp: float = 0.03
    diurnal_period_steps: int = 1440
    # Benign excursions: sustained dips in energy that are part of normal
    # behavior (load shifts), the main false-positive bait.
    benign_rate: float = 0.004
    benign_len: tuple = (30, 60)
    benign_mag_sigma: tuple = (2.0, 4.5)
    benign_ramp: int = 6  # steps to reach full excursion depth
    # Fault placement.
    fault_rate: float = 0.03
    fault_len: tuple = (10, 60)
    anomaly_window_len: tuple = (240, 400)
    mixed_classes: tuple | None = None  # None -> all classes 1..11
    signatures: FaultSignatures = field(default_factory=FaultSignatures)

    def size_for(self, regime: str) -> int:
        if regime not in REGIMES:
            raise ConfigError(f"unknown regime {regime!r}")
        if self.n_points is not None:
            return self.n_points
        table = PAPER_SIZES if self.paper_scale else DESK_SIZES
        return table[regime]

    def validate(self) -> None:
        if not 0.0 <= self.fault_rate <= 1.0:
            raise ConfigError(f"fault_rate {self.fault_rate} outside [0,1]")
        if self.n_points is not None and self.n_points < 1:
            raise ConfigError("n_points must be >= 1")
        if len(self.energy_base) != self.n_devices:
            raise ConfigError("device baseline tuples must match n_devices")


@dataclass
class CpdConfig:
    """Change-point detector: autoencoder sizes, training and thresholding."""

    window: int = 16
    enc_hidden: int = 16
    dec_hidden: int = 32
    lr: float = 5e-3
    max_epochs: int = 60
    patience: int = 5
    min_delta: float = 1e-5
    batch_windows: int = 256
    max_train_windows: int = 6000
    val_frac: float = 0.2
    k: float = 3.0
    min_gap: int = 2
    min_len: int = 8


@dataclass
class SegclassConfig:
    kind: str = "random_forest"  # which classifier feeds the cascade warm start
    window: int = 16
    stride: int = 8
    dt_max_depth: int = 12
    dt_min_leaf: int = 1
    rf_trees: int = 25
    rf_feature_frac: float | None = None  # None -> sqrt(d)
    rf_bootstrap: bool = True
    nb_var_floor: float = 1e-9
    linear_lr: float = 0.05      # per-sample softmax SGD
    linear_epochs: int = 60
    linear_l2: float = 1e-4
    logreg_lr: float = 2.0       # full-batch softmax descent
    logreg_epochs: int = 1200
    svm_lambda: float = 3e-4     # Crammer-Singer Pegasos
    svm_epochs: int = 40
    # Laplace strength for the warm-start priors, as a fraction of the stream
    # length. Calibrated: more smoothing washes the vote structure out of the
    # prior, less sharpens it to the point of dominating early training.
    prior_smoothing_frac: float = 0.0407


@dataclass
class TaskNetConfig:
    """Shared shape for the Task 2 / Task 3 sequence networks.

    The epoch budget is deliberately modest: at desk scale the cascade has to
    retrain per CV fold, and the warm-start comparison is only meaningful
    before every variant has trained to saturation.
    """

    hidden: int = 32
    lr: float = 1e-3
    max_epochs: int = 5
    patience: int = 5
    min_delta: float = 1e-5
    chunk_len: int = 64
    batch_chunks: int = 16
    val_frac: float = 0.2
    rebalance_frac: float | None = 0.45  # minority-chunk share of each epoch deck


@dataclass
class EvalPlanConfig:
    folds: int = 10
    len_frac_lo: float = 0.5
    len_frac_hi: float = 0.8
    min_valid_folds: int = 8


@dataclass
class RunConfig:
    """Everything one experiment run needs, JSON round-trippable."""

    seed: int = 0
    out_dir: str = "runs/default"
    sim: SimConfig = field(default_factory=SimConfig)
    cpd: CpdConfig = field(default_factory=CpdConfig)
    seg: SegclassConfig = field(default_factory=SegclassConfig)
    task2: TaskNetConfig = field(default_factory=TaskNetConfig)
    task3: TaskNetConfig = field(default_factory=TaskNetConfig)
    plan: EvalPlanConfig = field(default_factory=EvalPlanConfig)

    def stage_seed(self, stage: str) -> int:
        return derive_seed(self.seed, stage)


def _to_jsonable(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _to_jsonable(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, tuple):
        return list(obj)
    return obj


def _from_dict(cls: type, data: dict) -> Any:
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r} for {cls.__name__}")
        ftype = known[key].type
        default = known[key].default_factory() if known[key].default_factory is not dataclasses.MISSING else None  # type: ignore[misc]
        if dataclasses.is_dataclass(default):
            kwargs[key] = _from_dict(type(default), value)
        elif isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def save_run_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(_to_jsonable(cfg), indent=2, sort_keys=True) + "\n")


def load_run_config(path: str | Path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    return _from_dict(RunConfig, data)
