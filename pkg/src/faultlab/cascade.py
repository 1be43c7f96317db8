"""The SMTCNN cascade: segment proposal, anomaly refinement, classification.

Task 1 reuses the change-point detector to propose segments (mask O_t1).
Task 2 is a two-layer LSTM with a 2-way softmax head, trained only on steps
inside proposed segments; its per-step anomaly probability is O_t2 (zero
outside segments). Task 3 is a two-layer LSTM over [X, O_t1, O_t2] with a
12-way softmax head trained on the per-step class labels, optionally warm
started from segment-classifier predictions (a per-class head-bias prior).

Ablations: b2_no_cpd replaces O_t1 with an all-ones mask; b3_no_segclass
drops the warm start.

Long series are processed as fixed-length stateless chunks, during both
training and inference, so the two phases see identical input distributions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .changepoint import (
    LstmAutoencoder,
    Segment,
    ThresholdSpec,
    detect_changepoints,
    flags_to_segments,
    reconstruction_errors,
    segments_to_mask,
)
from .config import CpdConfig, SegclassConfig, TaskNetConfig
from .errors import DegenerateDataError, InvariantViolation, ShapeMismatchError
from .nncore import (
    AdamState,
    Checkpoint,
    DenseParams,
    EarlyStopConfig,
    LstmCellParams,
    sequence_cross_entropy,
    train,
)
from .nncore.layers import lstm_backward_batch, lstm_forward_batch, softmax
from .segclass import ClassifierModel, predict_batch, windowize_features
from .simgen import NO_FAULT, TimeSeriesDataset

N_CLASSES = 12
VARIANTS = ("full", "b2_no_cpd", "b3_no_segclass")


@dataclass
class CascadeInputs:
    x: np.ndarray      # (T, 3) feature matrix
    o_t1: np.ndarray   # (T,) binary segment mask
    o_t2: np.ndarray   # (T,) anomaly probabilities

    def __post_init__(self):
        if not (len(self.x) == len(self.o_t1) == len(self.o_t2)):
            raise ShapeMismatchError("cascade input lengths differ")
        if np.any((self.o_t1 != 0.0) & (self.o_t1 != 1.0)):
            raise InvariantViolation("O_t1 must be a 0/1 mask")
        if np.any((self.o_t2 < 0.0) | (self.o_t2 > 1.0)):
            raise InvariantViolation("O_t2 must lie in [0,1]")


@dataclass
class CascadePrediction:
    classes: np.ndarray   # (T,) in 1..12
    anomaly: np.ndarray   # (T,) bool, class != 12
    probs: np.ndarray     # (T, 12)


class SequenceClassifier:
    """Two stacked LSTM layers + softmax head over every step."""

    def __init__(self, lstm1: LstmCellParams, lstm2: LstmCellParams, head: DenseParams):
        self.lstm1 = lstm1
        self.lstm2 = lstm2
        self.head = head
        self.train_result = None

    @classmethod
    def init(cls, rng: np.random.Generator, input_dim: int, hidden: int,
             n_out: int) -> "SequenceClassifier":
        return cls(
            LstmCellParams.init(rng, input_dim, hidden),
            LstmCellParams.init(rng, hidden, hidden),
            DenseParams.init(rng, hidden, n_out, activation="softmax"),
        )

    @property
    def n_out(self) -> int:
        return self.head.out_size

    def param_arrays(self) -> list[np.ndarray]:
        return [
            self.lstm1.w_input, self.lstm1.w_hidden, self.lstm1.bias,
            self.lstm2.w_input, self.lstm2.w_hidden, self.lstm2.bias,
            self.head.w, self.head.b,
        ]

    def _forward(self, x: np.ndarray, want_cache: bool):
        h1, c1 = lstm_forward_batch(x, self.lstm1, want_cache=want_cache)
        h2, c2 = lstm_forward_batch(h1, self.lstm2, want_cache=want_cache)
        logits = h2 @ self.head.w.T + self.head.b
        probs = softmax(logits, axis=-1)
        return probs, (c1, c2, h2)

    def forward_probs(self, x: np.ndarray) -> np.ndarray:
        probs, _ = self._forward(x, want_cache=False)
        return probs

    def loss(self, batch) -> float:
        x, labels = batch
        probs, _ = self._forward(x, want_cache=False)
        value, _ = sequence_cross_entropy(probs, labels)
        return value

    def loss_and_grads(self, batch):
        """batch = (x: (B, L, D), labels: (B, L) ints in 0..n_out, 0 = ignore)."""
        x, labels = batch
        probs, (c1, c2, h2) = self._forward(x, want_cache=True)
        value, dlogits = sequence_cross_entropy(probs, labels)
        # head is identity-then-softmax internally; dlogits already folds the
        # softmax jacobian, so only the linear part remains
        flat_h = h2.reshape(-1, self.head.in_size)
        flat_dl = dlogits.reshape(-1, self.head.out_size)
        dw_head = flat_dl.T @ flat_h
        db_head = flat_dl.sum(axis=0)
        dh2 = dlogits @ self.head.w
        g2 = lstm_backward_batch(c2, dh2)
        g1 = lstm_backward_batch(c1, g2.x)
        grads = [g1.w_input, g1.w_hidden, g1.bias,
                 g2.w_input, g2.w_hidden, g2.bias,
                 dw_head, db_head]
        return value, grads

    def infer_series(self, x: np.ndarray, chunk_len: int) -> np.ndarray:
        """(T, D) -> per-step probabilities (T, n_out), stateless chunks."""
        t = len(x)
        n_chunks = (t + chunk_len - 1) // chunk_len
        padded = np.zeros((n_chunks * chunk_len, x.shape[1]))
        padded[:t] = x
        probs = self.forward_probs(padded.reshape(n_chunks, chunk_len, -1))
        return probs.reshape(-1, self.n_out)[:t]

    def to_checkpoint(self, kind: str, meta: dict | None = None) -> Checkpoint:
        arrays = {
            "l1_wx": self.lstm1.w_input, "l1_wh": self.lstm1.w_hidden, "l1_b": self.lstm1.bias,
            "l2_wx": self.lstm2.w_input, "l2_wh": self.lstm2.w_hidden, "l2_b": self.lstm2.bias,
            "head_w": self.head.w, "head_b": self.head.b,
        }
        return Checkpoint(kind=kind, meta=meta or {}, arrays=arrays)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "SequenceClassifier":
        return cls(
            LstmCellParams(ckpt.arrays["l1_wx"], ckpt.arrays["l1_wh"], ckpt.arrays["l1_b"]),
            LstmCellParams(ckpt.arrays["l2_wx"], ckpt.arrays["l2_wh"], ckpt.arrays["l2_b"]),
            DenseParams(ckpt.arrays["head_w"], ckpt.arrays["head_b"], "softmax"),
        )


def chunk_series(x: np.ndarray, labels: np.ndarray, chunk_len: int):
    """Split into stateless chunks; the tail keeps label 0 = ignored."""
    t = len(x)
    n_chunks = (t + chunk_len - 1) // chunk_len
    xs = np.zeros((n_chunks, chunk_len, x.shape[1]))
    ys = np.zeros((n_chunks, chunk_len), dtype=np.int64)
    for i in range(n_chunks):
        lo = i * chunk_len
        hi = min(t, lo + chunk_len)
        xs[i, :hi - lo] = x[lo:hi]
        ys[i, :hi - lo] = labels[lo:hi]
    return xs, ys


def _train_seq_model(model: SequenceClassifier, xs: np.ndarray, ys: np.ndarray,
                     cfg: TaskNetConfig, rng: np.random.Generator,
                     rare: np.ndarray | None = None) -> None:
    """Minibatch training over label chunks.

    `rare` marks chunks carrying the minority labels; they are repeated per
    epoch until they hold roughly cfg.rebalance_frac of the deck, otherwise
    the sequence loss is dominated by the majority class and the budgeted
    epoch count never leaves the all-majority solution. Only batch
    composition changes; the loss on any given batch stays the plain
    sequence cross entropy.
    """
    keep = np.nonzero(ys.any(axis=1))[0]  # chunks with at least one labeled step
    if len(keep) == 0:
        raise DegenerateDataError("no labeled chunks to train on")
    xs, ys = xs[keep], ys[keep]
    if rare is not None:
        rare = np.asarray(rare, dtype=bool)[keep]
    n_val = max(1, int(cfg.val_frac * len(xs)))
    val = (xs[-n_val:], ys[-n_val:])
    trn_x, trn_y = xs[:-n_val], ys[:-n_val]
    trn_rare = None if rare is None else rare[:-n_val]
    if len(trn_x) == 0:
        trn_x, trn_y = val
        trn_rare = None if rare is None else rare[-n_val:]

    deck = np.arange(len(trn_x))
    if cfg.rebalance_frac and trn_rare is not None:
        k = int(trn_rare.sum())
        frac = cfg.rebalance_frac
        if 0 < k < frac * len(trn_x):
            want = frac * (len(trn_x) - k) / (1.0 - frac)
            extra = int(round(want)) - k
            rare_idx = np.nonzero(trn_rare)[0]
            reps = np.tile(rare_idx, int(np.ceil(extra / k)))[:extra]
            deck = np.concatenate([deck, reps])

    def make_batches(batch_rng: np.random.Generator):
        order = batch_rng.permutation(deck)
        return [
            (trn_x[order[i:i + cfg.batch_chunks]], trn_y[order[i:i + cfg.batch_chunks]])
            for i in range(0, len(order), cfg.batch_chunks)
        ]

    model.train_result = train(
        model, make_batches, val,
        adam=AdamState(alpha=cfg.lr),
        max_epochs=cfg.max_epochs,
        early=EarlyStopConfig(patience=cfg.patience, min_delta=cfg.min_delta),
        rng=rng,
    )


@dataclass
class Standardizer:
    mu: np.ndarray
    sd: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Standardizer":
        return cls(x.mean(axis=0), np.maximum(x.std(axis=0), 1e-9))

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mu) / self.sd


# --- Task 1 -------------------------------------------------------------------

def task1_propose(series, model: LstmAutoencoder, threshold: ThresholdSpec,
                  cfg: CpdConfig) -> tuple[list[Segment], np.ndarray]:
    """Delegates to the change-point module; mask is 1 inside segments."""
    x = series.features() if isinstance(series, TimeSeriesDataset) else np.asarray(series, dtype=float)
    errors = reconstruction_errors(model, x)
    flags = detect_changepoints(errors, threshold)
    segments = flags_to_segments(flags, min_gap=cfg.min_gap, min_len=cfg.min_len,
                                 window=cfg.window)
    return segments, segments_to_mask(segments, len(x))


# --- Task 2 -------------------------------------------------------------------

def task2_labels(anomaly: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """1 = normal, 2 = anomaly inside segments; 0 = outside (ignored)."""
    labels = np.where(np.asarray(anomaly, dtype=bool), 2, 1).astype(np.int64)
    labels[np.asarray(mask) == 0.0] = 0
    return labels


def train_task2(mixed: TimeSeriesDataset, mask: np.ndarray, cfg: TaskNetConfig,
                std: Standardizer, seed: int = 0) -> SequenceClassifier:
    if mixed.regime != "mixed":
        raise InvariantViolation(f"task 2 trains on the mixed regime, got {mixed.regime}")
    if not np.any(np.asarray(mask) == 1.0):
        raise DegenerateDataError("no proposed segments; cannot train task 2")
    rng = np.random.default_rng(seed)
    model = SequenceClassifier.init(rng, 3, cfg.hidden, 2)
    xs, ys = chunk_series(std.apply(mixed.features()),
                          task2_labels(mixed.anomaly, mask), cfg.chunk_len)
    _train_seq_model(model, xs, ys, cfg, rng, rare=(ys == 2).any(axis=1))
    return model


def task2_score(model: SequenceClassifier, series, segments: list[Segment],
                std: Standardizer, chunk_len: int = 64) -> np.ndarray:
    """O_t2: anomaly probability inside segments, exactly 0 outside."""
    x = series.features() if isinstance(series, TimeSeriesDataset) else np.asarray(series, dtype=float)
    mask = segments_to_mask(segments, len(x))
    probs = model.infer_series(std.apply(x), chunk_len)
    return np.where(mask == 1.0, probs[:, 1], 0.0)


# --- segclass coupling ----------------------------------------------------------

def segclass_step_classes(seg_model: ClassifierModel, x: np.ndarray,
                          segments: list[Segment], seg_cfg: SegclassConfig) -> np.ndarray:
    """Per-step class votes from the segment classifier, 0 where unassigned.

    Each window inside a proposed segment casts its predicted class onto the
    steps it covers; later windows overwrite overlaps, which is fine for the
    prior-counting purpose this serves.
    """
    votes = np.zeros(len(x), dtype=np.int64)
    w, s = seg_cfg.window, seg_cfg.stride
    for seg in segments:
        if seg.end - seg.start < w:
            continue
        feats = windowize_features(x[seg.start:seg.end], w, s)
        preds, _ = predict_batch(seg_model, feats)
        for j, start in enumerate(range(seg.start, seg.end - w + 1, s)):
            votes[start:start + w] = preds[j]
    return votes


def warm_start_bias(seg_model: ClassifierModel, x: np.ndarray,
                    segments: list[Segment], seg_cfg: SegclassConfig) -> np.ndarray:
    """Head-bias prior distilled from segment-classifier predictions.

    Steps voted as fault class c count toward class c; all unassigned steps
    count toward class 12. Laplace smoothing keeps every bias finite.
    """
    votes = segclass_step_classes(seg_model, x, segments, seg_cfg)
    counts = np.zeros(N_CLASSES)
    for c in range(1, N_CLASSES):
        counts[c - 1] = np.sum(votes == c)
    counts[N_CLASSES - 1] = np.sum(votes == 0)
    smooth = seg_cfg.prior_smoothing_frac * len(x)
    priors = (counts + smooth) / (counts.sum() + N_CLASSES * smooth)
    return np.log(priors)


# --- Task 3 ---------------------------------------------------------------------

def build_task3_inputs(x_std: np.ndarray, o_t1: np.ndarray, o_t2: np.ndarray) -> np.ndarray:
    """Per-step concatenation X | O_t1 | O_t2 -> (T, 5)."""
    if not (len(x_std) == len(o_t1) == len(o_t2)):
        raise ShapeMismatchError("task 3 input lengths differ")
    return np.column_stack([x_std, o_t1, o_t2])


def train_task3(mixed: TimeSeriesDataset, o_t1: np.ndarray, o_t2: np.ndarray,
                cfg: TaskNetConfig, std: Standardizer, seed: int = 0,
                init_bias: np.ndarray | None = None) -> SequenceClassifier:
    """Fit the 12-way per-step classifier with the sequence cross entropy loss."""
    inputs = build_task3_inputs(std.apply(mixed.features()), o_t1, o_t2)
    labels = mixed.fault_class.astype(np.int64)
    rng = np.random.default_rng(seed)
    model = SequenceClassifier.init(rng, inputs.shape[1], cfg.hidden, N_CLASSES)
    if init_bias is not None:
        if init_bias.shape != (N_CLASSES,):
            raise ShapeMismatchError(f"init bias shape {init_bias.shape}")
        model.head.b[:] = init_bias
    xs, ys = chunk_series(inputs, labels, cfg.chunk_len)
    rare = ((ys >= 1) & (ys < N_CLASSES)).any(axis=1)
    _train_seq_model(model, xs, ys, cfg, rng, rare=rare)
    return model


def predict_classes(probs: np.ndarray) -> np.ndarray:
    """Argmax with ties broken toward class 12 (no fault)."""
    best = probs.max(axis=-1)
    classes = np.argmax(probs, axis=-1) + 1
    classes[probs[:, N_CLASSES - 1] >= best] = N_CLASSES
    return classes


# --- whole-pipeline bundle ---------------------------------------------------

@dataclass
class SmtcnnModels:
    variant: str
    autoencoder: LstmAutoencoder | None
    threshold: ThresholdSpec | None
    seg_model: ClassifierModel | None
    task2: SequenceClassifier
    task3: SequenceClassifier
    std: Standardizer
    cpd_cfg: CpdConfig
    seg_cfg: SegclassConfig
    chunk_len: int = 64

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvariantViolation(f"unknown variant {self.variant!r}")


def propose_for_variant(models: SmtcnnModels, series) -> tuple[list[Segment], np.ndarray]:
    x = series.features() if isinstance(series, TimeSeriesDataset) else np.asarray(series, dtype=float)
    if models.variant == "b2_no_cpd":
        return [Segment(0, len(x))], np.ones(len(x))
    if models.autoencoder is None or models.threshold is None:
        raise InvariantViolation("variant requires a trained change-point stage")
    return task1_propose(x, models.autoencoder, models.threshold, models.cpd_cfg)


def smtcnn_infer(series, models: SmtcnnModels) -> CascadePrediction:
    """Tasks 1 -> 2 -> 3 in pipeline order."""
    x = series.features() if isinstance(series, TimeSeriesDataset) else np.asarray(series, dtype=float)
    segments, mask = propose_for_variant(models, x)
    o_t2 = task2_score(models.task2, x, segments, models.std, models.chunk_len)
    inputs = build_task3_inputs(models.std.apply(x), mask, o_t2)
    probs = models.task3.infer_series(inputs, models.chunk_len)
    classes = predict_classes(probs)
    return CascadePrediction(classes=classes, anomaly=classes != NO_FAULT, probs=probs)


def smtcnn_train_full(mixed: TimeSeriesDataset, normal: TimeSeriesDataset,
                      anomaly: TimeSeriesDataset, cfg, variant: str = "full") -> SmtcnnModels:
    """Train every stage in pipeline order on whole datasets.

    cfg is a RunConfig. The change-point stage trains on normal data only and
    the segment classifier on anomalous data only; the task networks train on
    the labeled mixed stream.
    """
    from .changepoint import compute_threshold, train_autoencoder
    from .segclass import train_classifier, windowize

    if variant not in VARIANTS:
        raise InvariantViolation(f"unknown variant {variant!r}")
    for ds, want in ((mixed, "mixed"), (normal, "normal_only"), (anomaly, "anomaly_only")):
        if ds.regime != want:
            raise InvariantViolation(f"expected a {want} dataset, got {ds.regime}")

    x = mixed.features()
    std = Standardizer.fit(x)
    auto = threshold = None
    if variant == "b2_no_cpd":
        segments, mask = [Segment(0, len(x))], np.ones(len(x))
    else:
        auto = train_autoencoder(normal, cfg.cpd, seed=cfg.stage_seed("cpd"))
        threshold = compute_threshold(reconstruction_errors(auto, normal), cfg.cpd.k)
        segments, mask = task1_propose(x, auto, threshold, cfg.cpd)

    seg_model = None
    if variant != "b3_no_segclass":
        rows = windowize(anomaly, cfg.seg.window, cfg.seg.stride)
        seg_model = train_classifier(cfg.seg.kind, rows, cfg.seg,
                                     seed=cfg.stage_seed("segclass"))

    task2 = train_task2(mixed, mask, cfg.task2, std, seed=cfg.stage_seed("task2"))
    o_t2 = task2_score(task2, x, segments, std, cfg.task2.chunk_len)
    bias = None
    if seg_model is not None:
        bias = warm_start_bias(seg_model, x, segments, cfg.seg)
    task3 = train_task3(mixed, mask, o_t2, cfg.task3, std,
                        seed=cfg.stage_seed("task3"), init_bias=bias)
    return SmtcnnModels(variant=variant, autoencoder=auto, threshold=threshold,
                        seg_model=seg_model, task2=task2, task3=task3, std=std,
                        cpd_cfg=cfg.cpd, seg_cfg=cfg.seg, chunk_len=cfg.task3.chunk_len)


# --- persistence ---------------------------------------------------------------

def cpd_to_checkpoint(auto: LstmAutoencoder, threshold: ThresholdSpec,
                      cpd_cfg: CpdConfig) -> Checkpoint:
    """Autoencoder weights plus the frozen threshold and segment params."""
    ckpt = auto.to_checkpoint()
    ckpt.meta["threshold"] = {"mu": threshold.mu, "sigma": threshold.sigma,
                              "k": threshold.k, "tau": threshold.tau}
    ckpt.meta["min_gap"] = cpd_cfg.min_gap
    ckpt.meta["min_len"] = cpd_cfg.min_len
    return ckpt


def save_models(models: SmtcnnModels, out_dir) -> None:
    from pathlib import Path

    from .nncore import save_checkpoint
    from .segclass import to_checkpoint as seg_to_checkpoint

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if models.autoencoder is not None:
        save_checkpoint(cpd_to_checkpoint(models.autoencoder, models.threshold,
                                          models.cpd_cfg), out / "cpd.json")
    if models.seg_model is not None:
        save_checkpoint(seg_to_checkpoint(models.seg_model), out / "segclass.json")
    save_checkpoint(models.task2.to_checkpoint("task2", {"variant": models.variant}),
                    out / "task2.json")
    save_checkpoint(models.task3.to_checkpoint("task3", {"variant": models.variant}),
                    out / "task3.json")
    manifest = Checkpoint(
        kind="smtcnn_manifest",
        meta={"variant": models.variant, "chunk_len": models.chunk_len,
              "seg_window": models.seg_cfg.window, "seg_stride": models.seg_cfg.stride},
        arrays={"std_mu": models.std.mu, "std_sd": models.std.sd},
    )
    save_checkpoint(manifest, out / "manifest.json")


def load_models(model_dir) -> SmtcnnModels:
    from pathlib import Path

    from .errors import ConfigError
    from .nncore import load_checkpoint
    from .segclass import from_checkpoint as seg_from_checkpoint

    d = Path(model_dir)
    if not (d / "manifest.json").exists():
        raise ConfigError(f"missing model file: {d / 'manifest.json'}")
    manifest = load_checkpoint(d / "manifest.json", expect_kind="smtcnn_manifest")
    variant = manifest.meta["variant"]
    cpd_cfg = CpdConfig()
    seg_cfg = SegclassConfig(window=int(manifest.meta["seg_window"]),
                             stride=int(manifest.meta["seg_stride"]))

    auto = threshold = None
    if variant != "b2_no_cpd":
        path = d / "cpd.json"
        if not path.exists():
            raise ConfigError(f"missing model file: {path}")
        ckpt = load_checkpoint(path, expect_kind="lstm_autoencoder")
        auto = LstmAutoencoder.from_checkpoint(ckpt)
        t = ckpt.meta["threshold"]
        threshold = ThresholdSpec(mu=t["mu"], sigma=t["sigma"], k=t["k"], tau=t["tau"])
        cpd_cfg = CpdConfig(window=auto.window, min_gap=int(ckpt.meta["min_gap"]),
                            min_len=int(ckpt.meta["min_len"]))

    seg_model = None
    if variant != "b3_no_segclass" and (d / "segclass.json").exists():
        seg_model = seg_from_checkpoint(load_checkpoint(d / "segclass.json"))

    def _load_task(name: str) -> SequenceClassifier:
        path = d / f"{name}.json"
        if not path.exists():
            raise ConfigError(f"missing model file: {path}")
        return SequenceClassifier.from_checkpoint(load_checkpoint(path, expect_kind=name))

    return SmtcnnModels(
        variant=variant, autoencoder=auto, threshold=threshold, seg_model=seg_model,
        task2=_load_task("task2"), task3=_load_task("task3"),
        std=Standardizer(manifest.arrays["std_mu"], manifest.arrays["std_sd"]),
        cpd_cfg=cpd_cfg, seg_cfg=seg_cfg, chunk_len=int(manifest.meta["chunk_len"]),
    )
