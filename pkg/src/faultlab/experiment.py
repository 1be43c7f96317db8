"""Sequential cross-validation of the cascade and its two ablations.

The change-point detector and the segment classifier are trained once, on the
dedicated normal-only / anomaly-only datasets; they do not depend on the mixed
stream, so retraining them per fold would only burn time without changing the
comparison. The task networks are retrained per fold on the fold's training
block. Window reconstruction errors over the whole mixed stream are cached so
each fold's change-point pass is a slice, not a fresh inference run.

Variants share fold plumbing: full and b3_no_segclass use identical proposals
and Task 2 models (they differ only in the Task 3 warm start), and all task
networks of one fold start from the same seeded initial weights.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .cascade import (
    VARIANTS,
    Standardizer,
    build_task3_inputs,
    predict_classes,
    task2_score,
    train_task2,
    train_task3,
    warm_start_bias,
)
from .changepoint import (
    LstmAutoencoder,
    Segment,
    ThresholdSpec,
    compute_threshold,
    detect_changepoints,
    flags_to_segments,
    reconstruction_errors,
    segments_to_mask,
    train_autoencoder,
)
from .config import RunConfig
from .errors import FaultlabError, InvariantViolation
from .evaluation import EvalReport, SeqCvPlan, confusion, metrics, seq_cv_plan
from .segclass import ClassifierModel, train_classifier, windowize
from .simgen import NO_FAULT, TimeSeriesDataset, generate_dataset

log = logging.getLogger(__name__)

ALL_CLASSES = tuple(range(1, NO_FAULT + 1))


@dataclass
class ExperimentAssets:
    """Fold-independent pieces of one experiment run."""

    cfg: RunConfig
    normal: TimeSeriesDataset
    anomaly: TimeSeriesDataset
    mixed: TimeSeriesDataset
    autoencoder: LstmAutoencoder
    threshold: ThresholdSpec
    seg_model: ClassifierModel
    mixed_errors: np.ndarray  # window reconstruction errors over the mixed stream


def build_assets(cfg: RunConfig, datasets: dict[str, TimeSeriesDataset] | None = None,
                 ) -> ExperimentAssets:
    if datasets is None:
        datasets = {r: generate_dataset(r, cfg.sim)
                    for r in ("normal_only", "anomaly_only", "mixed")}
    normal, anomaly, mixed = (datasets["normal_only"], datasets["anomaly_only"],
                              datasets["mixed"])
    auto = train_autoencoder(normal, cfg.cpd, seed=cfg.stage_seed("cpd"))
    threshold = compute_threshold(reconstruction_errors(auto, normal), cfg.cpd.k)
    rows = windowize(anomaly, cfg.seg.window, cfg.seg.stride)
    seg_model = train_classifier(cfg.seg.kind, rows, cfg.seg,
                                 seed=cfg.stage_seed("segclass"))
    return ExperimentAssets(cfg, normal, anomaly, mixed, auto, threshold, seg_model,
                            reconstruction_errors(auto, mixed))


def block_proposals(assets: ExperimentAssets, start: int, length: int,
                    ) -> tuple[list[Segment], np.ndarray]:
    """Change-point segments for mixed[start:start+length] via cached errors.

    A window fully inside the block has the same reconstruction error as the
    corresponding global window, so the block's flags are a slice.
    """
    w = assets.cfg.cpd.window
    n_win = length - w + 1
    if n_win <= 0:
        raise InvariantViolation(f"block of {length} steps shorter than window {w}")
    flags = detect_changepoints(assets.mixed_errors[start:start + n_win],
                                assets.threshold)
    segments = flags_to_segments(flags, min_gap=assets.cfg.cpd.min_gap,
                                 min_len=assets.cfg.cpd.min_len, window=w)
    return segments, segments_to_mask(segments, length)


def _variant_products(assets: ExperimentAssets, fold, fold_idx: int, use_cpd: bool):
    """Everything task 3 consumes, shared between variants with the same mask."""
    cfg = assets.cfg
    train_ds = assets.mixed.slice(fold.train_start, fold.train_start + fold.train_len)
    x_tr = train_ds.features()
    x_te = assets.mixed.features()[fold.test_start:fold.test_start + fold.test_len]
    std = Standardizer.fit(x_tr)
    if use_cpd:
        segs_tr, mask_tr = block_proposals(assets, fold.train_start, fold.train_len)
        segs_te, mask_te = block_proposals(assets, fold.test_start, fold.test_len)
    else:
        segs_tr, mask_tr = [Segment(0, len(x_tr))], np.ones(len(x_tr))
        segs_te, mask_te = [Segment(0, len(x_te))], np.ones(len(x_te))
    task2 = train_task2(train_ds, mask_tr, cfg.task2, std,
                        seed=cfg.stage_seed(f"task2:fold{fold_idx}"))
    return {
        "train_ds": train_ds, "x_tr": x_tr, "x_te": x_te, "std": std,
        "segs_tr": segs_tr, "mask_tr": mask_tr, "segs_te": segs_te, "mask_te": mask_te,
        "task2": task2,
        "o2_tr": task2_score(task2, x_tr, segs_tr, std, cfg.task2.chunk_len),
        "o2_te": task2_score(task2, x_te, segs_te, std, cfg.task2.chunk_len),
    }


def _run_fold(assets: ExperimentAssets, fold, fold_idx: int, variant: str,
              cache: dict) -> dict[str, float]:
    cfg = assets.cfg
    use_cpd = variant != "b2_no_cpd"
    if use_cpd not in cache:
        cache[use_cpd] = _variant_products(assets, fold, fold_idx, use_cpd)
    p = cache[use_cpd]
    bias = None
    if variant != "b3_no_segclass":
        bias = warm_start_bias(assets.seg_model, p["x_tr"], p["segs_tr"], cfg.seg)
    task3 = train_task3(p["train_ds"], p["mask_tr"], p["o2_tr"], cfg.task3, p["std"],
                        seed=cfg.stage_seed(f"task3:fold{fold_idx}"), init_bias=bias)
    inputs = build_task3_inputs(p["std"].apply(p["x_te"]), p["mask_te"], p["o2_te"])
    preds = predict_classes(task3.infer_series(inputs, cfg.task3.chunk_len))
    truth = assets.mixed.fault_class[fold.test_start:fold.test_start + fold.test_len]
    return metrics(confusion(preds, truth, classes=ALL_CLASSES))


def train_whole(assets: ExperimentAssets, variant: str):
    """Final deployable models for one variant, reusing the shared stages."""
    from .cascade import SmtcnnModels

    cfg = assets.cfg
    x = assets.mixed.features()
    std = Standardizer.fit(x)
    if variant == "b2_no_cpd":
        segs, mask = [Segment(0, len(x))], np.ones(len(x))
    else:
        segs, mask = block_proposals(assets, 0, len(x))
    task2 = train_task2(assets.mixed, mask, cfg.task2, std,
                        seed=cfg.stage_seed("task2"))
    o2 = task2_score(task2, x, segs, std, cfg.task2.chunk_len)
    bias = None
    if variant != "b3_no_segclass":
        bias = warm_start_bias(assets.seg_model, x, segs, cfg.seg)
    task3 = train_task3(assets.mixed, mask, o2, cfg.task3, std,
                        seed=cfg.stage_seed("task3"), init_bias=bias)
    use_cpd = variant != "b2_no_cpd"
    return SmtcnnModels(
        variant=variant,
        autoencoder=assets.autoencoder if use_cpd else None,
        threshold=assets.threshold if use_cpd else None,
        seg_model=assets.seg_model if variant != "b3_no_segclass" else None,
        task2=task2, task3=task3, std=std, cpd_cfg=cfg.cpd, seg_cfg=cfg.seg,
        chunk_len=cfg.task3.chunk_len,
    )


def default_plan(assets: ExperimentAssets) -> SeqCvPlan:
    pc = assets.cfg.plan
    return seq_cv_plan(len(assets.mixed), folds=pc.folds,
                       seed=assets.cfg.stage_seed("seqcv"),
                       lo=pc.len_frac_lo, hi=pc.len_frac_hi)


def run_experiment(assets: ExperimentAssets, variant: str,
                   plan: SeqCvPlan | None = None) -> EvalReport:
    """Per-fold train/eval of one variant; skips failed folds with a warning."""
    return run_variants(assets, (variant,), plan)[0]


def run_all_variants(assets: ExperimentAssets, plan: SeqCvPlan | None = None,
                     ) -> list[EvalReport]:
    return run_variants(assets, VARIANTS, plan)


def run_variants(assets: ExperimentAssets, variants: tuple[str, ...],
                 plan: SeqCvPlan | None = None) -> list[EvalReport]:
    for v in variants:
        if v not in VARIANTS:
            raise InvariantViolation(f"unknown variant {v!r}")
    if plan is None:
        plan = default_plan(assets)
    reports = {v: EvalReport(label=v) for v in variants}
    for idx, fold in enumerate(plan.folds):
        cache: dict = {}
        for v in variants:
            try:
                reports[v].add_fold(_run_fold(assets, fold, idx, v, cache))
            except FaultlabError as exc:
                warnings.warn(f"fold {idx} failed for {v}: {exc}", stacklevel=2)
                reports[v].skipped_folds.append(idx)
    need = assets.cfg.plan.min_valid_folds
    for v in variants:
        n_ok = len(reports[v].fold_metrics)
        if n_ok < need:
            raise FaultlabError(
                f"variant {v}: only {n_ok} valid folds, {need} required")
        log.info("variant %s: %d valid folds", v, n_ok)
    return [reports[v] for v in variants]
