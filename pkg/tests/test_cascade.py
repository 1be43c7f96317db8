"""Cascade plumbing: chunking, task wiring, the warm-start prior, persistence."""

import numpy as np
import pytest

from faultlab.cascade import (
    N_CLASSES,
    CascadeInputs,
    SequenceClassifier,
    SmtcnnModels,
    Standardizer,
    build_task3_inputs,
    chunk_series,
    load_models,
    predict_classes,
    propose_for_variant,
    save_models,
    smtcnn_infer,
    task2_labels,
    task2_score,
    train_task2,
    warm_start_bias,
)
from faultlab.changepoint import Segment
from faultlab.config import CpdConfig, SegclassConfig, TaskNetConfig
from faultlab.errors import (
    ConfigError,
    DegenerateDataError,
    InvariantViolation,
    ShapeMismatchError,
)
from faultlab.segclass import ClassifierModel, _LinearImpl


def tiny_models(variant="b2_no_cpd", seed=0, with_seg=False):
    from faultlab.changepoint import LstmAutoencoder, ThresholdSpec

    rng = np.random.default_rng(seed)
    cpd_cfg = CpdConfig(window=4, enc_hidden=3, dec_hidden=4, min_gap=2, min_len=1)
    auto = threshold = None
    if variant != "b2_no_cpd":
        auto = LstmAutoencoder.init(rng, cpd_cfg, np.zeros(3), np.ones(3))
        threshold = ThresholdSpec(mu=0.5, sigma=0.1, k=3.0, tau=0.8)
    seg_model = None
    if with_seg:
        seg_model = ClassifierModel(
            kind="sgd_linear", classes=np.array([4, 7]),
            impl=_LinearImpl(w=np.zeros((2, 15)), b=np.zeros(2),
                             mu=np.zeros(15), sd=np.ones(15)))
    return SmtcnnModels(
        variant=variant,
        autoencoder=auto,
        threshold=threshold,
        seg_model=seg_model,
        task2=SequenceClassifier.init(rng, 3, 6, 2),
        task3=SequenceClassifier.init(rng, 5, 6, N_CLASSES),
        std=Standardizer(np.zeros(3), np.ones(3)),
        cpd_cfg=cpd_cfg,
        seg_cfg=SegclassConfig(),
        chunk_len=8,
    )


# --- chunking -----------------------------------------------------------------


def test_chunk_series_pads_tail_with_ignore_label():
    x = np.arange(20, dtype=float).reshape(10, 2)
    labels = np.arange(1, 11)
    xs, ys = chunk_series(x, labels, chunk_len=4)
    assert xs.shape == (3, 4, 2)
    assert np.array_equal(xs[0], x[:4])
    assert ys[2].tolist() == [9, 10, 0, 0]
    assert np.array_equal(xs[2, 2:], np.zeros((2, 2)))


def test_cascade_inputs_validation():
    x = np.zeros((5, 3))
    good = CascadeInputs(x, np.array([0.0, 1, 1, 0, 0]), np.full(5, 0.5))
    assert len(good.x) == 5
    with pytest.raises(ShapeMismatchError):
        CascadeInputs(x, np.zeros(4), np.zeros(5))
    with pytest.raises(InvariantViolation):
        CascadeInputs(x, np.full(5, 0.5), np.zeros(5))
    with pytest.raises(InvariantViolation):
        CascadeInputs(x, np.zeros(5), np.full(5, 1.5))


# --- task 2 -------------------------------------------------------------------


def test_task2_labels_partition():
    labels = task2_labels(anomaly=np.array([False, True, False, True]),
                          mask=np.array([1.0, 1.0, 0.0, 0.0]))
    assert labels.tolist() == [1, 2, 0, 0]


def test_task2_score_exactly_zero_outside_segments():
    models = tiny_models()
    x = np.random.default_rng(1).normal(size=(12, 3))
    scores = task2_score(models.task2, x, [Segment(3, 7)], models.std, chunk_len=8)
    assert scores.shape == (12,)
    assert np.all(scores[:3] == 0.0) and np.all(scores[7:] == 0.0)
    assert np.all((scores[3:7] > 0.0) & (scores[3:7] < 1.0))


def test_train_task2_rejects_bad_inputs(normal_small, mixed_small):
    cfg = TaskNetConfig(max_epochs=1)
    with pytest.raises(InvariantViolation):
        train_task2(normal_small, np.ones(len(normal_small.energy)), cfg,
                    Standardizer(np.zeros(3), np.ones(3)))
    with pytest.raises(DegenerateDataError):
        train_task2(mixed_small, np.zeros(len(mixed_small.energy)), cfg,
                    Standardizer(np.zeros(3), np.ones(3)))


# --- warm start prior -----------------------------------------------------------


def test_warm_start_bias_no_segments_prefers_no_fault():
    x = np.zeros((100, 3))
    cfg = SegclassConfig()
    bias = warm_start_bias(None, x, [], cfg)
    assert bias.shape == (N_CLASSES,)
    smooth = cfg.prior_smoothing_frac * 100
    denom = 100 + N_CLASSES * smooth
    assert bias[-1] == pytest.approx(np.log((100 + smooth) / denom), abs=1e-12)
    assert np.allclose(bias[:-1], np.log(smooth / denom), atol=1e-12)
    assert np.exp(bias).sum() == pytest.approx(1.0, abs=1e-12)


def test_warm_start_bias_counts_votes():
    # stub classifier always answers class 4 (tie broken to lowest of {4, 7})
    stub = ClassifierModel(
        kind="sgd_linear", classes=np.array([4, 7]),
        impl=_LinearImpl(w=np.zeros((2, 15)), b=np.zeros(2),
                         mu=np.zeros(15), sd=np.ones(15)))
    cfg = SegclassConfig(window=16, stride=8)
    x = np.random.default_rng(0).normal(size=(200, 3))
    bias = warm_start_bias(stub, x, [Segment(0, 40)], cfg)
    smooth = cfg.prior_smoothing_frac * 200
    denom = 200 + N_CLASSES * smooth
    assert bias[3] == pytest.approx(np.log((40 + smooth) / denom), abs=1e-12)
    assert bias[-1] == pytest.approx(np.log((160 + smooth) / denom), abs=1e-12)
    # non-voted fault classes sit at the smoothing floor
    assert bias[0] == pytest.approx(np.log(smooth / denom), abs=1e-12)


def test_warm_start_bias_skips_short_segments():
    cfg = SegclassConfig(window=16, stride=8)
    x = np.zeros((50, 3))
    # segment shorter than one window casts no votes
    bias = warm_start_bias(None, x, [Segment(10, 20)], cfg)
    assert np.argmax(bias) == N_CLASSES - 1


# --- task 3 -------------------------------------------------------------------


def test_build_task3_inputs_column_order():
    x = np.ones((4, 3)) * 7.0
    o1 = np.array([0.0, 1.0, 1.0, 0.0])
    o2 = np.array([0.0, 0.25, 0.5, 0.0])
    inp = build_task3_inputs(x, o1, o2)
    assert inp.shape == (4, 5)
    assert np.array_equal(inp[:, :3], x)
    assert np.array_equal(inp[:, 3], o1)
    assert np.array_equal(inp[:, 4], o2)
    with pytest.raises(ShapeMismatchError):
        build_task3_inputs(x, o1[:3], o2)


def test_predict_classes_tie_goes_to_no_fault():
    uniform = np.full((1, N_CLASSES), 1.0 / N_CLASSES)
    assert predict_classes(uniform).tolist() == [12]

    peaked = np.zeros((1, N_CLASSES))
    peaked[0, 2] = 1.0
    assert predict_classes(peaked).tolist() == [3]

    tie = np.zeros((1, N_CLASSES))
    tie[0, 2] = 0.5
    tie[0, 11] = 0.5
    assert predict_classes(tie).tolist() == [12]


# --- sequence classifier -------------------------------------------------------


def test_sequence_classifier_checkpoint_round_trip():
    model = SequenceClassifier.init(np.random.default_rng(5), 5, 8, N_CLASSES)
    clone = SequenceClassifier.from_checkpoint(model.to_checkpoint("task3"))
    x = np.random.default_rng(6).normal(size=(2, 7, 5))
    assert np.array_equal(model.forward_probs(x), clone.forward_probs(x))


def test_infer_series_handles_ragged_tail():
    model = SequenceClassifier.init(np.random.default_rng(2), 3, 4, 2)
    x = np.random.default_rng(3).normal(size=(10, 3))
    probs = model.infer_series(x, chunk_len=4)
    assert probs.shape == (10, 2)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-12)
    # shorter-than-chunk series pass through the same padding path
    short = model.infer_series(x[:2], chunk_len=4)
    assert short.shape == (2, 2)
    assert np.allclose(short, probs[:2], atol=1e-12)


# --- bundle + persistence --------------------------------------------------------


def test_models_variant_validated():
    with pytest.raises(InvariantViolation):
        tiny_models(variant="b9_mystery")


def test_propose_for_variant():
    models = tiny_models(variant="b2_no_cpd")
    x = np.zeros((30, 3))
    segments, mask = propose_for_variant(models, x)
    assert segments == [Segment(0, 30)]
    assert mask.tolist() == [1.0] * 30

    broken = tiny_models(variant="full")
    broken.autoencoder = None
    with pytest.raises(InvariantViolation):
        propose_for_variant(broken, x)


def test_smtcnn_infer_consistency():
    models = tiny_models(variant="b2_no_cpd")
    x = np.random.default_rng(4).normal(size=(20, 3))
    pred = smtcnn_infer(x, models)
    assert pred.probs.shape == (20, N_CLASSES)
    assert set(np.unique(pred.classes)) <= set(range(1, 13))
    assert np.array_equal(pred.anomaly, pred.classes != 12)


@pytest.mark.parametrize("variant,with_seg", [("b2_no_cpd", True), ("b3_no_segclass", False)])
def test_save_load_round_trip(tmp_path, variant, with_seg):
    models = tiny_models(variant=variant, with_seg=with_seg)
    out = tmp_path / variant
    save_models(models, out)
    assert (out / "cpd.json").exists() == (variant != "b2_no_cpd")
    assert (out / "segclass.json").exists() == with_seg
    loaded = load_models(out)
    assert loaded.variant == variant
    assert loaded.chunk_len == models.chunk_len
    x = np.random.default_rng(7).normal(size=(16, 3))
    a = smtcnn_infer(x, models)
    b = smtcnn_infer(x, loaded)
    assert np.array_equal(a.probs, b.probs)


def test_load_models_missing_files(tmp_path):
    with pytest.raises(ConfigError):
        load_models(tmp_path / "nowhere")
    models = tiny_models()
    out = tmp_path / "partial"
    save_models(models, out)
    (out / "task3.json").unlink()
    with pytest.raises(ConfigError):
        load_models(out)
