"""End-to-end acceptance gates.

One test per criterion; each is tagged so the terminal summary prints a
pass/fail line per criterion (see conftest). Runtime limits are asserted
where the criterion pins one.
"""

import math
import os
import time

import numpy as np
import pytest

from glitchvit import evaluator, qscan
from glitchvit.dataset import (
    DatasetManifest,
    ManifestEntry,
    split_dataset,
)
from glitchvit.tensor_core import layer_norm, softmax_rows
from glitchvit.trainer import (
    TrainConfig,
    cross_entropy,
    head_backward,
    train,
)
from glitchvit.vit_model import (
    HeadParams,
    ModelConfig,
    apply_head,
    embed,
    extract_features,
    forward,
    multi_head_attention,
    patchify,
    random_head_params,
    random_weight_set,
    required_tensor_shapes,
    zero_head_params,
)
from glitchvit.weights_io import load_weights, param_count


@pytest.fixture(scope="module")
def b32():
    cfg = ModelConfig()
    return cfg, random_weight_set(cfg, seed=1)


@pytest.mark.acceptance("shape suite: 49 patches x 3072, tokens 50x768, 24 logits")
def test_shape_suite(b32):
    cfg, weights = b32
    rng = np.random.default_rng(0)
    planes = rng.standard_normal((3, 224, 224)).astype(np.float32)
    start = time.monotonic()
    patches = patchify(planes, cfg.patch_size)
    tokens = embed(patches, weights)
    logits = forward(planes, weights, cfg)
    elapsed = time.monotonic() - start
    assert patches.shape == (49, 3072)
    assert tokens.shape == (50, 768)
    assert logits.shape == (24,)
    assert elapsed < 1.0


@pytest.mark.acceptance("gradient check: analytic head gradients vs central differences")
def test_gradient_check():
    cfg = ModelConfig(image_size=32, patch_size=32, hidden_dim=20, layers=1,
                      heads=2, mlp_dim=32, head_hidden=16, num_classes=6)
    start = time.monotonic()
    rng = np.random.default_rng(11)
    step = 1e-4
    for trial in range(10):
        head = random_head_params(cfg, seed=500 + trial)
        head64 = HeadParams(*(getattr(head, k).astype(np.float64)
                              for k in ("w1", "b1", "w2", "b2")))
        features = rng.uniform(0.5, 2.0, cfg.hidden_dim) * rng.choice(
            [-1.0, 1.0], cfg.hidden_dim
        )
        label = int(rng.integers(0, cfg.num_classes))
        _, analytic = head_backward(features, label, head64)
        for key in ("w1", "b1", "w2", "b2"):
            param = getattr(head64, key)
            numeric = np.zeros_like(param)
            it = np.nditer(param, flags=["multi_index"])
            while not it.finished:
                idx = it.multi_index
                orig = param[idx]
                param[idx] = orig + step
                lo_p, _ = head_backward(features, label, head64)
                param[idx] = orig - step
                lo_m, _ = head_backward(features, label, head64)
                param[idx] = orig
                numeric[idx] = (lo_p - lo_m) / (2 * step)
                it.iternext()
            denom = np.maximum(np.maximum(np.abs(analytic[key]), np.abs(numeric)), 1e-12)
            rel = np.abs(analytic[key] - numeric) / denom
            assert rel.max() < 1e-4, (trial, key, rel.max())
    assert time.monotonic() - start < 30.0


@pytest.mark.acceptance("loss calibration: zero head gives cross-entropy ln 24")
def test_loss_calibration():
    cfg = ModelConfig()
    start = time.monotonic()
    head = zero_head_params(cfg)
    rng = np.random.default_rng(3)
    for _ in range(5):
        features = rng.standard_normal(cfg.hidden_dim).astype(np.float32)
        logits = apply_head(features, head)
        loss = cross_entropy(logits, int(rng.integers(0, 24)))
        assert abs(loss - math.log(24)) < 1e-6
    assert abs(math.log(24) - 3.1781) < 1e-4
    assert time.monotonic() - start < 1.0


@pytest.mark.acceptance("normalization: softmax and attention rows sum to 1, "
                        "layer norm statistics")
def test_normalization_suite(toy_cfg):
    rng = np.random.default_rng(4)
    weights = random_weight_set(toy_cfg, seed=77, include_head=False)
    for _ in range(100):
        rows = int(rng.integers(1, 30))
        cols = int(rng.integers(2, 40))
        x = rng.standard_normal((rows, cols)) * rng.uniform(0.1, 20)
        sm = softmax_rows(x)
        assert np.max(np.abs(sm.sum(axis=1) - 1.0)) < 1e-6
        assert np.all(sm >= 0)

        ln = layer_norm(x, np.ones(cols), np.zeros(cols), 1e-10)
        assert np.max(np.abs(ln.mean(axis=1))) < 1e-9
        nonconstant = x.var(axis=1) > 1e-3
        assert np.all(np.abs(ln.var(axis=1)[nonconstant] - 1.0) < 1e-6)

        tokens = rng.standard_normal(
            (toy_cfg.seq_len, toy_cfg.hidden_dim)
        ).astype(np.float32)
        _, attn = multi_head_attention(tokens, weights, "encoder/layer_00",
                                       toy_cfg.heads)
        assert np.max(np.abs(attn.sum(axis=2) - 1.0)) < 1e-6


@pytest.mark.acceptance("q-transform physics: peak location, quadratic scaling, "
                        "time-shift covariance")
def test_q_transform_physics():
    start = time.monotonic()
    fs = 2048.0
    rng = np.random.default_rng(5)
    t = np.arange(int(8 * fs)) / fs

    # whitened 100 Hz sinusoid (transient, so whitening cannot absorb it)
    active = (t > 3.0) & (t < 5.0)
    x = rng.standard_normal(t.size) + 10.0 * np.sin(2 * np.pi * 100.0 * t) * active
    white = qscan.whiten(qscan.StrainSeries(samples=x, sample_rate=fs))
    spec = qscan.q_transform(white, q=12, f_min=10, f_max=1024,
                             time_bins=128, freq_bins=224)
    peak_bin = int(np.argmax(spec.energy.max(axis=0)))
    assert peak_bin == int(np.argmin(np.abs(spec.freqs - 100.0)))

    # energy is 2-homogeneous in the input
    noise = qscan.StrainSeries(samples=rng.standard_normal(int(4 * fs)),
                               sample_rate=fs)
    scaled = qscan.StrainSeries(samples=3.0 * noise.samples, sample_rate=fs)
    a = qscan.q_transform(noise, q=12, f_min=10, f_max=512,
                          time_bins=32, freq_bins=48)
    b = qscan.q_transform(scaled, q=12, f_min=10, f_max=512,
                          time_bins=32, freq_bins=48)
    rel = np.abs(b.energy - 9.0 * a.energy) / np.abs(9.0 * a.energy)
    assert rel.max() < 1e-6

    # shifting the input moves the energy peak by the same amount
    burst = np.exp(-0.5 * ((t - 4.0) / 0.03) ** 2) * np.sin(2 * np.pi * 200 * t)
    sig = rng.standard_normal(t.size) * 0.01 + burst
    k = 1024  # half a second
    qa = qscan.q_transform(qscan.StrainSeries(samples=sig, sample_rate=fs),
                           q=12, f_min=10, f_max=512, time_bins=64, freq_bins=64)
    qb = qscan.q_transform(qscan.StrainSeries(samples=np.roll(sig, k), sample_rate=fs),
                           q=12, f_min=10, f_max=512, time_bins=64, freq_bins=64)
    ta = qa.times[np.unravel_index(np.argmax(qa.energy), qa.energy.shape)[0]]
    tb = qb.times[np.unravel_index(np.argmax(qb.energy), qb.energy.shape)[0]]
    assert abs((tb - ta) - k / fs) <= qa.times[1] - qa.times[0]
    assert time.monotonic() - start < 10.0


@pytest.mark.acceptance("split determinism: 3334 -> 2334/500/500, rerun identical")
def test_split_determinism():
    manifest = DatasetManifest(
        entries=tuple(
            ManifestEntry(f"img/{i:05d}.png", "Blip_Low_Frequency") for i in range(3334)
        )
    )
    a = split_dataset(manifest, seed=42)
    counts = a.split_counts("Blip_Low_Frequency")
    assert (counts["train"], counts["val"], counts["test"]) == (2334, 500, 500)
    b = split_dataset(manifest, seed=42)
    assert [e.split for e in a.entries] == [e.split for e in b.entries]


@pytest.mark.acceptance("toy end-to-end: 4 classes through qscan, frozen random "
                        "encoder, 15-epoch head training")
def test_toy_end_to_end(full_toy_manifest, toy_cfg, toy_encoder):
    start = time.monotonic()
    tc = TrainConfig(learning_rate=0.001, batch_size=32, epochs=15, seed=7)
    report, head = train(toy_encoder, full_toy_manifest, toy_cfg, tc, threads=1)
    final = report.epochs[-1]
    assert final.train_acc >= 0.95, final
    assert final.val_acc >= 0.90, final

    report2, head2 = train(toy_encoder, full_toy_manifest, toy_cfg, tc, threads=1)
    assert report == report2
    for key in ("w1", "b1", "w2", "b2"):
        assert np.array_equal(getattr(head, key), getattr(head2, key))
    assert time.monotonic() - start < 600.0


@pytest.mark.acceptance("freeze and cache: encoder bitwise unchanged, cache "
                        "on/off heads identical")
def test_freeze_and_cache(small_manifest, toy_cfg, toy_encoder):
    before = {k: v.copy() for k, v in toy_encoder.items()}
    tc_on = TrainConfig(epochs=3, seed=19, feature_cache=True)
    tc_off = TrainConfig(epochs=3, seed=19, feature_cache=False)
    _, head_on = train(toy_encoder, small_manifest, toy_cfg, tc_on, threads=1)
    _, head_off = train(toy_encoder, small_manifest, toy_cfg, tc_off, threads=1)
    for name, tensor in toy_encoder.items():
        assert np.array_equal(tensor, before[name]), name
    for key in ("w1", "b1", "w2", "b2"):
        assert np.array_equal(getattr(head_on, key), getattr(head_off, key))


@pytest.mark.acceptance("metrics algebra: accuracy identity, hand F1 values, "
                        "confusion CSV round-trip")
def test_metrics_algebra(tmp_path):
    rng = np.random.default_rng(8)
    preds = rng.integers(0, 5, 400)
    labels = rng.integers(0, 5, 400)
    cm = evaluator.confusion(preds, labels, 5, [f"c{i}" for i in range(5)])

    pca = evaluator.per_class_accuracy(cm)
    support = cm.counts.sum(axis=1)
    mask = support > 0
    weighted_mean = float(np.sum(pca[mask] * support[mask]) / support.sum())
    assert abs(evaluator.accuracy(cm) - weighted_mean) < 1e-12

    hand = evaluator.f1(
        evaluator.ConfusionMatrix(counts=np.array([[8, 2], [1, 9]]), labels=("a", "b"))
    )
    assert abs(hand.per_class[0] - 16.0 / 19.0) < 1e-9
    p1, r1 = 9 / 11, 9 / 10
    assert abs(hand.per_class[1] - 2 * p1 * r1 / (p1 + r1)) < 1e-9
    perfect = evaluator.f1(
        evaluator.ConfusionMatrix(counts=np.diag([4, 6]), labels=("a", "b"))
    )
    assert perfect.macro == 1.0 and perfect.weighted == 1.0

    evaluator.emit_report(cm, evaluator.standard_metrics(cm), str(tmp_path))
    back = evaluator.read_confusion_csv(str(tmp_path / "confusion.csv"))
    assert back.labels == cm.labels
    assert np.array_equal(back.counts, cm.counts)


@pytest.mark.acceptance("oracle equivalence: forward pass reproduces exported "
                        "reference activations")
def test_oracle_equivalence_against_export():
    export_dir = os.environ.get("GLITCHVIT_EXPORT_DIR")
    if not export_dir:
        pytest.skip("set GLITCHVIT_EXPORT_DIR to a reference export to enable")
    cfg = ModelConfig()
    weights = load_weights(os.path.join(export_dir, "vit_b32.vitw"),
                           required_tensor_shapes(cfg))
    goldens = load_weights(os.path.join(export_dir, "goldens.vitw"))

    manifest_kv = {}
    with open(os.path.join(export_dir, "manifest.txt"), encoding="utf-8") as f:
        for line in f:
            if "=" in line:
                key, value = line.strip().split("=", 1)
                manifest_kv[key] = value
    model_tensors = {k: v for k, v in weights.items()}
    assert param_count(model_tensors) == int(manifest_kv["param_count"])

    planes = goldens["golden/input"]
    feats = extract_features(planes, weights, cfg)
    assert np.max(np.abs(feats - goldens["golden/features"])) < 1e-3

    from glitchvit.vit_model import encoder_layer

    tokens = embed(patchify(planes, cfg.patch_size), weights)
    assert np.max(np.abs(tokens - goldens["golden/embedding"])) < 1e-3
    for i in range(cfg.layers):
        tokens = encoder_layer(tokens, weights, i, cfg.heads)
        golden = goldens[f"golden/layer_{i:02d}"]
        assert np.max(np.abs(tokens - golden)) < 1e-3, f"layer {i}"

    logits = forward(planes, weights, cfg)
    assert np.max(np.abs(logits - goldens["golden/logits"])) < 1e-3
