import os

import numpy as np
import pytest
import torch

from vit_export.container import param_count, read_container
from vit_export.export import (
    build_reference_model,
    make_head_tensors,
    preprocess_image,
    run_export,
    synthetic_test_card,
)
from vit_export.mapping import convert_state_dict


def read_manifest(path):
    out = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            if "=" in line:
                k, v = line.strip().split("=", 1)
                out[k] = v
    return out


def test_artifacts_written(export_dir):
    for name in ("vit_b32.vitw", "goldens.vitw", "manifest.txt"):
        assert os.path.exists(os.path.join(export_dir, name))


def test_export_loads_in_primary_with_no_missing_tensors(export_dir):
    vit_model = pytest.importorskip("glitchvit.vit_model")
    weights_io = pytest.importorskip("glitchvit.weights_io")
    cfg = vit_model.ModelConfig()
    weights = weights_io.load_weights(
        os.path.join(export_dir, "vit_b32.vitw"),
        vit_model.required_tensor_shapes(cfg),
    )
    vit_model.validate_weight_set(weights, cfg)


def test_manifest_param_count_matches_both_sides(export_dir):
    vit_model = pytest.importorskip("glitchvit.vit_model")
    manifest = read_manifest(os.path.join(export_dir, "manifest.txt"))
    tensors = read_container(os.path.join(export_dir, "vit_b32.vitw"))
    assert int(manifest["param_count"]) == param_count(tensors)
    assert int(manifest["param_count"]) == vit_model.weight_param_count(
        vit_model.ModelConfig()
    )


def test_manifest_records_normalization(export_dir):
    manifest = read_manifest(os.path.join(export_dir, "manifest.txt"))
    for key in ("norm_mean_r", "norm_mean_g", "norm_mean_b",
                "norm_std_r", "norm_std_g", "norm_std_b", "source_id"):
        assert key in manifest
    assert float(manifest["norm_std_r"]) > 0


def test_goldens_complete(export_dir):
    goldens = read_container(os.path.join(export_dir, "goldens.vitw"))
    expected = (
        ["golden/input", "golden/embedding", "golden/features", "golden/logits"]
        + [f"golden/layer_{i:02d}" for i in range(12)]
    )
    assert sorted(goldens) == sorted(expected)
    assert goldens["golden/input"].shape == (3, 224, 224)
    assert goldens["golden/embedding"].shape == (50, 768)
    assert goldens["golden/layer_07"].shape == (50, 768)
    assert goldens["golden/features"].shape == (768,)
    assert goldens["golden/logits"].shape == (24,)


def test_reexport_is_byte_identical(export_dir, tmp_path):
    second = str(tmp_path / "again")
    run_export(second, source="random", seed=3, head_seed=4)
    for name in ("vit_b32.vitw", "goldens.vitw", "manifest.txt"):
        a = open(os.path.join(export_dir, name), "rb").read()
        b = open(os.path.join(second, name), "rb").read()
        assert a == b, name


def test_unmapped_tensor_is_hard_failure():
    model, _ = build_reference_model("random", seed=0)
    state = dict(model.state_dict())
    state["encoder.layers.encoder_layer_0.unexpected_extra"] = torch.zeros(1)
    with pytest.raises(RuntimeError, match="unexpected_extra"):
        convert_state_dict(state)


def test_mapping_covers_every_source_tensor():
    model, _ = build_reference_model("random", seed=0)
    converted = convert_state_dict(dict(model.state_dict()))
    # everything except the replaced 1000-way head is carried over
    source_params = sum(p.numel() for n, p in model.named_parameters()
                        if not n.startswith("heads."))
    assert param_count(converted) == source_params


def test_head_tensors_shapes_and_seeding():
    a = make_head_tensors(11)
    b = make_head_tensors(11)
    c = make_head_tensors(12)
    assert a["head/w1"].shape == (768, 768)
    assert a["head/w2"].shape == (768, 24)
    for k in a:
        assert np.array_equal(a[k], b[k])
    assert not np.array_equal(a["head/w1"], c["head/w1"])


def test_preprocess_image(tmp_path):
    from PIL import Image

    card = (synthetic_test_card() * 255).astype(np.uint8)
    path = str(tmp_path / "card.png")
    Image.fromarray(card).save(path)
    planes = preprocess_image(path)
    assert planes.shape == (3, 224, 224)
    assert planes.dtype == np.float32
    assert np.all(np.isfinite(planes))


def test_pretrained_source_when_checkpoint_available(tmp_path):
    try:
        model, source_id = build_reference_model("pretrained")
    except Exception:
        pytest.skip("pretrained ViT-B/32 checkpoint not available locally")
    assert source_id.endswith("IMAGENET1K_V1")
    converted = convert_state_dict(dict(model.state_dict()))
    assert param_count(converted) == 87_455_232
