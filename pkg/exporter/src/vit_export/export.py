"""Export torchvision ViT-B/32 weights and golden activations.

Produces three artifacts in an output directory:

  vit_b32.vitw   every encoder tensor under the container naming scheme,
                 plus a seeded two-layer GELU classifier head for 24
                 classes (the source's 1000-way head is replaced)
  goldens.vitw   one preprocessed input and every intermediate activation
                 of the reference forward pass, under golden/* names
  manifest.txt   key=value: parameter count, normalization constants,
                 source identifier, seeds

The pretrained ImageNet-1K checkpoint is used when it is available
locally; otherwise a seeded random initialization of the same
architecture is exported, which still pins the cross-implementation
equivalence contract.
"""

from __future__ import annotations

import os
from typing import Dict, Optional, Tuple

import numpy as np
import torch
import torchvision.models as tvm
from PIL import Image

from .container import param_count, write_container
from .mapping import HIDDEN, convert_state_dict

NUM_CLASSES = 24
HEAD_HIDDEN = 768
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

GOLDEN_INPUT = "golden/input"
GOLDEN_EMBEDDING = "golden/embedding"
GOLDEN_FEATURES = "golden/features"
GOLDEN_LOGITS = "golden/logits"


def _seeded_random_state(model: torch.nn.Module, seed: int) -> None:
    """Overwrite every parameter from a numpy generator, in name order.

    Layer norms get near-unit scales; everything else is small-normal so
    activations stay bounded through all twelve layers.
    """
    rng = np.random.default_rng(seed)
    with torch.no_grad():
        for name, param in sorted(model.named_parameters()):
            if name.endswith(("ln_1.weight", "ln_2.weight")) or name == "encoder.ln.weight":
                values = 1.0 + 0.02 * rng.standard_normal(param.shape)
            else:
                values = 0.02 * rng.standard_normal(param.shape)
            param.copy_(torch.from_numpy(values.astype(np.float32)))


def build_reference_model(source: str, seed: int = 0) -> Tuple[torch.nn.Module, str]:
    """Instantiate ViT-B/32; returns (model in eval mode, source identifier)."""
    if source == "pretrained":
        weights = tvm.ViT_B_32_Weights.IMAGENET1K_V1
        model = tvm.vit_b_32(weights=weights)
        source_id = "torchvision/vit_b_32:IMAGENET1K_V1"
    elif source == "random":
        model = tvm.vit_b_32(weights=None)
        _seeded_random_state(model, seed)
        source_id = f"torchvision/vit_b_32:seeded-random-{seed}"
    else:
        raise ValueError(f"unknown source {source!r}; expected pretrained or random")
    model.eval()
    return model, source_id


def make_head_tensors(seed: int) -> Dict[str, np.ndarray]:
    """Seeded replacement classifier: 768 -> 768 -> 24 with GELU between."""
    rng = np.random.default_rng(seed)
    b1 = 1.0 / np.sqrt(HIDDEN)
    b2 = 1.0 / np.sqrt(HEAD_HIDDEN)
    return {
        "head/w1": rng.uniform(-b1, b1, (HIDDEN, HEAD_HIDDEN)).astype(np.float32),
        "head/b1": rng.uniform(-0.01, 0.01, HEAD_HIDDEN).astype(np.float32),
        "head/w2": rng.uniform(-b2, b2, (HEAD_HIDDEN, NUM_CLASSES)).astype(np.float32),
        "head/b2": rng.uniform(-0.01, 0.01, NUM_CLASSES).astype(np.float32),
    }


def export_weights(
    model: torch.nn.Module, head_seed: int, out_path: str
) -> Dict[str, np.ndarray]:
    """Write the renamed weight container; returns the exported tensors."""
    tensors = convert_state_dict(dict(model.state_dict()))
    tensors.update(make_head_tensors(head_seed))
    write_container(tensors, out_path)
    return tensors


def preprocess_image(
    path: str, mean=IMAGENET_MEAN, std=IMAGENET_STD
) -> np.ndarray:
    """Documented preprocessing: RGB, bilinear resize to 224, normalize, CHW."""
    with Image.open(path) as im:
        im = im.convert("RGB").resize((224, 224), Image.BILINEAR)
        arr = np.asarray(im, dtype=np.float32) / 255.0
    arr = (arr - np.asarray(mean, dtype=np.float32)) / np.asarray(std, dtype=np.float32)
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def synthetic_test_card(seed: int = 0) -> np.ndarray:
    """Deterministic fallback input: smooth gradients plus a bright blob,
    loosely shaped like a rendered spectrogram. Returns HxWx3 in [0, 1]."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:224, 0:224] / 223.0
    blob = np.exp(-(((xx - 0.5) ** 2 + (yy - 0.35) ** 2) / 0.02))
    channels = [
        0.25 + 0.5 * xx + 0.25 * blob,
        0.2 + 0.3 * (1 - yy) + 0.5 * blob,
        0.3 + 0.2 * rng.random((224, 224)) + 0.3 * blob,
    ]
    return np.clip(np.stack(channels, axis=2), 0.0, 1.0).astype(np.float32)


def export_goldens(
    model: torch.nn.Module,
    head_tensors: Dict[str, np.ndarray],
    input_planes: np.ndarray,
    out_path: str,
) -> Dict[str, np.ndarray]:
    """Run the reference forward pass and dump every intermediate activation."""
    goldens: Dict[str, np.ndarray] = {GOLDEN_INPUT: input_planes.astype(np.float32)}
    captured: Dict[str, torch.Tensor] = {}
    hooks = []

    def keep(name):
        def hook(_module, _inputs, output):
            captured[name] = output.detach()

        return hook

    def keep_input(name):
        def hook(_module, inputs):
            captured[name] = inputs[0].detach()

        return hook

    encoder = model.encoder
    hooks.append(encoder.layers.register_forward_pre_hook(keep_input("embedding")))
    for i, block in enumerate(encoder.layers):
        hooks.append(block.register_forward_hook(keep(f"layer_{i:02d}")))
    hooks.append(encoder.ln.register_forward_hook(keep("post_ln")))

    try:
        with torch.no_grad():
            model(torch.from_numpy(input_planes).unsqueeze(0))
    finally:
        for h in hooks:
            h.remove()

    goldens[GOLDEN_EMBEDDING] = captured["embedding"][0].numpy()
    for i in range(len(encoder.layers)):
        goldens[f"golden/layer_{i:02d}"] = captured[f"layer_{i:02d}"][0].numpy()
    features = captured["post_ln"][0, 0]
    goldens[GOLDEN_FEATURES] = features.numpy()

    with torch.no_grad():
        w1 = torch.from_numpy(head_tensors["head/w1"])
        b1 = torch.from_numpy(head_tensors["head/b1"])
        w2 = torch.from_numpy(head_tensors["head/w2"])
        b2 = torch.from_numpy(head_tensors["head/b2"])
        hidden = torch.nn.functional.gelu(features @ w1 + b1)
        goldens[GOLDEN_LOGITS] = (hidden @ w2 + b2).numpy()

    write_container(goldens, out_path)
    return goldens


def write_manifest(
    path: str,
    tensors: Dict[str, np.ndarray],
    source_id: str,
    head_seed: int,
    image_source: str,
) -> None:
    lines = [
        f"param_count={param_count(tensors)}",
        f"source_id={source_id}",
        f"head_seed={head_seed}",
        f"image_source={image_source}",
        f"norm_mean_r={IMAGENET_MEAN[0]}",
        f"norm_mean_g={IMAGENET_MEAN[1]}",
        f"norm_mean_b={IMAGENET_MEAN[2]}",
        f"norm_std_r={IMAGENET_STD[0]}",
        f"norm_std_g={IMAGENET_STD[1]}",
        f"norm_std_b={IMAGENET_STD[2]}",
    ]
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def run_export(
    out_dir: str,
    source: str = "random",
    seed: int = 0,
    head_seed: int = 1,
    image_path: Optional[str] = None,
) -> Dict[str, str]:
    """Full export: weights, goldens, manifest. Returns artifact paths."""
    torch.set_num_threads(1)  # byte-stable goldens regardless of host
    os.makedirs(out_dir, exist_ok=True)
    model, source_id = build_reference_model(source, seed)
    paths = {
        "weights": os.path.join(out_dir, "vit_b32.vitw"),
        "goldens": os.path.join(out_dir, "goldens.vitw"),
        "manifest": os.path.join(out_dir, "manifest.txt"),
    }
    tensors = export_weights(model, head_seed, paths["weights"])
    if image_path is not None:
        planes = preprocess_image(image_path)
        image_source = os.path.basename(image_path)
    else:
        card = synthetic_test_card()
        planes = np.ascontiguousarray(
            (
                (card - np.asarray(IMAGENET_MEAN, dtype=np.float32))
                / np.asarray(IMAGENET_STD, dtype=np.float32)
            ).transpose(2, 0, 1)
        )
        image_source = "synthetic-test-card-0"
    head_tensors = {k: v for k, v in tensors.items() if k.startswith("head/")}
    export_goldens(model, head_tensors, planes, paths["goldens"])
    write_manifest(paths["manifest"], tensors, source_id, head_seed, image_source)
    return paths
