"""Tensor-name mapping from torchvision's ViT-B/32 to the container scheme.

Layout conventions of the target:
  - projection weights are stored (in_features, out_features), so every
    torch Linear weight is transposed on export;
  - the patch projection is stored (P*P*C, D) with patch pixels flattened
    as (row, column, channel), so the conv kernel (D, C, P, P) is
    permuted to (P, P, C, D) before flattening;
  - the fused in_proj of torch MultiheadAttention is split into q/k/v.

Any source tensor the table does not consume is a hard error: silent
drops would corrupt the equivalence guarantee.
"""

from __future__ import annotations

from typing import Dict

import numpy as np
import torch

HIDDEN = 768


def convert_state_dict(state: Dict[str, torch.Tensor]) -> Dict[str, np.ndarray]:
    """Rename and re-lay-out every encoder tensor; classifier head excluded."""
    out: Dict[str, np.ndarray] = {}
    unconsumed = set(state.keys())

    def take(src: str) -> np.ndarray:
        unconsumed.discard(src)
        return state[src].detach().cpu().numpy().astype(np.float32)

    out["cls_token"] = take("class_token").reshape(1, HIDDEN)
    out["pos_embed"] = take("encoder.pos_embedding").reshape(-1, HIDDEN)
    conv = take("conv_proj.weight")  # (D, C, P, P)
    d, c, p, _ = conv.shape
    out["patch_embed/weight"] = (
        conv.transpose(2, 3, 1, 0).reshape(p * p * c, d).copy()
    )
    out["patch_embed/bias"] = take("conv_proj.bias")

    layer = 0
    while f"encoder.layers.encoder_layer_{layer}.ln_1.weight" in state:
        src = f"encoder.layers.encoder_layer_{layer}"
        dst = f"encoder/layer_{layer:02d}"
        out[f"{dst}/ln1/gamma"] = take(f"{src}.ln_1.weight")
        out[f"{dst}/ln1/beta"] = take(f"{src}.ln_1.bias")
        in_proj_w = take(f"{src}.self_attention.in_proj_weight")  # (3D, D)
        in_proj_b = take(f"{src}.self_attention.in_proj_bias")  # (3D,)
        for i, which in enumerate(("q", "k", "v")):
            block = in_proj_w[i * HIDDEN : (i + 1) * HIDDEN]
            out[f"{dst}/attn/{which}_weight"] = block.T.copy()
            out[f"{dst}/attn/{which}_bias"] = in_proj_b[i * HIDDEN : (i + 1) * HIDDEN]
        out[f"{dst}/attn/out_weight"] = take(
            f"{src}.self_attention.out_proj.weight"
        ).T.copy()
        out[f"{dst}/attn/out_bias"] = take(f"{src}.self_attention.out_proj.bias")
        out[f"{dst}/ln2/gamma"] = take(f"{src}.ln_2.weight")
        out[f"{dst}/ln2/beta"] = take(f"{src}.ln_2.bias")
        out[f"{dst}/mlp/w1"] = take(f"{src}.mlp.0.weight").T.copy()
        out[f"{dst}/mlp/b1"] = take(f"{src}.mlp.0.bias")
        out[f"{dst}/mlp/w2"] = take(f"{src}.mlp.3.weight").T.copy()
        out[f"{dst}/mlp/b2"] = take(f"{src}.mlp.3.bias")
        layer += 1

    out["final_ln/gamma"] = take("encoder.ln.weight")
    out["final_ln/beta"] = take("encoder.ln.bias")

    # the source classifier head is replaced, not exported
    unconsumed.discard("heads.head.weight")
    unconsumed.discard("heads.head.bias")
    if unconsumed:
        raise RuntimeError(
            "unmapped source tensors: " + ", ".join(sorted(unconsumed))
        )
    return out
