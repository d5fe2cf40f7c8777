"""ViT-B/32 forward pass over named weight tensors.

Patchify -> linear projection -> CLS token + positional embeddings ->
pre-norm transformer encoder -> final layer norm -> two-layer GELU head.
Weights are plain dicts of float32 arrays keyed by a fixed naming scheme
so the binary container stays language-neutral. All functions are pure;
a weight set is never mutated.

Patch flattening order is (row within patch, column within patch,
channel) and patches are taken in row-major patch order; the projection
weight layout in weight files must match this exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Mapping, Tuple

import numpy as np

from .tensor_core import ShapeError, gelu, layer_norm, matmul, softmax_rows

__all__ = [
    "ModelConfig",
    "HeadParams",
    "HEAD_TENSOR_NAMES",
    "required_tensor_shapes",
    "validate_weight_set",
    "weight_param_count",
    "random_weight_set",
    "random_head_params",
    "patchify",
    "embed",
    "multi_head_attention",
    "encoder_layer",
    "apply_head",
    "extract_features",
    "forward",
    "predict",
]

LN_EPS = 1e-6

HEAD_TENSOR_NAMES = ("head/w1", "head/b1", "head/w2", "head/b2")


@dataclass(frozen=True)
class ModelConfig:
    """ViT geometry plus the preprocessing constants the weights assume."""

    image_size: int = 224
    channels: int = 3
    patch_size: int = 32
    hidden_dim: int = 768
    layers: int = 12
    heads: int = 12
    mlp_dim: int = 3072
    head_hidden: int = 768
    num_classes: int = 24
    norm_mean: Tuple[float, float, float] = (0.5, 0.5, 0.5)
    norm_std: Tuple[float, float, float] = (0.5, 0.5, 0.5)

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ShapeError(
                f"image size {self.image_size} not divisible by patch size "
                f"{self.patch_size}"
            )
        if self.hidden_dim % self.heads != 0:
            raise ShapeError(
                f"hidden dim {self.hidden_dim} not divisible by {self.heads} heads"
            )

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def seq_len(self) -> int:
        return self.num_patches + 1

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels


@dataclass
class HeadParams:
    """The only trainable tensors: a two-layer GELU classifier."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def as_dict(self) -> Dict[str, np.ndarray]:
        return {
            "head/w1": self.w1,
            "head/b1": self.b1,
            "head/w2": self.w2,
            "head/b2": self.b2,
        }

    @classmethod
    def from_weight_set(cls, weights: Mapping[str, np.ndarray]) -> "HeadParams":
        try:
            return cls(*(weights[n] for n in HEAD_TENSOR_NAMES))
        except KeyError as exc:
            raise KeyError(f"missing head tensor {exc.args[0]!r}") from None

    def copy(self) -> "HeadParams":
        return HeadParams(*(v.copy() for v in (self.w1, self.b1, self.w2, self.b2)))

    def validate(self, cfg: ModelConfig) -> None:
        expected = {
            "head/w1": (cfg.hidden_dim, cfg.head_hidden),
            "head/b1": (cfg.head_hidden,),
            "head/w2": (cfg.head_hidden, cfg.num_classes),
            "head/b2": (cfg.num_classes,),
        }
        for name, arr in self.as_dict().items():
            if tuple(arr.shape) != expected[name]:
                raise ShapeError(
                    f"{name} has shape {tuple(arr.shape)}, expected {expected[name]}"
                )


def _layer_prefix(i: int) -> str:
    return f"encoder/layer_{i:02d}"


def required_tensor_shapes(
    cfg: ModelConfig, include_head: bool = True
) -> Dict[str, Tuple[int, ...]]:
    """Every tensor name the forward pass reads, with its expected shape."""
    d, mlp = cfg.hidden_dim, cfg.mlp_dim
    shapes: Dict[str, Tuple[int, ...]] = {
        "patch_embed/weight": (cfg.patch_dim, d),
        "patch_embed/bias": (d,),
        "cls_token": (1, d),
        "pos_embed": (cfg.seq_len, d),
        "final_ln/gamma": (d,),
        "final_ln/beta": (d,),
    }
    for i in range(cfg.layers):
        p = _layer_prefix(i)
        shapes.update(
            {
                f"{p}/ln1/gamma": (d,),
                f"{p}/ln1/beta": (d,),
                f"{p}/attn/q_weight": (d, d),
                f"{p}/attn/q_bias": (d,),
                f"{p}/attn/k_weight": (d, d),
                f"{p}/attn/k_bias": (d,),
                f"{p}/attn/v_weight": (d, d),
                f"{p}/attn/v_bias": (d,),
                f"{p}/attn/out_weight": (d, d),
                f"{p}/attn/out_bias": (d,),
                f"{p}/ln2/gamma": (d,),
                f"{p}/ln2/beta": (d,),
                f"{p}/mlp/w1": (d, mlp),
                f"{p}/mlp/b1": (mlp,),
                f"{p}/mlp/w2": (mlp, d),
                f"{p}/mlp/b2": (d,),
            }
        )
    if include_head:
        shapes.update(
            {
                "head/w1": (d, cfg.head_hidden),
                "head/b1": (cfg.head_hidden,),
                "head/w2": (cfg.head_hidden, cfg.num_classes),
                "head/b2": (cfg.num_classes,),
            }
        )
    return shapes


def validate_weight_set(
    weights: Mapping[str, np.ndarray], cfg: ModelConfig, include_head: bool = True
) -> None:
    """Raise naming the first missing or mis-shaped tensor."""
    for name, shape in required_tensor_shapes(cfg, include_head).items():
        if name not in weights:
            raise KeyError(f"missing tensor {name!r}")
        actual = tuple(weights[name].shape)
        if actual != shape:
            raise ShapeError(
                f"tensor {name!r} has shape {actual}, expected {shape}"
            )


def weight_param_count(cfg: ModelConfig, include_head: bool = True) -> int:
    """Parameter count derived purely from configured shapes."""
    return int(
        sum(
            int(np.prod(s, dtype=np.int64))
            for s in required_tensor_shapes(cfg, include_head).values()
        )
    )


def random_weight_set(
    cfg: ModelConfig, seed: int, include_head: bool = True
) -> Dict[str, np.ndarray]:
    """Seeded random weights: fan-in-scaled uniform projections, unit layer
    norms, small-normal token embeddings. Used for toy encoders and tests."""
    rng = np.random.default_rng(seed)
    out: Dict[str, np.ndarray] = {}
    for name, shape in required_tensor_shapes(cfg, include_head).items():
        if name.endswith(("/gamma",)):
            arr = np.ones(shape)
        elif name.endswith(("/beta", "/bias", "_bias", "/b1", "/b2")):
            arr = np.zeros(shape)
        elif name in ("cls_token", "pos_embed"):
            arr = rng.normal(0.0, 0.02, size=shape)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            arr = rng.uniform(-bound, bound, size=shape)
        out[name] = arr.astype(np.float32)
    return out


def random_head_params(cfg: ModelConfig, seed: int) -> HeadParams:
    rng = np.random.default_rng(seed)
    b1 = 1.0 / np.sqrt(cfg.hidden_dim)
    b2 = 1.0 / np.sqrt(cfg.head_hidden)
    return HeadParams(
        w1=rng.uniform(-b1, b1, size=(cfg.hidden_dim, cfg.head_hidden)).astype(np.float32),
        b1=np.zeros(cfg.head_hidden, dtype=np.float32),
        w2=rng.uniform(-b2, b2, size=(cfg.head_hidden, cfg.num_classes)).astype(np.float32),
        b2=np.zeros(cfg.num_classes, dtype=np.float32),
    )


def zero_head_params(cfg: ModelConfig) -> HeadParams:
    return HeadParams(
        w1=np.zeros((cfg.hidden_dim, cfg.head_hidden), dtype=np.float32),
        b1=np.zeros(cfg.head_hidden, dtype=np.float32),
        w2=np.zeros((cfg.head_hidden, cfg.num_classes), dtype=np.float32),
        b2=np.zeros(cfg.num_classes, dtype=np.float32),
    )


def patchify(planes: np.ndarray, patch_size: int) -> np.ndarray:
    """Split channel-first planes into flattened patches.

    Returns an (N, P*P*C) matrix; row k is patch k in row-major patch
    order, flattened as (row, column, channel).
    """
    planes = np.asarray(planes)
    if planes.ndim != 3:
        raise ShapeError(f"expected (C, H, W) planes, got shape {planes.shape}")
    c, h, w = planes.shape
    if h % patch_size or w % patch_size:
        raise ShapeError(
            f"image {h}x{w} not divisible into {patch_size}x{patch_size} patches"
        )
    hp, wp = h // patch_size, w // patch_size
    patches = (
        planes.reshape(c, hp, patch_size, wp, patch_size)
        .transpose(1, 3, 2, 4, 0)
        .reshape(hp * wp, patch_size * patch_size * c)
    )
    return np.ascontiguousarray(patches)


def unpatchify(patches: np.ndarray, patch_size: int, channels: int) -> np.ndarray:
    """Inverse of patchify for a square image; exact reassembly."""
    n, pd = patches.shape
    side = int(round(np.sqrt(n)))
    if side * side != n or pd != patch_size * patch_size * channels:
        raise ShapeError(f"cannot reassemble {patches.shape} into a square image")
    grid = patches.reshape(side, side, patch_size, patch_size, channels)
    return np.ascontiguousarray(grid.transpose(4, 0, 2, 1, 3)).reshape(
        channels, side * patch_size, side * patch_size
    )


def embed(patches: np.ndarray, weights: Mapping[str, np.ndarray]) -> np.ndarray:
    """Project patches, prepend the CLS token, add positional embeddings."""
    proj = matmul(patches, weights["patch_embed/weight"]) + weights["patch_embed/bias"]
    tokens = np.concatenate([weights["cls_token"], proj], axis=0)
    pos = weights["pos_embed"]
    if tokens.shape != pos.shape:
        raise ShapeError(
            f"token sequence {tokens.shape} does not match positional "
            f"embedding {pos.shape}"
        )
    return (tokens + pos).astype(np.float32)


def multi_head_attention(
    x: np.ndarray, weights: Mapping[str, np.ndarray], prefix: str, heads: int
) -> Tuple[np.ndarray, np.ndarray]:
    """Scaled dot-product multi-head self-attention.

    Returns (output (T, D), attention weights (heads, T, T)); each
    attention row is a softmax distribution over key positions.
    """
    t, d = x.shape
    dh = d // heads
    q = matmul(x, weights[f"{prefix}/attn/q_weight"]) + weights[f"{prefix}/attn/q_bias"]
    k = matmul(x, weights[f"{prefix}/attn/k_weight"]) + weights[f"{prefix}/attn/k_bias"]
    v = matmul(x, weights[f"{prefix}/attn/v_weight"]) + weights[f"{prefix}/attn/v_bias"]
    # (T, D) -> (heads, T, dh)
    qh = q.reshape(t, heads, dh).transpose(1, 0, 2).astype(np.float64)
    kh = k.reshape(t, heads, dh).transpose(1, 0, 2).astype(np.float64)
    vh = v.reshape(t, heads, dh).transpose(1, 0, 2).astype(np.float64)
    scores = qh @ kh.transpose(0, 2, 1) / np.sqrt(dh)
    attn = softmax_rows(scores.reshape(heads * t, t)).reshape(heads, t, t)
    ctx = attn.astype(np.float64) @ vh
    merged = ctx.transpose(1, 0, 2).reshape(t, d).astype(np.float32)
    out = matmul(merged, weights[f"{prefix}/attn/out_weight"])
    out = out + weights[f"{prefix}/attn/out_bias"]
    return out.astype(np.float32), attn.astype(np.float32)


def encoder_layer(
    x: np.ndarray, weights: Mapping[str, np.ndarray], index: int, heads: int
) -> np.ndarray:
    """Pre-norm residual block: x + MHSA(LN(x)), then x + MLP(LN(x))."""
    p = _layer_prefix(index)
    normed = layer_norm(x, weights[f"{p}/ln1/gamma"], weights[f"{p}/ln1/beta"], LN_EPS)
    attn_out, _ = multi_head_attention(normed, weights, p, heads)
    x = (x + attn_out).astype(np.float32)
    normed = layer_norm(x, weights[f"{p}/ln2/gamma"], weights[f"{p}/ln2/beta"], LN_EPS)
    hidden = gelu(matmul(normed, weights[f"{p}/mlp/w1"]) + weights[f"{p}/mlp/b1"])
    mlp_out = matmul(hidden, weights[f"{p}/mlp/w2"]) + weights[f"{p}/mlp/b2"]
    return (x + mlp_out).astype(np.float32)


def apply_head(features: np.ndarray, head: HeadParams) -> np.ndarray:
    """Two-layer GELU classifier; accepts a (D,) vector or (B, D) batch."""
    single = features.ndim == 1
    f = np.atleast_2d(features)
    hidden = gelu(matmul(f, head.w1) + head.b1)
    logits = matmul(hidden, head.w2) + head.b2
    return logits[0] if single else logits


def extract_features(
    planes: np.ndarray, weights: Mapping[str, np.ndarray], cfg: ModelConfig
) -> np.ndarray:
    """Post-final-layernorm CLS embedding: the classifier head's input."""
    validate_weight_set(weights, cfg, include_head=False)
    patches = patchify(planes, cfg.patch_size)
    tokens = embed(patches, weights)
    for i in range(cfg.layers):
        tokens = encoder_layer(tokens, weights, i, cfg.heads)
    tokens = layer_norm(
        tokens, weights["final_ln/gamma"], weights["final_ln/beta"], LN_EPS
    )
    return tokens[0].astype(np.float32)


def forward(
    planes: np.ndarray, weights: Mapping[str, np.ndarray], cfg: ModelConfig
) -> np.ndarray:
    """Class logits for one normalized input; head(extract_features) exactly."""
    validate_weight_set(weights, cfg, include_head=True)
    head = HeadParams.from_weight_set(weights)
    return apply_head(extract_features(planes, weights, cfg), head)


def predict(logits: np.ndarray) -> Tuple[int, np.ndarray]:
    """Softmax probabilities and the argmax class (lowest index on ties)."""
    logits = np.asarray(logits)
    probs = softmax_rows(logits.reshape(1, -1))[0]
    return int(np.argmax(probs)), probs
