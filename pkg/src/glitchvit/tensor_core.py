"""Dense numeric kernel for the encoder and classifier head.

All operations are pure functions over 2-D row-major arrays. Values are
stored at single precision in the model pipeline while every reduction
here accumulates at double precision, so results are stable regardless
of the storage dtype handed in. Outputs keep the (promoted) input dtype.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

__all__ = ["ShapeError", "matmul", "layer_norm", "softmax_rows", "gelu", "gelu_grad"]

_SQRT2 = float(np.sqrt(2.0))
_INV_SQRT_2PI = float(1.0 / np.sqrt(2.0 * np.pi))


class ShapeError(ValueError):
    """Raised when operand shapes are inconsistent."""


def _as2d(x, name: str) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {x.shape}")
    return x


def _result_dtype(*arrays: np.ndarray) -> np.dtype:
    dt = np.result_type(*arrays)
    return np.dtype(np.float64) if dt == np.float64 else np.dtype(np.float32)


def matmul(a, b) -> np.ndarray:
    """Matrix product with double-precision accumulation.

    Raises ShapeError naming both shapes when the inner dimensions differ.
    """
    a = _as2d(a, "a")
    b = _as2d(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    out = a.astype(np.float64, copy=False) @ b.astype(np.float64, copy=False)
    return out.astype(_result_dtype(a, b), copy=False)


def layer_norm(x, gamma, beta, eps: float = 1e-6) -> np.ndarray:
    """Normalize each row to zero mean / unit population variance, then
    scale by gamma and shift by beta."""
    x = _as2d(x, "x")
    gamma = np.asarray(gamma).reshape(-1)
    beta = np.asarray(beta).reshape(-1)
    if gamma.shape[0] != x.shape[1] or beta.shape[0] != x.shape[1]:
        raise ShapeError(
            f"layer_norm length mismatch: x has {x.shape[1]} columns, "
            f"gamma has {gamma.shape[0]}, beta has {beta.shape[0]}"
        )
    if not eps > 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    x64 = x.astype(np.float64, copy=False)
    mu = x64.mean(axis=1, keepdims=True)
    var = x64.var(axis=1, keepdims=True)
    out = (x64 - mu) / np.sqrt(var + eps)
    out = out * gamma.astype(np.float64) + beta.astype(np.float64)
    return out.astype(_result_dtype(x, gamma, beta), copy=False)


def softmax_rows(x) -> np.ndarray:
    """Row-wise softmax with max-subtraction for overflow safety."""
    x = _as2d(x, "x")
    x64 = x.astype(np.float64, copy=False)
    shifted = x64 - x64.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)
    return out.astype(_result_dtype(x), copy=False)


def gelu(x) -> np.ndarray:
    """Elementwise x * Phi(x) using the exact-erf normal CDF.

    The tanh approximation is deliberately not used: imported pretrained
    weights assume the exact form.
    """
    x = np.asarray(x)
    x64 = x.astype(np.float64, copy=False)
    out = x64 * 0.5 * (1.0 + erf(x64 / _SQRT2))
    return out.astype(_result_dtype(x), copy=False)


def gelu_grad(x) -> np.ndarray:
    """Derivative of gelu: Phi(x) + x * phi(x)."""
    x = np.asarray(x)
    x64 = x.astype(np.float64, copy=False)
    cdf = 0.5 * (1.0 + erf(x64 / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x64 * x64)
    out = cdf + x64 * pdf
    return out.astype(_result_dtype(x), copy=False)
