"""Reference implementation of attention with layer-normalized Q/K projections.

Normalizing the query and key rows before the scaled dot product bounds
every logit by sqrt(d_k), which is the stabilization property the rest of
the system relies on.  Double precision throughout; this is a reference,
not a performance kernel.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch

EPS = 1e-6


def _as_matrix(m, name: str) -> np.ndarray:
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def layer_norm_rows(m, eps: float = EPS) -> np.ndarray:
    """Normalize each row to mean 0 and variance 1 (eps-regularized).

    Unit gain, zero bias: no learned parameters.  A constant row has zero
    variance and maps to the zero row via the eps term.
    """
    arr = _as_matrix(m, "m")
    if arr.shape[1] < 2:
        raise DimensionMismatch(f"rows must have at least 2 columns, got {arr.shape[1]}")
    mean = arr.mean(axis=1, keepdims=True)
    var = arr.var(axis=1, keepdims=True)
    return (arr - mean) / np.sqrt(var + eps)


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def qk_norm_attention(q, k, v, d_k: int | None = None, eps: float = EPS) -> np.ndarray:
    """softmax(norm(Q) @ norm(K)^T / sqrt(d_k)) @ V.

    Because the Q and K rows are layer-normalized first, the output is
    invariant to any positive per-row affine rescaling of Q or K, and each
    output row is a convex combination of V's rows.
    """
    q_arr = _as_matrix(q, "Q")
    k_arr = _as_matrix(k, "K")
    v_arr = _as_matrix(v, "V")
    if d_k is None:
        d_k = q_arr.shape[1]
    if q_arr.shape[1] != d_k or k_arr.shape[1] != d_k:
        raise DimensionMismatch(
            f"Q and K must have {d_k} columns, got {q_arr.shape[1]} and {k_arr.shape[1]}"
        )
    if k_arr.shape[0] != v_arr.shape[0]:
        raise DimensionMismatch(
            f"K has {k_arr.shape[0]} rows but V has {v_arr.shape[0]}"
        )
    logits = layer_norm_rows(q_arr, eps) @ layer_norm_rows(k_arr, eps).T / np.sqrt(d_k)
    return softmax_rows(logits) @ v_arr
