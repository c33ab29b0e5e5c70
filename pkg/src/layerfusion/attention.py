"""Numeric kernels: softmax attention with probability capture, min-max
normalization, sigmoid, and bilinear resizing of token fields.

Attention probabilities are the raw material for the structure and content
priors, so every attention call returns them alongside the output and
validates row-stochasticity. Arrays are float32 at rest; the attention and
softmax internals accumulate in float64 so that outputs match independent
float64 oracles to well below 1e-6.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ROW_SUM_TOL = 1e-5


@dataclass(frozen=True)
class AttnProbMap:
    """Post-softmax multi-head attention probabilities, shape (H, M, K_len).

    K_len == M for self-attention and equals the conditioning length for
    cross-attention. Every (head, query) row sums to 1.
    """

    probs: np.ndarray

    @property
    def heads(self) -> int:
        return self.probs.shape[0]

    @property
    def queries(self) -> int:
        return self.probs.shape[1]

    @property
    def key_len(self) -> int:
        return self.probs.shape[2]

    def validate(self) -> "AttnProbMap":
        if self.probs.ndim != 3:
            raise ValueError(f"attention map must be 3-d (H, M, K), got {self.probs.shape}")
        if not np.isfinite(self.probs).all():
            raise ValueError("attention map contains non-finite values")
        if self.probs.min() < 0.0 or self.probs.max() > 1.0:
            raise ValueError("attention probabilities outside [0, 1]")
        row_sums = self.probs.sum(axis=2, dtype=np.float64)
        err = np.abs(row_sums - 1.0).max()
        if err > ROW_SUM_TOL:
            raise ValueError(f"attention rows deviate from stochasticity by {err:.3g}")
        return self


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stabilized softmax along ``axis`` (max-subtraction)."""
    x = np.asarray(x)
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"axis {axis} invalid for array with {x.ndim} dims")
    if not np.isfinite(x).all():
        raise ValueError("softmax input must be finite")
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def output_from_probs(probs: AttnProbMap, v: np.ndarray) -> np.ndarray:
    """Recompute the attention output from captured probabilities.

    Defined as float32(float64(probs[h]) @ float64(v_h)) per head with the
    head outputs concatenated; attention_with_probs produces its output
    through this exact operation, so the two agree bit for bit.
    """
    h = probs.heads
    k_len, dv = v.shape
    if probs.key_len != k_len:
        raise ValueError(f"probs key length {probs.key_len} != v rows {k_len}")
    if dv % h != 0:
        raise ValueError(f"value dim {dv} not divisible by {h} heads")
    vh = v.astype(np.float64).reshape(k_len, h, dv // h).transpose(1, 0, 2)
    out = probs.probs.astype(np.float64) @ vh
    return out.transpose(1, 0, 2).reshape(probs.queries, dv).astype(np.float32)


def attention_with_probs(
    q: np.ndarray, k: np.ndarray, v: np.ndarray, heads: int
) -> tuple[np.ndarray, AttnProbMap]:
    """Scaled dot-product multi-head attention, returning output and probs.

    q is (M, dk), k is (K_len, dk), v is (K_len, dv); the per-head scale is
    1/sqrt(dk/heads). The returned output is reconstructible bit-exactly via
    output_from_probs(probs, v).
    """
    q, k, v = np.asarray(q), np.asarray(k), np.asarray(v)
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ValueError("q, k, v must be 2-d")
    m, dk = q.shape
    k_len, dk_k = k.shape
    k_len_v, dv = v.shape
    if dk_k != dk:
        raise ValueError(f"q feature dim {dk} != k feature dim {dk_k}")
    if k_len_v != k_len:
        raise ValueError(f"k rows {k_len} != v rows {k_len_v}")
    if dk % heads != 0 or dv % heads != 0:
        raise ValueError(f"dims ({dk}, {dv}) not divisible by {heads} heads")

    dh = dk // heads
    qh = q.astype(np.float64).reshape(m, heads, dh).transpose(1, 0, 2)
    kh = k.astype(np.float64).reshape(k_len, heads, dh).transpose(1, 0, 2)
    logits = qh @ kh.transpose(0, 2, 1) / np.sqrt(dh)
    probs = AttnProbMap(softmax(logits, axis=-1).astype(np.float32)).validate()
    return output_from_probs(probs, v), probs


def minmax_normalize(x: np.ndarray) -> np.ndarray:
    """Affine map of x onto [0, 1]; constant input maps to all zeros."""
    x = np.asarray(x)
    if x.size < 1:
        raise ValueError("minmax_normalize needs at least one element")
    if not np.isfinite(x).all():
        raise ValueError("minmax_normalize input must be finite")
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic function, evaluated without overflow on either tail."""
    x = np.asarray(x)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    out = np.empty_like(x, dtype=x.dtype if x.dtype.kind == "f" else np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out[0] if scalar else out


def resize_token_field(
    field: np.ndarray, src_shape: tuple[int, int], dst_shape: tuple[int, int]
) -> np.ndarray:
    """Bilinearly resample a flat token field between spatial grids.

    The field of length h*w is laid out row-major as (h, w). Sampling uses
    the corner-aligned convention u = j * (w - 1) / (w' - 1), so identical
    shapes return the field bit-exactly. Output is clipped to the input
    range (bilinear weights can otherwise overshoot by one ulp).
    """
    field = np.asarray(field)
    h, w = src_shape
    hd, wd = dst_shape
    if field.ndim != 1 or field.size != h * w:
        raise ValueError(f"field length {field.size} != {h}x{w}")
    if hd < 1 or wd < 1:
        raise ValueError(f"bad destination shape {dst_shape}")
    if (h, w) == (hd, wd):
        return field.copy()

    grid = field.astype(np.float64).reshape(h, w)

    def axis_coords(n_src: int, n_dst: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if n_dst == 1 or n_src == 1:
            u = np.zeros(n_dst)
        else:
            u = np.arange(n_dst) * (n_src - 1) / (n_dst - 1)
        i0 = np.minimum(np.floor(u).astype(int), n_src - 1)
        i1 = np.minimum(i0 + 1, n_src - 1)
        return i0, i1, u - i0

    r0, r1, fr = axis_coords(h, hd)
    c0, c1, fc = axis_coords(w, wd)
    top = grid[r0][:, c0] * (1 - fc) + grid[r0][:, c1] * fc
    bot = grid[r1][:, c0] * (1 - fc) + grid[r1][:, c1] * fc
    out = top * (1 - fr[:, None]) + bot * fr[:, None]
    out = np.clip(out, field.min(), field.max())
    return out.reshape(hd * wd).astype(field.dtype)
