"""Soft/hard blend masks and attention-level blending across three streams.

The soft mask is the min-max normalized product of the structure and
content priors; the hard mask sharpens it through a sigmoid decision
boundary sigmoid(d * (soft - 0.5)) with coefficient d (default 10). The
blended stream takes a soft convex combination of foreground and blended
attention outputs, after which the foreground stream is pulled toward that
result under the hard mask:

    a_blended' = a_fg * soft + a_blended * (1 - soft)
    a_fg'      = a_blended' * hard + a_fg * (1 - hard)

Background and blended streams additionally share attention: per-stream
queries over the concatenation of both streams' tokens at self-attention,
and a common background conditioning at cross-attention.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .attention import AttnProbMap, minmax_normalize, sigmoid
from .priors import ContentPrior, StructurePrior, content_prior, resize_prior

AttendFn = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, AttnProbMap]]


@dataclass(frozen=True)
class BlendConfig:
    """Switches for the blending scheme.

    d is the decision boundary coefficient. soft_override pins the soft
    mask to a constant, a diagnostic used by the dominance tests and not
    recorded in run manifests.
    """

    d: float = 10.0
    blend_cross_attention: bool = True
    blend_self_attention: bool = False
    share_attention: bool = True
    soft_override: Optional[float] = None

    def __post_init__(self):
        if not self.d > 0:
            raise ValueError(f"boundary coefficient d must be > 0, got {self.d}")

    @property
    def any_interaction(self) -> bool:
        return self.blend_cross_attention or self.blend_self_attention or self.share_attention


@dataclass(frozen=True)
class BlendMasks:
    soft: np.ndarray
    hard: np.ndarray
    d: float


@dataclass(frozen=True)
class BlendLayer:
    """Handle onto one transformer block's cross-attention sublayer.

    norm_* are the pre-attention layer norms and attend_* the projected
    multi-head attentions (query input, key/value input) -> (output, probs)
    of the foreground and background denoisers respectively.
    """

    layer_id: str
    spatial_shape: tuple[int, int]
    norm_fg: Callable[[np.ndarray], np.ndarray]
    norm_bg: Callable[[np.ndarray], np.ndarray]
    attend_fg: AttendFn
    attend_bg: AttendFn


@dataclass
class LayerBlendRecord:
    """What a blending layer saw at one step, for snapshots and dumps."""

    layer_id: str
    structure: StructurePrior
    content: ContentPrior
    masks: BlendMasks
    fg_cross_probs: AttnProbMap


def _hard_from_soft(soft: np.ndarray, d: float) -> np.ndarray:
    return sigmoid(np.float32(d) * (soft - np.float32(0.5)))


def make_masks(s: StructurePrior, c: ContentPrior, cfg: BlendConfig) -> BlendMasks:
    """Soft mask minmax(s * c) and its sigmoid-sharpened hard counterpart.

    Both priors must already live on the same token grid; resample the
    structure prior with resize_prior first when resolutions differ.
    """
    if s.spatial_shape != c.spatial_shape or s.values.shape != c.values.shape:
        raise ValueError(
            f"prior shapes differ after resize: {s.spatial_shape} vs {c.spatial_shape}"
        )
    if cfg.soft_override is not None:
        soft = np.full_like(c.values, np.float32(cfg.soft_override))
    else:
        soft = minmax_normalize(s.values * c.values)
    return BlendMasks(soft=soft, hard=_hard_from_soft(soft, cfg.d), d=cfg.d)


def make_self_masks(s: StructurePrior, cfg: BlendConfig) -> BlendMasks:
    """Masks for the self-attention blending ablation: s alone is the soft mask."""
    if cfg.soft_override is not None:
        soft = np.full_like(s.values, np.float32(cfg.soft_override))
    else:
        soft = s.values
    return BlendMasks(soft=soft, hard=_hard_from_soft(soft, cfg.d), d=cfg.d)


def _convex(a: np.ndarray, b: np.ndarray, w: np.ndarray) -> np.ndarray:
    # w * a + (1 - w) * b in float64, cast back: keeps the endpoints exact
    # and the result inside [min(a,b), max(a,b)] after the float32 round.
    w64 = w.astype(np.float64)[:, None]
    out = w64 * a.astype(np.float64) + (1.0 - w64) * b.astype(np.float64)
    return out.astype(np.float32)


def blend_blended(a_fg: np.ndarray, a_blended: np.ndarray, masks: BlendMasks) -> np.ndarray:
    """Soft blend of the foreground into the blended stream's attention output."""
    if a_fg.shape != a_blended.shape or a_fg.shape[0] != masks.soft.size:
        raise ValueError(
            f"blend shapes disagree: {a_fg.shape}, {a_blended.shape}, mask {masks.soft.size}"
        )
    return _convex(a_fg, a_blended, masks.soft)


def blend_foreground(
    a_blended_new: np.ndarray, a_fg: np.ndarray, masks: BlendMasks
) -> np.ndarray:
    """Hard-mask update pulling the foreground toward the blended result."""
    if a_blended_new.shape != a_fg.shape or a_fg.shape[0] != masks.hard.size:
        raise ValueError(
            f"blend shapes disagree: {a_blended_new.shape}, {a_fg.shape}, mask {masks.hard.size}"
        )
    return _convex(a_blended_new, a_fg, masks.hard)


def shared_attention(
    h_bg: np.ndarray,
    h_blended: np.ndarray,
    cond_bg: Optional[np.ndarray],
    attend: AttendFn,
) -> tuple[np.ndarray, np.ndarray]:
    """Attention over the union of the background and blended streams.

    Queries stay per-stream. With cond_bg None (self-attention) the keys and
    values come from both streams' concatenated tokens; otherwise both
    streams attend the shared background conditioning.
    """
    if h_bg.shape != h_blended.shape:
        raise ValueError(f"stream resolutions differ: {h_bg.shape} vs {h_blended.shape}")
    kv = np.concatenate([h_bg, h_blended], axis=0) if cond_bg is None else cond_bg
    a_bg, _ = attend(h_bg, kv)
    a_blended, _ = attend(h_blended, kv)
    return a_bg, a_blended


def attn_blend_step(
    h_fg: np.ndarray,
    h_blended: np.ndarray,
    h_bg: np.ndarray,
    cond_fg,
    cond_bg,
    s: StructurePrior,
    cfg: BlendConfig,
    layer: BlendLayer,
    sink: Optional[Callable[[LayerBlendRecord], None]] = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One cross-attention sublayer of the three-stream blend.

    Layer-normalizes each stream, extracts the content prior from the
    foreground stream's cross-attention probabilities (captured before any
    blending), computes background/blended attention (shared when enabled),
    and applies the soft/hard blending equations when cross-attention
    blending is on. Returns (a_fg', a_blended', a_bg).
    """
    try:
        n_fg = layer.norm_fg(h_fg)
        n_bg = layer.norm_bg(h_bg)
        n_blended = layer.norm_bg(h_blended)

        a_fg, fg_probs = layer.attend_fg(n_fg, cond_fg.tokens)
        c = content_prior(fg_probs, cond_fg.eos_index, layer.spatial_shape, layer.layer_id)

        if cfg.share_attention:
            a_bg, a_blended = shared_attention(n_bg, n_blended, cond_bg.tokens, layer.attend_bg)
        else:
            a_bg, _ = layer.attend_bg(n_bg, cond_bg.tokens)
            a_blended, _ = layer.attend_bg(n_blended, cond_bg.tokens)

        s_local = resize_prior(s, layer.spatial_shape)
        masks = make_masks(s_local, c, cfg)
        if cfg.blend_cross_attention:
            a_blended_out = blend_blended(a_fg, a_blended, masks)
            a_fg_out = blend_foreground(a_blended_out, a_fg, masks)
        else:
            a_blended_out, a_fg_out = a_blended, a_fg

        if sink is not None:
            sink(LayerBlendRecord(layer.layer_id, s_local, c, masks, fg_probs))
        return a_fg_out, a_blended_out, a_bg
    except ValueError as exc:
        raise type(exc)(f"layer {layer.layer_id}: {exc}") from exc


def binarization_error(masks: Sequence[BlendMasks]) -> float:
    """Mean |hard - step(soft - 0.5)| over a collection of masks.

    The step function is 1 above the 0.5 symmetry point and 0 at or below
    it; pointwise the error shrinks as d grows wherever soft != 0.5.
    """
    if not masks:
        raise ValueError("no masks to score")
    total, count = 0.0, 0
    for m in masks:
        step = (m.soft.astype(np.float64) > 0.5).astype(np.float64)
        total += np.abs(m.hard.astype(np.float64) - step).sum()
        count += m.hard.size
    return total / count
