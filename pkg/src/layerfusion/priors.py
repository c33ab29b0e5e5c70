"""Generative priors read off attention probability maps.

Two per-token scalar fields over the M spatial tokens drive the blending
masks:

* the structure prior scores each query row of a self-attention map by the
  inverse participation ratio 1 / sum_j m[i, j]^2 (1 for a one-hot row, M
  for a uniform row) and negates it through min-max normalization, so dense
  rows (foreground evidence) score high;
* the content prior is the head-averaged cross-attention mass each spatial
  token assigns to the end-of-sequence token of the conditioning.

Both ride on the foreground model's conditional branch. Scores accumulate
in float64; stored prior values are float32 in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .attention import AttnProbMap, minmax_normalize, resize_token_field
from .errors import ConfigurationError


@dataclass(frozen=True)
class StructurePrior:
    """Per-token density field in [0, 1] plus its provenance."""

    values: np.ndarray
    spatial_shape: tuple[int, int]
    source_layer: str
    timestep: float


@dataclass(frozen=True)
class ContentPrior:
    """Per-token EOS attention mass in [0, 1] at one cross-attention layer."""

    values: np.ndarray
    spatial_shape: tuple[int, int]
    eos_index: int
    layer: str


def sparsity_scores(m: AttnProbMap) -> np.ndarray:
    """Inverse participation ratio per query of a self-attention map.

    Heads are averaged before scoring. Returns float64 scores in [1, M].
    """
    if m.key_len != m.queries:
        raise ValueError(
            f"sparsity needs a self-attention map, got keys {m.key_len} != queries {m.queries}"
        )
    head_mean = m.probs.astype(np.float64).mean(axis=0)
    return 1.0 / (head_mean**2).sum(axis=1)


def structure_prior(
    m: AttnProbMap,
    spatial_shape: tuple[int, int],
    layer_id: str,
    timestep: float,
) -> StructurePrior:
    """Density field 1 - normalize(sparsity), favoring dense attention rows.

    Computed as minmax_normalize(-scores), which equals the negated
    normalization for varying scores and degrades to all zeros (no
    foreground evidence) when every row scores the same.
    """
    scores = sparsity_scores(m)
    h, w = spatial_shape
    if h * w != scores.size:
        raise ValueError(f"spatial shape {spatial_shape} != {scores.size} tokens")
    values = minmax_normalize(-scores).astype(np.float32)
    return StructurePrior(values, (h, w), layer_id, timestep)


def content_prior(
    n: AttnProbMap,
    eos_index: int,
    spatial_shape: tuple[int, int],
    layer_id: str,
) -> ContentPrior:
    """Head-averaged EOS column of a cross-attention map; no renormalization."""
    if not 0 <= eos_index < n.key_len:
        raise ValueError(f"eos_index {eos_index} out of range for {n.key_len} keys")
    h, w = spatial_shape
    if h * w != n.queries:
        raise ValueError(f"spatial shape {spatial_shape} != {n.queries} tokens")
    values = n.probs[:, :, eos_index].astype(np.float64).mean(axis=0).astype(np.float32)
    return ContentPrior(values, (h, w), eos_index, layer_id)


def resize_prior(s: StructurePrior, spatial_shape: tuple[int, int]) -> StructurePrior:
    """The structure prior resampled onto another layer's token grid."""
    if s.spatial_shape == tuple(spatial_shape):
        return s
    values = resize_token_field(s.values, s.spatial_shape, tuple(spatial_shape))
    return replace(s, values=values, spatial_shape=tuple(spatial_shape))


def prior_pass(
    fg_denoiser,
    z_t: np.ndarray,
    cond_fg,
    t: float,
    map_sink: Optional[Callable[[AttnProbMap], None]] = None,
) -> StructurePrior:
    """One capture-only forward of the foreground denoiser.

    Runs the denoiser on (z_t, cond_fg), discards the noise prediction, and
    returns the structure prior of the self-attention map captured at the
    denoiser's designated capture layer. The denoiser is stateless, so this
    never disturbs the stream it observes. ``map_sink`` receives the raw
    captured map (used by the run recorder).
    """
    layer_id = fg_denoiser.capture_layer_id
    _, captured = fg_denoiser.forward(z_t, t, cond_fg, capture={layer_id})
    if layer_id not in captured:
        raise ConfigurationError(f"capture layer '{layer_id}' not present in denoiser")
    m = captured[layer_id]
    if map_sink is not None:
        map_sink(m)
    return structure_prior(m, fg_denoiser.cfg.latent_size, layer_id, t)
