"""Capture backend for diffusers UNet pipelines (SDXL-class models).

Wraps a user-supplied ``DiffusionPipeline`` whose ``unet`` follows the
diffusers block layout. Layer selectors use the dotted convention

    {down|mid|up}.{block_index}.attns.{attention_index}.block.{transformer_block_index}

(``mid.attns.{j}.block.{k}`` omits the block index), naming one
BasicTransformerBlock whose attn1/attn2 probability maps are captured.

Requires torch and diffusers; nothing here is imported at package import
time. No weights are bundled, the caller provides the loaded pipeline.
The capture replaces the selected blocks' attention processors with
probability-recording ones and restores them afterwards; outputs are
computed exactly as the stock processor would, so generation is untouched.
"""

from __future__ import annotations

import math
import re
from typing import Callable, Optional

import numpy as np

_SELECTOR = re.compile(
    r"^(?P<place>down|up)\.(?P<block>\d+)\.attns\.(?P<attn>\d+)\.block\.(?P<tblock>\d+)$"
)
_SELECTOR_MID = re.compile(r"^mid\.attns\.(?P<attn>\d+)\.block\.(?P<tblock>\d+)$")


def _resolve_block(unet, selector: str):
    match = _SELECTOR.match(selector)
    if match:
        place = match.group("place")
        blocks = unet.down_blocks if place == "down" else unet.up_blocks
        outer = blocks[int(match.group("block"))]
        attns = outer.attentions[int(match.group("attn"))]
        return attns.transformer_blocks[int(match.group("tblock"))]
    match = _SELECTOR_MID.match(selector)
    if match:
        attns = unet.mid_block.attentions[int(match.group("attn"))]
        return attns.transformer_blocks[int(match.group("tblock"))]
    raise ValueError(f"bad layer selector {selector!r}")


def _enumerate_selectors(unet) -> list[str]:
    names = []
    for place, blocks in (("down", unet.down_blocks), ("up", unet.up_blocks)):
        for i, outer in enumerate(blocks):
            for j, attn in enumerate(getattr(outer, "attentions", []) or []):
                for k in range(len(attn.transformer_blocks)):
                    names.append(f"{place}.{i}.attns.{j}.block.{k}")
    mid = getattr(unet, "mid_block", None)
    for j, attn in enumerate(getattr(mid, "attentions", []) or []):
        for k in range(len(attn.transformer_blocks)):
            names.append(f"mid.attns.{j}.block.{k}")
    return names


class _RecordingProcessor:
    """Attention processor that also stores the conditional-branch probs."""

    def __init__(self, store: Callable[[np.ndarray], None]):
        self._store = store

    def __call__(self, attn, hidden_states, encoder_hidden_states=None,
                 attention_mask=None, temb=None, **kwargs):
        import torch

        residual = hidden_states
        if attn.spatial_norm is not None:
            hidden_states = attn.spatial_norm(hidden_states, temb)
        input_ndim = hidden_states.ndim
        if input_ndim == 4:
            b, c, h, w = hidden_states.shape
            hidden_states = hidden_states.view(b, c, h * w).transpose(1, 2)
        batch_size, seq_len, _ = (
            hidden_states.shape if encoder_hidden_states is None
            else encoder_hidden_states.shape
        )
        if attention_mask is not None:
            attention_mask = attn.prepare_attention_mask(attention_mask, seq_len, batch_size)
        if attn.group_norm is not None:
            hidden_states = attn.group_norm(hidden_states.transpose(1, 2)).transpose(1, 2)

        query = attn.to_q(hidden_states)
        if encoder_hidden_states is None:
            encoder_hidden_states = hidden_states
        elif attn.norm_cross:
            encoder_hidden_states = attn.norm_encoder_hidden_states(encoder_hidden_states)
        key = attn.to_k(encoder_hidden_states)
        value = attn.to_v(encoder_hidden_states)

        heads = attn.heads
        head_dim = query.shape[-1] // heads
        q = query.view(batch_size, -1, heads, head_dim).transpose(1, 2)
        k = key.view(batch_size, -1, heads, head_dim).transpose(1, 2)
        v = value.view(batch_size, -1, heads, head_dim).transpose(1, 2)

        scores = q @ k.transpose(-1, -2) / math.sqrt(head_dim)
        if attention_mask is not None:
            scores = scores + attention_mask.view(batch_size, heads, -1, scores.shape[-1])
        probs = torch.softmax(scores, dim=-1)

        # CFG batches run [uncond, cond]; keep the conditional estimate
        self._store(probs[-1].to(torch.float32).cpu().numpy())

        out = probs @ v
        out = out.transpose(1, 2).reshape(batch_size, -1, heads * head_dim)
        out = attn.to_out[0](out)
        out = attn.to_out[1](out)
        if input_ndim == 4:
            out = out.transpose(-1, -2).reshape(b, c, h, w)
        if attn.residual_connection:
            out = out + residual
        return out / attn.rescale_output_factor


class DiffusersBackend:
    """Adapter around a loaded text-to-image diffusers pipeline.

    num_inference_steps fixes the sampler length; height/width pick the
    generation resolution (layer token grids are derived from them via the
    UNet's downsample factors at capture time).
    """

    def __init__(self, pipeline, num_inference_steps: int = 50,
                 height: Optional[int] = None, width: Optional[int] = None,
                 seed: int = 0):
        self.pipeline = pipeline
        self.steps = num_inference_steps
        self.height = height or pipeline.unet.config.sample_size * pipeline.vae_scale_factor
        self.width = width or pipeline.unet.config.sample_size * pipeline.vae_scale_factor
        self.seed = seed
        self._shapes: dict[str, tuple[int, int]] = {}

    def layer_names(self) -> list[str]:
        return _enumerate_selectors(self.pipeline.unet)

    def layer_shape(self, layer: str) -> tuple[int, int]:
        if layer not in self._shapes:
            raise KeyError(f"shape for '{layer}' unknown before the capture ran")
        return self._shapes[layer]

    def total_steps(self) -> int:
        return self.steps

    def eos_index(self, prompt: str) -> int:
        tokenizer = self.pipeline.tokenizer
        ids = tokenizer(prompt, truncation=True,
                        max_length=tokenizer.model_max_length).input_ids
        return ids.index(tokenizer.eos_token_id)

    def run_capture(self, prompt, layers, steps, collector) -> None:
        import torch

        unet = self.pipeline.unet
        blocks = {name: _resolve_block(unet, name) for name in layers}
        current = {"step": -1}
        originals = {}

        def store_for(name: str, kind: str):
            def store(probs: np.ndarray):
                step = current["step"]
                if step not in steps:
                    return
                m = probs.shape[1]
                side = int(round(math.sqrt(m * self.height / self.width)))
                self._shapes[name] = (side, max(1, m // side))
                collector(step, name, kind, probs)

            return store

        for name, block in blocks.items():
            originals[name] = (block.attn1.processor, block.attn2.processor)
            block.attn1.set_processor(_RecordingProcessor(store_for(name, "self")))
            block.attn2.set_processor(_RecordingProcessor(store_for(name, "cross")))

        def on_step_end(pipe, step_index, timestep, callback_kwargs):
            current["step"] = step_index + 1
            return callback_kwargs

        try:
            current["step"] = 0
            self.pipeline(
                prompt=prompt,
                num_inference_steps=self.steps,
                height=self.height,
                width=self.width,
                generator=torch.Generator(device="cpu").manual_seed(self.seed),
                callback_on_step_end=on_step_end,
            )
        finally:
            for name, block in blocks.items():
                attn1_proc, attn2_proc = originals[name]
                block.attn1.set_processor(attn1_proc)
                block.attn2.set_processor(attn2_proc)
