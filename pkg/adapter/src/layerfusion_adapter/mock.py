"""Deterministic stand-in backend for exercising the capture toolchain.

Emits synthetic attention with a centered disc "subject": tokens inside
the disc attend densely to each other and put extra cross-attention mass
on the EOS token, so the derived structure/content priors form a coherent
blob in the rendered maps. No weights, no torch; everything is seeded by
(prompt, layer, step).
"""

from __future__ import annotations

import hashlib

import numpy as np

_LAYERS = {
    "down.0.attns.0.block.0": (8, 8),
    "down.1.attns.1.block.0": (8, 8),
    "mid.attns.0.block.0": (8, 8),
    "up.1.attns.2.block.0": (16, 16),
    "up.1.attns.2.block.1": (16, 16),
}

_HEADS = 4
_TEXT_LEN = 16
_TOTAL_STEPS = 50


def _seed(*parts) -> np.random.Generator:
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def _softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return (e / e.sum(axis=-1, keepdims=True)).astype(np.float32)


class MockBackend:
    """Synthetic diffusers-shaped backend with deterministic attention."""

    def __init__(self, total_steps: int = _TOTAL_STEPS):
        self._total_steps = total_steps

    def layer_names(self) -> list[str]:
        return list(_LAYERS)

    def layer_shape(self, layer: str) -> tuple[int, int]:
        return _LAYERS[layer]

    def total_steps(self) -> int:
        return self._total_steps

    def tokenize(self, prompt: str) -> list[str]:
        return ["<bos>", *prompt.split(), "<eos>"]

    def eos_index(self, prompt: str) -> int:
        # first end-of-sequence position under the toy whitespace tokenizer
        return min(len(self.tokenize(prompt)) - 1, _TEXT_LEN - 1)

    def _disc(self, shape: tuple[int, int]) -> np.ndarray:
        h, w = shape
        yy, xx = np.mgrid[0:h, 0:w]
        cy, cx = (h - 1) / 2, (w - 1) / 2
        r2 = ((yy - cy) / (0.3 * h)) ** 2 + ((xx - cx) / (0.3 * w)) ** 2
        return (r2 <= 1.0).reshape(-1)

    def run_capture(self, prompt, layers, steps, collector) -> None:
        for step in steps:
            for layer in layers:
                shape = _LAYERS[layer]
                m = shape[0] * shape[1]
                inside = self._disc(shape)

                rng = _seed(prompt, layer, step, "self")
                logits = rng.normal(size=(_HEADS, m, m)) * 0.3
                # subject tokens spread attention across the subject
                logits = logits + 2.0 * np.outer(inside, inside)[None]
                collector(step, layer, "self", _softmax(logits))

                rng = _seed(prompt, layer, step, "cross")
                logits = rng.normal(size=(_HEADS, m, _TEXT_LEN)) * 0.3
                eos = self.eos_index(prompt)
                bump = np.zeros((m, _TEXT_LEN))
                bump[inside, eos] = 3.0
                logits = logits + bump[None]
                collector(step, layer, "cross", _softmax(logits))
