"""Attention-probability capture from a pretrained diffusion backend.

A backend exposes named attention blocks (diffusers-style ids such as
``up.1.attns.2.block.1``), runs its foreground denoising loop, and hands
post-softmax probability maps to a collector at requested steps. This
module validates the maps (row-stochastic within 1e-4), dumps them as ATND
tensors and writes a run manifest with the true tokenizer EOS index and
per-layer spatial shapes, so the analyzer consumes real-backend dumps and
toy-pipeline dumps through the same files.

The adapter only captures; it never modifies the backend's computation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from .formats import MANIFEST_VERSION, write_manifest, write_tensor

ROW_SUM_TOL = 1e-4


@dataclass(frozen=True)
class CaptureSpec:
    """Which layers and timestep fractions to capture, conditional branch only."""

    layers: tuple[str, ...]
    timestep_fractions: tuple[float, ...] = (0.8,)
    branch: str = "conditional"

    def __post_init__(self):
        if not self.layers:
            raise ValueError("CaptureSpec needs at least one layer")
        if not self.timestep_fractions:
            raise ValueError("CaptureSpec needs at least one timestep fraction")
        for frac in self.timestep_fractions:
            if not 0.0 <= frac <= 1.0:
                raise ValueError(f"timestep fraction {frac} outside [0, 1]")
        if self.branch != "conditional":
            raise ValueError("only conditional-branch capture is supported")


class CaptureBackend(Protocol):
    """What a backend wrapper must provide."""

    def layer_names(self) -> list[str]: ...

    def layer_shape(self, layer: str) -> tuple[int, int]: ...

    def total_steps(self) -> int: ...

    def eos_index(self, prompt: str) -> int: ...

    def run_capture(self, prompt: str, layers: list[str], steps: list[int], collector) -> None:
        """Denoise under ``prompt``; call collector(step, layer, kind, probs)
        with kind in {"self", "cross"} and probs shaped (H, M, K) float32."""
        ...


@dataclass
class _Collected:
    entries: list[tuple[int, str, str, np.ndarray]] = field(default_factory=list)

    def __call__(self, step: int, layer: str, kind: str, probs: np.ndarray) -> None:
        self.entries.append((step, layer, kind, np.asarray(probs, dtype=np.float32)))


def steps_for_fractions(fractions, total_steps: int) -> list[int]:
    """Fraction f of total noise remaining maps to step round((1 - f) * N)."""
    steps = {min(total_steps - 1, int(round((1.0 - f) * total_steps))) for f in fractions}
    return sorted(steps)


def validate_probs(probs: np.ndarray, layer: str, shape: tuple[int, int]) -> None:
    if probs.ndim != 3:
        raise ValueError(f"{layer}: expected (H, M, K) probabilities, got {probs.shape}")
    h, w = shape
    if probs.shape[1] != h * w:
        raise ValueError(f"{layer}: {probs.shape[1]} tokens != declared {h}x{w}")
    if not np.isfinite(probs).all():
        raise ValueError(f"{layer}: non-finite attention probabilities")
    err = np.abs(probs.sum(axis=-1, dtype=np.float64) - 1.0).max()
    if err > ROW_SUM_TOL:
        raise ValueError(f"{layer}: attention rows deviate from stochasticity by {err:.3g}")


def capture_run(
    backend: CaptureBackend,
    fg_prompt: str,
    bg_prompt: str,
    spec: CaptureSpec,
    out_dir,
) -> dict:
    """Capture the requested maps and write dumps plus manifest.json.

    Returns the manifest dict. Raises ValueError when a layer selector is
    unknown (listing what the backend offers) or when a captured map fails
    validation.
    """
    available = backend.layer_names()
    unknown = [name for name in spec.layers if name not in available]
    if unknown:
        raise ValueError(
            f"unknown layers {unknown}; backend provides: {sorted(available)}"
        )

    total = backend.total_steps()
    steps = steps_for_fractions(spec.timestep_fractions, total)
    out = Path(out_dir)
    (out / "dumps").mkdir(parents=True, exist_ok=True)

    collected = _Collected()
    backend.run_capture(fg_prompt, list(spec.layers), steps, collected)

    dump_entries = []
    seen = set()
    for step, layer, kind, probs in collected.entries:
        if layer not in spec.layers or step not in steps:
            continue
        validate_probs(probs, layer, backend.layer_shape(layer))
        rel = f"dumps/{kind}_step{step:03d}_{layer}.atnd"
        write_tensor(out / rel, probs)
        dump_entries.append({"kind": kind, "step": step, "layer": layer, "path": rel})
        seen.add((layer, kind))

    for layer in spec.layers:
        if (layer, "self") not in seen or (layer, "cross") not in seen:
            raise ValueError(f"backend produced no self+cross pair for layer '{layer}'")

    eos = int(backend.eos_index(fg_prompt))
    layers_table = []
    for name in spec.layers:
        h, w = backend.layer_shape(name)
        layers_table.append({"id": name, "kind": "attention", "height": h, "width": w})

    manifest = {
        "format_version": MANIFEST_VERSION,
        "kind": "capture",
        "streams": {
            "fg": {"prompt": fg_prompt, "label": fg_prompt, "eos_index": eos},
            "bg": {"prompt": bg_prompt, "label": bg_prompt,
                   "eos_index": int(backend.eos_index(bg_prompt))},
        },
        "sampler": {"steps": total},
        "blend": {"d": 10.0},
        "capture_layer": spec.layers[0],
        "layers": layers_table,
        "capture_steps": steps,
        "total_steps": total,
        "dumps": dump_entries,
        "snapshots": [],
    }
    write_manifest(out / "manifest.json", manifest)
    return manifest
