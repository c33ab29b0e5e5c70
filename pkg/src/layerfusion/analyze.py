"""Offline prior/mask derivation from dumped attention maps.

Given a run manifest that references self- and cross-attention probability
dumps, recompute the structure prior, content prior and both blending
masks with the same functions the pipeline uses, and write them out as
ATND tensors plus PGM renderings. Works identically on toy-pipeline dumps
and real-backend capture dumps; the file formats are the whole contract.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

from .attention import AttnProbMap
from .blending import BlendConfig, make_masks
from .errors import ManifestError
from .formats import read_tensor, write_pgm, write_tensor
from .manifest import find_dump, layer_shape, load_manifest
from .priors import content_prior, resize_prior, structure_prior


def resolve_step(manifest: dict, step: Optional[int], t_frac: Optional[float]) -> int:
    if (step is None) == (t_frac is None):
        raise ValueError("give exactly one of step or t_frac")
    if t_frac is not None:
        if not 0.0 <= t_frac <= 1.0:
            raise ValueError(f"timestep fraction {t_frac} outside [0, 1]")
        total = manifest.get("total_steps")
        if total is None:
            raise ManifestError("manifest lacks total_steps; cannot resolve a t fraction")
        return int(round((1.0 - t_frac) * int(total)))
    return int(step)


def analyze_dumps(
    manifest_path,
    layer_id: str,
    step: Optional[int],
    out_dir,
    eos_index: Optional[int] = None,
    t_frac: Optional[float] = None,
    panel: bool = True,
) -> dict[str, Path]:
    """Derive s, c, mask_soft, mask_hard for one (layer, step) and write them.

    The self-attention dump is taken at the requested layer when present,
    falling back to the manifest's designated capture layer (the structure
    prior is then resampled onto the requested layer's grid, exactly as the
    pipeline does). eos_index defaults to the foreground stream's manifest
    entry. Returns the written paths keyed by artifact name.
    """
    manifest_path = Path(manifest_path)
    manifest = load_manifest(manifest_path)
    base = manifest_path.parent
    step = resolve_step(manifest, step, t_frac)

    cross = find_dump(manifest, "cross", step, layer_id)
    if cross is None:
        raise ManifestError(f"no cross-attention dump for layer '{layer_id}' step {step}")
    self_layer = layer_id
    self_dump = find_dump(manifest, "self", step, self_layer)
    if self_dump is None:
        self_layer = manifest.get("capture_layer", "")
        self_dump = find_dump(manifest, "self", step, self_layer)
    if self_dump is None:
        raise ManifestError(f"no self-attention dump for step {step}")

    self_map = AttnProbMap(read_tensor(base / self_dump["path"]))
    cross_map = AttnProbMap(read_tensor(base / cross["path"]))

    if eos_index is None:
        eos_index = int(manifest["streams"]["fg"]["eos_index"])
    if not 0 <= eos_index < cross_map.key_len:
        raise ValueError(
            f"eos_index {eos_index} out of range for {cross_map.key_len} text tokens"
        )

    cap_shape = layer_shape(manifest, self_layer)
    target_shape = layer_shape(manifest, layer_id)
    d = float(manifest.get("blend", {}).get("d", 10.0))

    s = structure_prior(self_map, cap_shape, self_layer, float(step))
    s_local = resize_prior(s, target_shape)
    c = content_prior(cross_map, eos_index, target_shape, layer_id)
    masks = make_masks(s_local, c, BlendConfig(d=d))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h, w = target_shape
    written: dict[str, Path] = {}
    for name, values in (
        ("structure_prior", s_local.values),
        ("content_prior", c.values),
        ("mask_soft", masks.soft),
        ("mask_hard", masks.hard),
    ):
        tensor_path = out / f"{name}.atnd"
        image_path = out / f"{name}.pgm"
        write_tensor(tensor_path, values)
        write_pgm(image_path, values.reshape(h, w))
        written[name] = tensor_path
        written[f"{name}.pgm"] = image_path

    if panel:
        from .report import save_mask_panel

        panel_path = out / "panel.png"
        save_mask_panel(
            panel_path,
            [
                ("structure prior s", s_local.values.reshape(h, w)),
                ("content prior c", c.values.reshape(h, w)),
                ("mask_soft", masks.soft.reshape(h, w)),
                ("mask_hard", masks.hard.reshape(h, w)),
            ],
        )
        written["panel"] = panel_path
    return written
