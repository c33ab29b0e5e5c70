"""Run manifests: the JSON contract between generation, analysis and capture.

Schema (format_version 1):

    {
      "format_version": 1,
      "kind": "toy-run" | "capture",
      "streams": {"fg": {"prompt": str, "label": str, "eos_index": int},
                  "bg": {"prompt": str, "label": str, "eos_index": int}},
      "denoiser": {...},            # optional, toy runs only
      "sampler": {"steps": int, "seed": int, ...},
      "blend": {"d": float, "blend_cross_attention": bool,
                "blend_self_attention": bool, "share_attention": bool},
      "capture_layer": str,         # self-attention layer the structure prior reads
      "layers": [{"id": str, "kind": "self"|"cross", "height": int, "width": int}],
      "capture_steps": [int, ...],
      "total_steps": int,
      "dumps": [{"kind": "self"|"cross", "step": int, "layer": str, "path": str}],
      "snapshots": [{"step": int, "layer": str,
                     "files": {"structure_prior": str, "content_prior": str,
                               "mask_soft": str, "mask_hard": str}}],
      "images": {"fg": str, "bg": str, "blended": str}   # optional
    }

Paths are relative to the manifest's directory. Validation insists on
unique layer ids and on every referenced tensor file existing and parsing.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional, Union

from .errors import FormatError, ManifestError
from .formats import read_tensor

MANIFEST_VERSION = 1
PathLike = Union[str, Path]


def write_manifest(path: PathLike, manifest: dict) -> None:
    text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    Path(path).write_text(text, encoding="utf-8")


def load_manifest(path: PathLike) -> dict:
    try:
        manifest = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(manifest, dict):
        raise ManifestError(f"{path}: manifest must be a JSON object")
    return manifest


def validate_manifest(manifest: dict, base_dir: PathLike) -> None:
    """Raise ManifestError on schema violations or dangling file references."""
    base = Path(base_dir)
    if manifest.get("format_version") != MANIFEST_VERSION:
        raise ManifestError(f"unsupported manifest version {manifest.get('format_version')}")

    layers = manifest.get("layers", [])
    ids = [layer.get("id") for layer in layers]
    if len(ids) != len(set(ids)):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise ManifestError(f"duplicate layer ids: {dupes}")
    for layer in layers:
        for key in ("id", "kind", "height", "width"):
            if key not in layer:
                raise ManifestError(f"layer entry missing '{key}': {layer}")

    for dump in manifest.get("dumps", []):
        for key in ("kind", "step", "layer", "path"):
            if key not in dump:
                raise ManifestError(f"dump entry missing '{key}': {dump}")
        target = base / dump["path"]
        if not target.exists():
            raise ManifestError(f"dangling dump reference: {dump['path']}")
        try:
            read_tensor(target)
        except FormatError as exc:
            raise ManifestError(f"unreadable dump {dump['path']}: {exc}") from exc

    for snap in manifest.get("snapshots", []):
        for name, rel in snap.get("files", {}).items():
            if not (base / rel).exists():
                raise ManifestError(f"dangling snapshot reference: {rel} ({name})")


def layer_shape(manifest: dict, layer_id: str) -> tuple[int, int]:
    for layer in manifest.get("layers", []):
        if layer["id"] == layer_id:
            return int(layer["height"]), int(layer["width"])
    raise ManifestError(f"layer '{layer_id}' not in manifest layer table")


def find_dump(
    manifest: dict, kind: str, step: int, layer_id: Optional[str] = None
) -> Optional[dict]:
    for dump in manifest.get("dumps", []):
        if dump["kind"] == kind and dump["step"] == step:
            if layer_id is None or dump["layer"] == layer_id:
                return dump
    return None
