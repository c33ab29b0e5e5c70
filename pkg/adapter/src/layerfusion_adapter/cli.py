"""Capture CLI: dump attention maps from a backend for offline analysis.

The backend is named as ``module:attr``; the attr is called with no
arguments if callable. Default is the bundled deterministic mock, useful
for smoke-testing the toolchain without model weights:

    layerfusion-adapter capture --fg-prompt "a lynx" --bg-prompt "a snowy forest" \
        --layers up.1.attns.2.block.1 --timesteps 0.8 --out-dir capture/
"""

from __future__ import annotations

import argparse
import importlib
import sys
from typing import Optional, Sequence

from .capture import CaptureSpec, capture_run


def load_backend(spec: str):
    module_name, _, attr = spec.partition(":")
    if not attr:
        raise ValueError(f"backend must be 'module:attr', got {spec!r}")
    obj = getattr(importlib.import_module(module_name), attr)
    return obj() if callable(obj) else obj


def _fractions(text: str) -> tuple[float, ...]:
    try:
        values = tuple(float(p) for p in text.split(",") if p.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"timesteps must be comma-separated, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("timesteps is empty")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="layerfusion-adapter")
    sub = parser.add_subparsers(dest="command", required=True)
    c = sub.add_parser("capture", help="dump attention maps plus a run manifest")
    c.add_argument("--backend", default="layerfusion_adapter.mock:MockBackend",
                   help="backend factory as module:attr (default: bundled mock)")
    c.add_argument("--fg-prompt", required=True)
    c.add_argument("--bg-prompt", required=True)
    c.add_argument("--layers", required=True,
                   help="comma-separated layer selectors, e.g. up.1.attns.2.block.1")
    c.add_argument("--timesteps", type=_fractions, default=(0.8,),
                   help="fractions of total noise remaining (default 0.8)")
    c.add_argument("--out-dir", required=True)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        backend = load_backend(args.backend)
        spec = CaptureSpec(
            layers=tuple(p for p in args.layers.split(",") if p),
            timestep_fractions=args.timesteps,
        )
        manifest = capture_run(backend, args.fg_prompt, args.bg_prompt, spec, args.out_dir)
    except (ValueError, ImportError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"captured {len(manifest['dumps'])} dumps at steps {manifest['capture_steps']}")
    print(f"manifest: {args.out_dir}/manifest.json")
    return 0


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
