"""Command-line front door: generate, analyze, ablate, composite.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
divergence. Every subcommand is deterministic given its flags and ends its
stdout with one machine-parseable line ``checksum <sha256>`` over the files
it wrote (PNG figures are advisory renderings and excluded).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from .blending import BlendConfig, binarization_error
from .compositing import RgbaImage, SpatialEdit, alpha_blend, apply_edit
from .errors import DivergenceError, FormatError, ManifestError
from .formats import read_pam, read_ppm, write_ppm
from .pipeline import SamplerConfig
from .runs import DEFAULT_WEIGHT_SEED, run_generate


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped onto exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _positive_float(name: str):
    def parse(text: str) -> float:
        try:
            value = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be a number, got {text!r}")
        if not value > 0:
            raise argparse.ArgumentTypeError(f"{name} must be > 0, got {text}")
        return value

    return parse


def _float_pair(name: str):
    def parse(text: str) -> tuple[float, float]:
        parts = text.split(",")
        if len(parts) != 2:
            raise argparse.ArgumentTypeError(f"{name} must be 'x,y', got {text!r}")
        try:
            return float(parts[0]), float(parts[1])
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be numeric 'x,y', got {text!r}")

    return parse


def _d_list(text: str) -> list[float]:
    try:
        values = [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"d-list must be comma-separated numbers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("d-list is empty")
    if any(v <= 0 for v in values):
        raise argparse.ArgumentTypeError(f"every d must be > 0, got {text!r}")
    return values


def _add_generation_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--fg-prompt", default="a cat", help="foreground prompt")
    p.add_argument("--bg-prompt", default="a forest", help="background prompt")
    p.add_argument("--seed", type=int, default=7, help="sampler noise seed")
    p.add_argument("--steps", type=int, default=20, help="sampler steps")
    p.add_argument("--weight-seed", type=int, default=DEFAULT_WEIGHT_SEED,
                   help="foreground weight seed (background uses seed+1)")
    p.add_argument("--guidance", type=float, default=0.0, help="CFG scale, 0 = off")
    p.add_argument("--blend-self", action="store_true",
                   help="also blend at self-attention layers (structure prior only)")
    p.add_argument("--no-share", action="store_true", help="disable BG/Blended attention sharing")
    p.add_argument("--no-blend-cross", action="store_true",
                   help="disable cross-attention blending")
    p.add_argument("--out-dir", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="layerfusion", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a FG/BG/blended triplet")
    _add_generation_flags(g)
    g.add_argument("--d", type=_positive_float("d"), default=10.0,
                   help="decision boundary coefficient (default 10)")
    g.set_defaults(func=cmd_generate)

    a = sub.add_parser("analyze", help="derive priors and masks from dumped attention maps")
    a.add_argument("--manifest", required=True, help="path to manifest.json")
    a.add_argument("--layer", required=True, help="cross-attention layer id")
    a.add_argument("--step", type=int, help="sampler step index")
    a.add_argument("--t-frac", type=float,
                   help="fraction of total noise remaining (0.8 = the early visualization point)")
    a.add_argument("--eos-index", type=int, help="override the manifest's EOS index")
    a.add_argument("--out-dir", required=True)
    a.set_defaults(func=cmd_analyze)

    b = sub.add_parser("ablate", help="sweep the decision boundary coefficient")
    _add_generation_flags(b)
    b.add_argument("--d-list", type=_d_list, required=True,
                   help="comma-separated coefficients, e.g. 1,10,100")
    b.set_defaults(func=cmd_ablate)

    c = sub.add_parser("composite", help="spatially edit a foreground and alpha-blend it")
    c.add_argument("--fg", required=True, help="foreground PAM (rgba)")
    c.add_argument("--bg", required=True, help="background PPM (rgb)")
    c.add_argument("--translate", type=_float_pair("translate"), default=(0.0, 0.0),
                   help="dx,dy in pixels")
    c.add_argument("--scale", type=_positive_float("scale"), default=1.0)
    c.add_argument("--anchor", type=_float_pair("anchor"), default=(0.0, 0.0))
    c.add_argument("--out", required=True, help="output PPM path")
    c.set_defaults(func=cmd_composite)
    return parser


def _emit_checksums(base: Path, files: Sequence[Path]) -> None:
    entries = []
    rels = sorted(
        (p.relative_to(base).as_posix(), p) for p in files if p.suffix != ".png"
    )
    for rel, p in rels:
        digest = hashlib.sha256(p.read_bytes()).hexdigest()
        entries.append(f"{digest}  {rel}")
        print(f"{digest}  {rel}")
    aggregate = hashlib.sha256(("\n".join(entries) + "\n").encode("ascii")).hexdigest()
    print(f"checksum {aggregate}")


def _blend_from_args(args, d: Optional[float] = None) -> BlendConfig:
    return BlendConfig(
        d=d if d is not None else getattr(args, "d", 10.0),
        blend_cross_attention=not args.no_blend_cross,
        blend_self_attention=args.blend_self,
        share_attention=not args.no_share,
    )


def _sampler_from_args(args) -> SamplerConfig:
    return SamplerConfig(steps=args.steps, seed=args.seed, guidance_scale=args.guidance)


def cmd_generate(args) -> int:
    out = Path(args.out_dir)
    files, triplet = run_generate(
        out, args.fg_prompt, args.bg_prompt, _sampler_from_args(args),
        _blend_from_args(args), weight_seed=args.weight_seed,
    )
    from .report import save_triplet_contact_sheet

    save_triplet_contact_sheet(
        out / "triplet.png", triplet.fg_rgba, triplet.bg_rgb, triplet.blended_rgb
    )
    _emit_checksums(out, files)
    return 0


def cmd_analyze(args) -> int:
    from .analyze import analyze_dumps

    written = analyze_dumps(
        args.manifest, args.layer, args.step, args.out_dir,
        eos_index=args.eos_index, t_frac=args.t_frac,
    )
    _emit_checksums(Path(args.out_dir), list(written.values()))
    return 0


def cmd_ablate(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    workers = max(1, int(os.environ.get("LAYERFUSION_THREADS", "1")))
    sampler = _sampler_from_args(args)

    def one(d: float):
        files, triplet = run_generate(
            out / f"d_{d:g}", args.fg_prompt, args.bg_prompt, sampler,
            _blend_from_args(args, d=d), weight_seed=args.weight_seed,
        )
        err = binarization_error([sn.masks for sn in triplet.mask_snapshots])
        cov = float((triplet.fg_rgba[:, :, 3] > 0.5).mean())
        return files, err, cov

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, args.d_list))
    else:
        results = [one(d) for d in args.d_list]

    all_files: list[Path] = []
    rows = []
    for d, (files, err, cov) in zip(args.d_list, results):
        all_files += files
        rows.append((d, err, cov))

    report = out / "report.csv"
    with open(report, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["d", "binarization_error", "alpha_coverage"])
        for d, err, cov in rows:
            writer.writerow([f"{d:g}", f"{err:.9g}", f"{cov:.9g}"])
    all_files.append(report)

    from .report import save_ablation_curve

    save_ablation_curve(out / "report.png", [r[0] for r in rows], [r[1] for r in rows])
    _emit_checksums(out, all_files)
    return 0


def cmd_composite(args) -> int:
    rgba = read_pam(args.fg)
    bg = read_ppm(args.bg)
    fg = RgbaImage(rgb=rgba[:, :, :3], alpha=rgba[:, :, 3], premultiplied=False)
    edit = SpatialEdit(translate=args.translate, scale=args.scale, anchor=args.anchor)
    edited = apply_edit(fg, edit, canvas=(bg.shape[1], bg.shape[0]))
    result = alpha_blend(edited, bg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_ppm(out, result)
    _emit_checksums(out.parent, [out])
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: divergence: {exc}", file=sys.stderr)
        return 3
    except (FormatError, ManifestError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
