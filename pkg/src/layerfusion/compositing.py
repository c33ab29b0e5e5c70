"""Alpha compositing and spatial edits over generated layers.

Straight (non-premultiplied) alpha is the canonical in-memory form;
premultiplied images exist only at explicit conversion boundaries. Edits
resample bilinearly under an inverse mapping, consistent with the mask
resizing convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

UNPREMULTIPLY_EPS = 1e-4


@dataclass
class RgbaImage:
    """rgb is (H, W, 3) and alpha (H, W), both float in [0, 1]."""

    rgb: np.ndarray
    alpha: np.ndarray
    premultiplied: bool = False

    def __post_init__(self):
        if self.rgb.ndim != 3 or self.rgb.shape[2] != 3:
            raise ValueError(f"rgb must be (H, W, 3), got {self.rgb.shape}")
        if self.alpha.shape != self.rgb.shape[:2]:
            raise ValueError(f"alpha shape {self.alpha.shape} != {self.rgb.shape[:2]}")

    @property
    def width(self) -> int:
        return self.rgb.shape[1]

    @property
    def height(self) -> int:
        return self.rgb.shape[0]


@dataclass(frozen=True)
class SpatialEdit:
    """Scale about an anchor, then translate, in pixels."""

    translate: tuple[float, float] = (0.0, 0.0)
    scale: float = 1.0
    anchor: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"scale must be > 0, got {self.scale}")


def alpha_blend(fg: RgbaImage, bg: np.ndarray) -> np.ndarray:
    """Straight-alpha over operator: fg.rgb * a + bg * (1 - a)."""
    if fg.premultiplied:
        raise ValueError("alpha_blend expects straight alpha; unpremultiply first")
    if bg.shape != fg.rgb.shape:
        raise ValueError(f"background shape {bg.shape} != foreground {fg.rgb.shape}")
    a = fg.alpha[:, :, None].astype(np.float64)
    out = fg.rgb.astype(np.float64) * a + bg.astype(np.float64) * (1.0 - a)
    return out.astype(np.float32)


def premultiply(fg: RgbaImage) -> RgbaImage:
    if fg.premultiplied:
        raise ValueError("image is already premultiplied")
    rgb = (fg.rgb.astype(np.float64) * fg.alpha[:, :, None]).astype(np.float32)
    return RgbaImage(rgb=rgb, alpha=fg.alpha.copy(), premultiplied=True)


def unpremultiply(fg: RgbaImage) -> RgbaImage:
    """Inverse of premultiply; pixels with alpha <= 1e-4 get rgb = 0."""
    if not fg.premultiplied:
        raise ValueError("image is not premultiplied")
    a = fg.alpha.astype(np.float64)
    safe = a > UNPREMULTIPLY_EPS
    rgb = np.zeros_like(fg.rgb, dtype=np.float64)
    rgb[safe] = fg.rgb.astype(np.float64)[safe] / a[safe][:, None]
    return RgbaImage(rgb=rgb.astype(np.float32), alpha=fg.alpha.copy(), premultiplied=False)


def apply_edit(fg: RgbaImage, edit: SpatialEdit, canvas: tuple[int, int]) -> RgbaImage:
    """Resample an RGBA layer under scale-about-anchor plus translation.

    canvas is (width, height). Output pixel (x, y) samples the source at

        u = ax + (x - ax - dx) / scale,   v = ay + (y - ay - dy) / scale

    with bilinear tent weights; samples outside the source get alpha 0.
    The identity edit reproduces the layer bit-exactly.
    """
    if fg.premultiplied:
        raise ValueError("apply_edit expects straight alpha")
    cw, ch = canvas
    dx, dy = edit.translate
    ax, ay = edit.anchor
    xs = np.arange(cw, dtype=np.float64)
    ys = np.arange(ch, dtype=np.float64)
    u = ax + (xs - ax - dx) / edit.scale
    v = ay + (ys - ay - dy) / edit.scale

    src_h, src_w = fg.height, fg.width
    uu, vv = np.meshgrid(u, v)
    inside = (uu > -1.0) & (uu < src_w) & (vv > -1.0) & (vv < src_h)

    u0 = np.floor(uu).astype(int)
    v0 = np.floor(vv).astype(int)
    fu = uu - u0
    fv = vv - v0

    def tap(img: np.ndarray, yi: np.ndarray, xi: np.ndarray) -> np.ndarray:
        # zero padding outside the source extent
        ok = (yi >= 0) & (yi < src_h) & (xi >= 0) & (xi < src_w)
        yi_c = np.clip(yi, 0, src_h - 1)
        xi_c = np.clip(xi, 0, src_w - 1)
        vals = img[yi_c, xi_c].astype(np.float64)
        if vals.ndim == 3:
            vals[~ok] = 0.0
        else:
            vals = np.where(ok, vals, 0.0)
        return vals

    def sample(img: np.ndarray) -> np.ndarray:
        w00 = (1 - fu) * (1 - fv)
        w01 = fu * (1 - fv)
        w10 = (1 - fu) * fv
        w11 = fu * fv
        if img.ndim == 3:
            w00, w01, w10, w11 = (w[:, :, None] for w in (w00, w01, w10, w11))
        out = (
            tap(img, v0, u0) * w00
            + tap(img, v0, u0 + 1) * w01
            + tap(img, v0 + 1, u0) * w10
            + tap(img, v0 + 1, u0 + 1) * w11
        )
        return out

    rgb = sample(fg.rgb)
    alpha = sample(fg.alpha)
    alpha = np.where(inside, alpha, 0.0)
    rgb = np.where(inside[:, :, None], rgb, 0.0)
    return RgbaImage(
        rgb=np.clip(rgb, 0.0, 1.0).astype(np.float32),
        alpha=np.clip(alpha, 0.0, 1.0).astype(np.float32),
        premultiplied=False,
    )
