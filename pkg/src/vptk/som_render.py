"""Deterministic set-of-marks overlay rendering.

Draws numbered marks (outlined boxes, dots, or polygon outlines) onto an
image, each with an id chip: white digits from an embedded 5x7 bitmap
font on a black rectangle. No system fonts, no anti-aliasing, pure pixel
writes into a numpy buffer, so identical inputs produce byte-identical
PNGs on every platform.

Mark numbering is 1-based and follows prompt order; the construct
templates and the curation UI both rely on that contract.

The alpha-blend mode fills prompt regions over the image at a given
opacity instead of outlining them (the overlay-only baseline some
training ablations use; 0.5 is the conventional value).
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass, replace

import numpy as np
from PIL import Image

from .geometry import (
    BoxPrompt,
    FreeFormPrompt,
    PointPrompt,
    VisualPromptSet,
    enclosing_box,
)


class BadImage(ValueError):
    """Image missing or undecodable."""


class ImageTooSmall(ValueError):
    """Image cannot fit even one id chip."""


class BadAlpha(ValueError):
    """Alpha outside (0, 1]."""


# 5x7 digit glyphs, row-major, '1' = lit pixel
_DIGITS = {
    "0": ("01110", "10001", "10011", "10101", "11001", "10001", "01110"),
    "1": ("00100", "01100", "00100", "00100", "00100", "00100", "01110"),
    "2": ("01110", "10001", "00001", "00010", "00100", "01000", "11111"),
    "3": ("11111", "00010", "00100", "00010", "00001", "10001", "01110"),
    "4": ("00010", "00110", "01010", "10010", "11111", "00010", "00010"),
    "5": ("11111", "10000", "11110", "00001", "00001", "10001", "01110"),
    "6": ("00110", "01000", "10000", "11110", "10001", "10001", "01110"),
    "7": ("11111", "00001", "00010", "00100", "01000", "01000", "01000"),
    "8": ("01110", "10001", "10001", "01110", "10001", "10001", "01110"),
    "9": ("01110", "10001", "10001", "01111", "00001", "00010", "01100"),
}
_GLYPH_W, _GLYPH_H = 5, 7


@dataclass(frozen=True)
class MarkStyle:
    """How one mark is drawn; defaults follow the green-mark convention,
    OCR-style text regions use red polygon outlines instead."""

    shape: str = "box-outline"  # point-dot | box-outline | polygon-outline
    stroke_rgb: tuple[int, int, int] = (0, 255, 0)
    stroke_width: int = 2
    dot_radius: int = 4
    chip_scale: int = 2  # nearest-neighbor scale of the 5x7 font

    def __post_init__(self) -> None:
        if self.shape not in ("point-dot", "box-outline", "polygon-outline"):
            raise ValueError(f"unknown mark shape {self.shape!r}")
        if self.stroke_width < 1 or self.chip_scale < 1:
            raise ValueError("stroke_width and chip_scale must be >= 1")


OCR_STYLE = MarkStyle(shape="polygon-outline", stroke_rgb=(255, 0, 0))


@dataclass(frozen=True)
class RenderedOverlay:
    """PNG bytes plus where each mark's id chip landed."""

    png_bytes: bytes
    chip_rects: tuple[tuple[int, int, int, int], ...]  # (x0, y0, x1, y1) exclusive
    content_hash: str


def _load_rgb(image_path: str) -> np.ndarray:
    try:
        with Image.open(image_path) as img:
            return np.array(img.convert("RGB"))
    except FileNotFoundError as exc:
        raise BadImage(f"image not found: {image_path}") from exc
    except Exception as exc:  # PIL raises various decode errors
        raise BadImage(f"cannot decode {image_path}: {exc}") from exc


def _encode_png(pixels: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(pixels, mode="RGB").save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def _chip_size(mark_id: int, scale: int) -> tuple[int, int]:
    digits = str(mark_id)
    pad = scale  # 1 font-pixel border
    w = len(digits) * _GLYPH_W * scale + (len(digits) - 1) * scale + 2 * pad
    h = _GLYPH_H * scale + 2 * pad
    return w, h


def _draw_chip(pixels: np.ndarray, x0: int, y0: int, mark_id: int, scale: int) -> tuple[int, int, int, int]:
    digits = str(mark_id)
    w, h = _chip_size(mark_id, scale)
    img_h, img_w = pixels.shape[:2]
    # shift fully inside the image
    x0 = max(0, min(x0, img_w - w))
    y0 = max(0, min(y0, img_h - h))
    pixels[y0 : y0 + h, x0 : x0 + w] = (0, 0, 0)
    pad = scale
    cx = x0 + pad
    for d in digits:
        glyph = _DIGITS[d]
        for gy in range(_GLYPH_H):
            for gx in range(_GLYPH_W):
                if glyph[gy][gx] == "1":
                    ys = y0 + pad + gy * scale
                    xs = cx + gx * scale
                    pixels[ys : ys + scale, xs : xs + scale] = (255, 255, 255)
        cx += (_GLYPH_W + 1) * scale
    return (x0, y0, x0 + w, y0 + h)


def _draw_box_outline(pixels: np.ndarray, box: BoxPrompt, rgb, width: int) -> None:
    img_h, img_w = pixels.shape[:2]
    x0 = int(round(box.x1 * img_w))
    y0 = int(round(box.y1 * img_h))
    x1 = int(round(box.x2 * img_w))
    y1 = int(round(box.y2 * img_h))
    x0, x1 = max(0, x0), min(img_w, x1)
    y0, y1 = max(0, y0), min(img_h, y1)
    pixels[y0 : min(y0 + width, y1), x0:x1] = rgb
    pixels[max(y1 - width, y0) : y1, x0:x1] = rgb
    pixels[y0:y1, x0 : min(x0 + width, x1)] = rgb
    pixels[y0:y1, max(x1 - width, x0) : x1] = rgb


def _draw_dot(pixels: np.ndarray, point: PointPrompt, rgb, radius: int) -> None:
    img_h, img_w = pixels.shape[:2]
    cx = int(round(point.x * img_w))
    cy = int(round(point.y * img_h))
    y_lo, y_hi = max(0, cy - radius), min(img_h, cy + radius + 1)
    x_lo, x_hi = max(0, cx - radius), min(img_w, cx + radius + 1)
    for y in range(y_lo, y_hi):
        for x in range(x_lo, x_hi):
            if (x - cx) ** 2 + (y - cy) ** 2 <= radius * radius:
                pixels[y, x] = rgb


def _draw_segment(pixels: np.ndarray, p0, p1, rgb, width: int) -> None:
    img_h, img_w = pixels.shape[:2]
    x0, y0 = p0
    x1, y1 = p1
    steps = int(max(abs(x1 - x0), abs(y1 - y0))) + 1
    half = width / 2.0
    for i in range(steps + 1):
        t = i / steps
        x = x0 + t * (x1 - x0)
        y = y0 + t * (y1 - y0)
        xa, xb = int(np.floor(x - half + 0.5)), int(np.ceil(x + half - 0.5))
        ya, yb = int(np.floor(y - half + 0.5)), int(np.ceil(y + half - 0.5))
        pixels[max(0, ya) : min(img_h, yb + 1), max(0, xa) : min(img_w, xb + 1)] = rgb


def _mark_anchor(prompt, style: MarkStyle, size: tuple[int, int]) -> tuple[int, int]:
    """Chip anchor in pixels: a mark's top-left; dot chips sit to the right."""
    img_w, img_h = size
    if isinstance(prompt, PointPrompt):
        cx = int(round(prompt.x * img_w))
        cy = int(round(prompt.y * img_h))
        return cx + style.dot_radius + 6, cy - style.dot_radius
    box = enclosing_box(prompt) if isinstance(prompt, FreeFormPrompt) else prompt
    return int(round(box.x1 * img_w)), int(round(box.y1 * img_h))


def render_marks(
    image_path: str,
    prompts: VisualPromptSet,
    styles: MarkStyle | list[MarkStyle] | None = None,
) -> RenderedOverlay:
    """Draw numbered marks in prompt order (mark k = prompt k, 1-based).

    ``styles`` may be one shared style or one per prompt. Chips anchor at
    each mark's top-left (or beside the dot for points) and are shifted
    inward when they would overflow the image.
    """
    pixels = _load_rgb(image_path)
    img_h, img_w = pixels.shape[:2]
    n = len(prompts)
    if isinstance(styles, MarkStyle) or styles is None:
        styles = [styles or MarkStyle()] * n
    if len(styles) != n:
        raise ValueError(f"{len(styles)} styles for {n} prompts")
    widest_chip, tallest_chip = _chip_size(n, max(s.chip_scale for s in styles))
    if img_w < widest_chip or img_h < tallest_chip:
        raise ImageTooSmall(f"{img_w}x{img_h} image cannot fit a {widest_chip}x{tallest_chip} chip")

    chip_rects: list[tuple[int, int, int, int]] = []
    for k, (prompt, style) in enumerate(zip(prompts, styles), start=1):
        if style.shape == "point-dot" or isinstance(prompt, PointPrompt):
            if isinstance(prompt, PointPrompt):
                _draw_dot(pixels, prompt, style.stroke_rgb, style.dot_radius)
            else:
                box = enclosing_box(prompt) if isinstance(prompt, FreeFormPrompt) else prompt
                cx, cy = box.center
                _draw_dot(pixels, PointPrompt(cx, cy), style.stroke_rgb, style.dot_radius)
        elif style.shape == "polygon-outline" and isinstance(prompt, FreeFormPrompt):
            pts = [(x * img_w, y * img_h) for x, y in prompt.vertices]
            for i in range(len(pts)):
                _draw_segment(pixels, pts[i], pts[(i + 1) % len(pts)], style.stroke_rgb, style.stroke_width)
        else:
            box = enclosing_box(prompt) if isinstance(prompt, FreeFormPrompt) else prompt
            _draw_box_outline(pixels, box, style.stroke_rgb, style.stroke_width)
        ax, ay = _mark_anchor(prompt, style, (img_w, img_h))
        chip_rects.append(_draw_chip(pixels, ax, ay, k, style.chip_scale))

    png = _encode_png(pixels)
    return RenderedOverlay(
        png_bytes=png,
        chip_rects=tuple(chip_rects),
        content_hash=hashlib.sha256(png).hexdigest(),
    )


def render_alpha_blend(
    image_path: str,
    prompts: VisualPromptSet,
    alpha: float = 0.5,
    fill_rgb: tuple[int, int, int] = (0, 255, 0),
) -> RenderedOverlay:
    """Blend filled prompt regions over the image: out = (1-a)*img + a*fill.

    Point prompts fill a dot-sized disk, boxes their rectangle, free-form
    prompts their enclosing rectangle. alpha=1 paints solid fill.
    """
    if not 0.0 < alpha <= 1.0:
        raise BadAlpha(f"alpha {alpha} outside (0, 1]")
    pixels = _load_rgb(image_path)
    img_h, img_w = pixels.shape[:2]
    region = np.zeros((img_h, img_w), dtype=bool)
    default = MarkStyle()
    for prompt in prompts:
        if isinstance(prompt, PointPrompt):
            scratch = np.zeros_like(pixels)
            _draw_dot(scratch, prompt, (1, 1, 1), default.dot_radius)
            region |= scratch[:, :, 0] > 0
        else:
            box = enclosing_box(prompt) if isinstance(prompt, FreeFormPrompt) else prompt
            x0, y0 = int(round(box.x1 * img_w)), int(round(box.y1 * img_h))
            x1, y1 = int(round(box.x2 * img_w)), int(round(box.y2 * img_h))
            region[max(0, y0) : min(img_h, y1), max(0, x0) : min(img_w, x1)] = True
    blended = pixels.astype(np.float64)
    fill = np.array(fill_rgb, dtype=np.float64)
    blended[region] = (1.0 - alpha) * blended[region] + alpha * fill
    out = np.rint(blended).astype(np.uint8)
    png = _encode_png(out)
    return RenderedOverlay(
        png_bytes=png,
        chip_rects=(),
        content_hash=hashlib.sha256(png).hexdigest(),
    )


def style_for_domain(domain: str, prompt_kind: str = "box") -> MarkStyle:
    """Default mark style per image domain.

    Text-spotting regions use red polygon outlines; point-kind prompts use
    green dots; everything else gets the green box outline.
    """
    if domain == "ocr":
        return OCR_STYLE
    if prompt_kind == "point":
        return MarkStyle(shape="point-dot")
    return MarkStyle()
