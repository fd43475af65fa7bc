"""Normalized coordinate types and the geometric primitives shared by every
other module.

All coordinates are normalized to [0, 1] relative to image width/height.
Pixel space exists only at ingestion and rendering boundaries: `normalize`
brings raw pixel annotations in, `denormalize` takes prompts back out for
drawing. Masks are plain boolean rasters; RLE support covers uncompressed
column-major run lengths plus polygon rasterization (even-odd fill at pixel
centers).

Every type here is an immutable value, safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GeometryError(ValueError):
    """Base class for invalid geometric values."""


class OutOfBounds(GeometryError):
    """Pixel coordinate lies outside its image."""


class BadImage(GeometryError):
    """Image dimensions are unusable (zero or negative)."""


class Degenerate(GeometryError):
    """Shape has collapsed to zero area where area is required."""


class MalformedRle(GeometryError):
    """Run-length counts do not describe the declared raster size."""


class EmptyMask(GeometryError):
    """Mask has no set bits where at least one is required."""


def _check_unit(value: float, name: str) -> None:
    if not 0.0 <= value <= 1.0:
        raise OutOfBounds(f"{name}={value!r} outside [0, 1]")


@dataclass(frozen=True)
class PointPrompt:
    """A single referred pixel location, normalized to [0, 1]."""

    x: float
    y: float

    def __post_init__(self) -> None:
        _check_unit(self.x, "x")
        _check_unit(self.y, "y")

    @property
    def kind(self) -> str:
        return "point"

    def to_json(self) -> dict:
        return {"kind": "point", "x": self.x, "y": self.y}


@dataclass(frozen=True)
class BoxPrompt:
    """An axis-aligned rectangle given by normalized top-left and
    bottom-right corners."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        for name in ("x1", "y1", "x2", "y2"):
            _check_unit(getattr(self, name), name)
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise Degenerate(
                f"box corners not ordered: ({self.x1}, {self.y1}) to ({self.x2}, {self.y2})"
            )

    @property
    def kind(self) -> str:
        return "box"

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)

    @property
    def area(self) -> float:
        return self.width * self.height

    def to_json(self) -> dict:
        return {"kind": "box", "x1": self.x1, "y1": self.y1, "x2": self.x2, "y2": self.y2}


@dataclass(frozen=True)
class FreeFormPrompt:
    """A user-drawn closed polygon with at least three normalized vertices.

    Open strokes are modeled as closed polygons too; consumers reduce them
    to an enclosing rectangle either way. Degenerate means a zero-area
    bounding rectangle (all x equal or all y equal); diagonal strokes are
    accepted since their enclosing rectangle still has area.
    """

    vertices: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        verts = tuple((float(x), float(y)) for x, y in self.vertices)
        object.__setattr__(self, "vertices", verts)
        if len(verts) < 3:
            raise Degenerate(f"free-form prompt needs >= 3 vertices, got {len(verts)}")
        for x, y in verts:
            _check_unit(x, "vertex x")
            _check_unit(y, "vertex y")
        xs = {x for x, _ in verts}
        ys = {y for _, y in verts}
        if len(xs) == 1 or len(ys) == 1:
            raise Degenerate("free-form vertices span a zero-area rectangle")

    @property
    def kind(self) -> str:
        return "free_form"

    def to_json(self) -> dict:
        return {"kind": "free_form", "vertices": [[x, y] for x, y in self.vertices]}


VisualPrompt = PointPrompt | BoxPrompt | FreeFormPrompt


def prompt_from_json(obj: dict) -> VisualPrompt:
    """Inverse of the prompts' ``to_json``; raises GeometryError on junk."""
    kind = obj.get("kind")
    if kind == "point":
        return PointPrompt(obj["x"], obj["y"])
    if kind == "box":
        return BoxPrompt(obj["x1"], obj["y1"], obj["x2"], obj["y2"])
    if kind == "free_form":
        return FreeFormPrompt(tuple((v[0], v[1]) for v in obj["vertices"]))
    raise GeometryError(f"unknown prompt kind {kind!r}")


@dataclass(frozen=True)
class VisualPromptSet:
    """An ordered group of prompts forming one query; order defines mark ids."""

    prompts: tuple[VisualPrompt, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "prompts", tuple(self.prompts))
        if len(self.prompts) < 1:
            raise GeometryError("prompt set must hold at least one prompt")

    def __len__(self) -> int:
        return len(self.prompts)

    def __iter__(self):
        return iter(self.prompts)

    def __getitem__(self, i: int) -> VisualPrompt:
        return self.prompts[i]

    def to_json(self) -> list[dict]:
        return [p.to_json() for p in self.prompts]


@dataclass(frozen=True)
class BinaryMask:
    """A boolean raster of shape (height, width).

    Bits are immutable; the backing array has its write flag cleared.
    """

    width: int
    height: int
    bits: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        arr = np.asarray(self.bits, dtype=bool)
        if arr.shape != (self.height, self.width):
            raise MalformedRle(
                f"mask bits shape {arr.shape} != (height={self.height}, width={self.width})"
            )
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "bits", arr)

    def count_set(self) -> int:
        return int(self.bits.sum())

    def contains(self, p: PointPrompt) -> bool:
        """True if the point rasterizes onto a set pixel."""
        col = min(int(p.x * self.width), self.width - 1)
        row = min(int(p.y * self.height), self.height - 1)
        return bool(self.bits[row, col])

    def tight_box(self) -> BoxPrompt:
        """Smallest normalized box covering every set pixel."""
        if self.count_set() == 0:
            raise EmptyMask("cannot take the tight box of an empty mask")
        rows = np.any(self.bits, axis=1)
        cols = np.any(self.bits, axis=0)
        r0, r1 = int(np.argmax(rows)), int(self.height - np.argmax(rows[::-1]))
        c0, c1 = int(np.argmax(cols)), int(self.width - np.argmax(cols[::-1]))
        return BoxPrompt(c0 / self.width, r0 / self.height, c1 / self.width, r1 / self.height)


# --- pixel <-> normalized conversion -----------------------------------------


def normalize(raw_coords: tuple | list, image_size: tuple[int, int], kind: str) -> VisualPrompt:
    """Convert pixel coordinates into a normalized prompt.

    ``image_size`` is (width, height) in pixels. ``raw_coords`` holds pixel
    values: (x, y) for a point, (x1, y1, x2, y2) for a box, or a vertex list
    for a free-form shape.
    """
    w, h = image_size
    if w <= 0 or h <= 0:
        raise BadImage(f"image size {image_size} has a non-positive dimension")

    def _norm(x: float, y: float) -> tuple[float, float]:
        if not (0 <= x <= w and 0 <= y <= h):
            raise OutOfBounds(f"pixel ({x}, {y}) outside {w}x{h} image")
        return x / w, y / h

    if kind == "point":
        x, y = raw_coords
        return PointPrompt(*_norm(x, y))
    if kind == "box":
        x1, y1, x2, y2 = raw_coords
        nx1, ny1 = _norm(x1, y1)
        nx2, ny2 = _norm(x2, y2)
        return BoxPrompt(nx1, ny1, nx2, ny2)
    if kind == "free_form":
        return FreeFormPrompt(tuple(_norm(x, y) for x, y in raw_coords))
    raise GeometryError(f"unknown prompt kind {kind!r}")


def denormalize(prompt: VisualPrompt, image_size: tuple[int, int]) -> tuple:
    """Back to pixel coordinates; inverse of `normalize` up to quantization."""
    w, h = image_size
    if w <= 0 or h <= 0:
        raise BadImage(f"image size {image_size} has a non-positive dimension")
    if isinstance(prompt, PointPrompt):
        return (prompt.x * w, prompt.y * h)
    if isinstance(prompt, BoxPrompt):
        return (prompt.x1 * w, prompt.y1 * h, prompt.x2 * w, prompt.y2 * h)
    return tuple((x * w, y * h) for x, y in prompt.vertices)


# --- derived shapes -----------------------------------------------------------


def enclosing_box(p: FreeFormPrompt) -> BoxPrompt:
    """Axis-aligned minimum bounding rectangle of a free-form prompt.

    Collinear-but-spread vertices are fine as long as the rectangle keeps
    nonzero area; a zero-width or zero-height hull raises Degenerate.
    """
    xs = [x for x, _ in p.vertices]
    ys = [y for _, y in p.vertices]
    x1, x2 = min(xs), max(xs)
    y1, y2 = min(ys), max(ys)
    if x1 >= x2 or y1 >= y2:
        raise Degenerate("free-form prompt has a zero-area bounding rectangle")
    return BoxPrompt(x1, y1, x2, y2)


def box_iou(a: BoxPrompt, b: BoxPrompt) -> float:
    """Area intersection-over-union of two boxes, in [0, 1]."""
    ix1, iy1 = max(a.x1, b.x1), max(a.y1, b.y1)
    ix2, iy2 = min(a.x2, b.x2), min(a.y2, b.y2)
    iw, ih = max(0.0, ix2 - ix1), max(0.0, iy2 - iy1)
    inter = iw * ih
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


# --- run-length masks ---------------------------------------------------------


def decode_rle(counts: list[int], size: tuple[int, int]) -> BinaryMask:
    """Decode uncompressed column-major RLE into a BinaryMask.

    ``size`` is (height, width). Counts alternate background/foreground runs
    starting with background, laid out down columns (the de-facto annotation
    convention).
    """
    h, w = size
    if h <= 0 or w <= 0:
        raise MalformedRle(f"mask size {size} has a non-positive dimension")
    counts = [int(c) for c in counts]
    if any(c < 0 for c in counts):
        raise MalformedRle("negative run length")
    total = sum(counts)
    if total != h * w:
        raise MalformedRle(f"run lengths sum to {total}, expected {h * w}")
    flat = np.zeros(h * w, dtype=bool)
    pos = 0
    value = False
    for c in counts:
        flat[pos : pos + c] = value
        pos += c
        value = not value
    # column-major: index = col * h + row
    bits = flat.reshape((w, h)).T
    return BinaryMask(width=w, height=h, bits=bits)


def encode_rle(mask: BinaryMask) -> list[int]:
    """Canonical column-major counts; inverse of `decode_rle`.

    Canonical form starts with a (possibly zero-length) background run and
    has no other zero runs.
    """
    flat = mask.bits.T.reshape(-1)
    counts: list[int] = []
    value = False
    run = 0
    for bit in flat:
        if bool(bit) == value:
            run += 1
        else:
            counts.append(run)
            value = not value
            run = 1
    counts.append(run)
    return counts


def rasterize_polygon(vertices_px: list[tuple[float, float]], size: tuple[int, int]) -> BinaryMask:
    """Fill a pixel-space polygon into a mask using even-odd fill at pixel
    centers. Deterministic and independent of vertex order/orientation."""
    h, w = size
    if h <= 0 or w <= 0:
        raise MalformedRle(f"mask size {size} has a non-positive dimension")
    n = len(vertices_px)
    if n < 3:
        raise Degenerate("polygon needs >= 3 vertices")
    xs = np.array([v[0] for v in vertices_px], dtype=np.float64)
    ys = np.array([v[1] for v in vertices_px], dtype=np.float64)
    bits = np.zeros((h, w), dtype=bool)
    for row in range(h):
        py = row + 0.5
        # gather x positions where polygon edges cross this scanline
        crossings: list[float] = []
        for i in range(n):
            x0, y0 = xs[i], ys[i]
            x1, y1 = xs[(i + 1) % n], ys[(i + 1) % n]
            if (y0 <= py) != (y1 <= py):
                t = (py - y0) / (y1 - y0)
                crossings.append(x0 + t * (x1 - x0))
        crossings.sort()
        for j in range(0, len(crossings) - 1, 2):
            c0 = int(np.ceil(crossings[j] - 0.5))
            c1 = int(np.floor(crossings[j + 1] - 0.5))
            if c1 >= c0:
                bits[row, max(c0, 0) : min(c1, w - 1) + 1] = True
    return BinaryMask(width=w, height=h, bits=bits)
