"""Noise-based simulation of free-form prompt inputs and alignment-stage
point sampling.

Box prompts get Gaussian jitter proportional to their size, so training
boxes may exceed or only partially cover their target, approximating the
enclosing rectangle of a hand-drawn shape. Point prompts are sampled from
target masks or per-pixel label maps.

All randomness flows through DeterministicRng, a pinned SplitMix64 stream
with Box-Muller Gaussians, so every draw sequence is bit-reproducible from
its seed on any platform (and re-implementable in any language for golden
tests). Pinned conventions:

  * uniforms take the top 53 bits of each 64-bit output: u = (z >> 11) / 2^53
  * Gaussians come in Box-Muller pairs from two successive uniforms u1, u2:
      r  = sqrt(-2 ln(1 - u1))
      z0 = r cos(2 pi u2),  z1 = r sin(2 pi u2)
    z0 is returned first, z1 on the next call.
  * bounded ints are next_u64() % n.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import BinaryMask, BoxPrompt, EmptyMask, PointPrompt

_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1


class NoSampleablePixels(ValueError):
    """Every pixel of a label map is ignore-labelled."""


@dataclass
class AugmentConfig:
    """Knobs for box jitter.

    sigma_scale multiplies the box's own width/height to set the noise
    scale; min_box_side floors the jittered sides in normalized units.
    """

    sigma_scale: float = 0.1
    min_box_side: float = 0.01

    def __post_init__(self) -> None:
        if self.sigma_scale < 0:
            raise ValueError("sigma_scale must be >= 0")
        if not 0 < self.min_box_side < 1:
            raise ValueError("min_box_side must lie in (0, 1)")


class DeterministicRng:
    """SplitMix64 stream with Box-Muller Gaussians; see module docstring."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64
        self._spare_gauss: float | None = None

    def next_u64(self) -> int:
        self._state = (self._state + _SPLITMIX_GAMMA) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return (z ^ (z >> 31)) & _MASK64

    def next_uniform(self) -> float:
        """Uniform in [0, 1) with 53-bit resolution."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def next_gauss(self) -> float:
        if self._spare_gauss is not None:
            value, self._spare_gauss = self._spare_gauss, None
            return value
        u1 = self.next_uniform()
        u2 = self.next_uniform()
        r = math.sqrt(-2.0 * math.log(1.0 - u1))
        theta = 2.0 * math.pi * u2
        self._spare_gauss = r * math.sin(theta)
        return r * math.cos(theta)

    def next_below(self, n: int) -> int:
        """Bounded int in [0, n); modulo of the raw 64-bit output."""
        if n <= 0:
            raise ValueError("bound must be positive")
        return self.next_u64() % n


def jitter_box(box: BoxPrompt, cfg: AugmentConfig, seed: int) -> BoxPrompt:
    """Apply size-proportional Gaussian noise to a box.

    Draw order is fixed as dx, dy, dw, dh (two Box-Muller pairs). The center
    shifts by N(0, (sigma*w)^2) x N(0, (sigma*h)^2); each side scales by
    (1 + N(0, sigma^2)). Sides are floored at min_box_side (never above the
    input's own side, so sigma=0 is exactly the identity) and the center is
    clamped so the result stays inside [0, 1] with its size intact.
    """
    if cfg.sigma_scale == 0.0:
        return box  # exact identity, not even center/size round-tripping
    rng = DeterministicRng(seed)
    dx = rng.next_gauss()
    dy = rng.next_gauss()
    dw = rng.next_gauss()
    dh = rng.next_gauss()

    s = cfg.sigma_scale
    w, h = box.width, box.height
    cx, cy = box.center
    cx += s * w * dx
    cy += s * h * dy
    new_w = w * (1.0 + s * dw)
    new_h = h * (1.0 + s * dh)

    new_w = max(new_w, min(cfg.min_box_side, w))
    new_h = max(new_h, min(cfg.min_box_side, h))
    new_w = min(new_w, 1.0)
    new_h = min(new_h, 1.0)

    cx = min(max(cx, new_w / 2.0), 1.0 - new_w / 2.0)
    cy = min(max(cy, new_h / 2.0), 1.0 - new_h / 2.0)
    return BoxPrompt(cx - new_w / 2.0, cy - new_h / 2.0, cx + new_w / 2.0, cy + new_h / 2.0)


def sample_mask_points(mask: BinaryMask, k: int, seed: int) -> list[PointPrompt]:
    """Sample k points uniformly with replacement from a mask's set pixels.

    Each point is the normalized center of a set pixel. Set pixels are
    enumerated in row-major order before indexing, so the draw sequence is
    pinned by (mask, k, seed).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    rows, cols = np.nonzero(mask.bits)
    if len(rows) == 0:
        raise EmptyMask("cannot sample points from an empty mask")
    rng = DeterministicRng(seed)
    out: list[PointPrompt] = []
    n = len(rows)
    for _ in range(k):
        i = rng.next_below(n)
        out.append(
            PointPrompt((cols[i] + 0.5) / mask.width, (rows[i] + 0.5) / mask.height)
        )
    return out


def sample_labelled_pixels(
    label_map: np.ndarray,
    k: int,
    seed: int,
    ignore_labels: set | None = None,
) -> list[tuple[PointPrompt, object]]:
    """Sample k (point, label) pairs from a per-pixel category raster.

    ``label_map`` is a (height, width) array of hashable labels. Pixels whose
    label is in ``ignore_labels`` are excluded from the pool; an empty pool
    raises NoSampleablePixels. Sampling is uniform with replacement over the
    remaining pixels, row-major enumeration, same RNG conventions as
    `sample_mask_points`.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    arr = np.asarray(label_map)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError("label map must be a non-empty 2-D raster")
    ignore = ignore_labels or set()
    keep = np.ones(arr.shape, dtype=bool)
    for label in ignore:
        keep &= arr != label
    rows, cols = np.nonzero(keep)
    if len(rows) == 0:
        raise NoSampleablePixels("all pixels carry ignore labels")
    h, w = arr.shape
    rng = DeterministicRng(seed)
    out: list[tuple[PointPrompt, object]] = []
    n = len(rows)
    for _ in range(k):
        i = rng.next_below(n)
        r, c = int(rows[i]), int(cols[i])
        point = PointPrompt((c + 0.5) / w, (r + 0.5) / h)
        label = arr[r, c]
        out.append((point, label.item() if hasattr(label, "item") else label))
    return out
