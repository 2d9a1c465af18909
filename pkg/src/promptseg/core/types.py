"""Domain value types: images, masks, prompts and labeled cases.

Everything here is immutable after construction (arrays are marked
read-only), so values can be shared freely across threads.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from ..errors import InvalidSpec, ShapeMismatch

MIN_IMAGE_SIDE = 8


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Image2D:
    """A single grayscale slice with physical pixel spacing.

    intensities: (height, width) float array, normalized to [0, 1].
    spacing: (sx, sy) in millimeters per pixel.
    """

    intensities: np.ndarray
    spacing: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        arr = np.asarray(self.intensities, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeMismatch(f"image must be 2-D, got shape {arr.shape}")
        h, w = arr.shape
        if w < MIN_IMAGE_SIDE or h < MIN_IMAGE_SIDE:
            raise InvalidSpec(f"image must be at least {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}, got {w}x{h}")
        if not np.all(np.isfinite(arr)):
            raise InvalidSpec("image intensities must be finite")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise InvalidSpec("image intensities must lie in [0, 1]")
        sx, sy = self.spacing
        if not (sx > 0 and sy > 0):
            raise InvalidSpec(f"spacing must be positive, got {self.spacing}")
        object.__setattr__(self, "intensities", _freeze(arr))
        object.__setattr__(self, "spacing", (float(sx), float(sy)))

    @property
    def width(self) -> int:
        return self.intensities.shape[1]

    @property
    def height(self) -> int:
        return self.intensities.shape[0]


@dataclass(frozen=True)
class Mask:
    """A binary pixel grid, (height, width), True = foreground."""

    bits: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.bits)
        if arr.ndim != 2:
            raise ShapeMismatch(f"mask must be 2-D, got shape {arr.shape}")
        object.__setattr__(self, "bits", _freeze(arr.astype(bool)))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def count(self) -> int:
        return int(self.bits.sum())

    def is_empty(self) -> bool:
        return not self.bits.any()

    def same_shape(self, other: "Mask") -> bool:
        return self.bits.shape == other.bits.shape


class Polarity(str, enum.Enum):
    POSITIVE = "pos"
    NEGATIVE = "neg"


@dataclass(frozen=True)
class PromptPoint:
    """A single click: pixel coordinates plus polarity."""

    x: int
    y: int
    polarity: Polarity = Polarity.POSITIVE

    def __post_init__(self):
        object.__setattr__(self, "x", int(self.x))
        object.__setattr__(self, "y", int(self.y))
        object.__setattr__(self, "polarity", Polarity(self.polarity))


@dataclass(frozen=True)
class PromptSet:
    """An ordered interaction sequence of prompt points.

    `meta` records bookkeeping such as sub-region fallbacks during sampling;
    it does not participate in the no-duplicates invariant.
    """

    points: tuple[PromptPoint, ...] = ()
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        pts = tuple(self.points)
        keys = [(p.x, p.y, p.polarity) for p in pts]
        if len(set(keys)) != len(keys):
            raise InvalidSpec("prompt set contains duplicate (x, y, polarity) entries")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "meta", dict(self.meta))

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def extended(self, point: PromptPoint) -> "PromptSet":
        return PromptSet(self.points + (point,), self.meta)


class PointCountGroup(enum.Enum):
    """The three studied point-number bins."""

    ONE = "1"
    TWO_TO_FOUR = "2-4"
    FIVE_OR_MORE = "5+"


class SubRegionKind(str, enum.Enum):
    CENTER = "center"
    SURFACE = "surface"
    UNION = "union"


@dataclass(frozen=True)
class SubRegionPartition:
    """Disjoint center/surface/union bands that exactly tile a lesion mask."""

    center: Mask
    surface: Mask
    union_region: Mask
    delta: float = 5.0

    def region(self, kind: SubRegionKind) -> Mask:
        return {
            SubRegionKind.CENTER: self.center,
            SubRegionKind.SURFACE: self.surface,
            SubRegionKind.UNION: self.union_region,
        }[SubRegionKind(kind)]


@dataclass(frozen=True)
class LabeledCase:
    """One experiment unit: an image with its ground-truth lesion mask."""

    id: str
    image: Image2D
    truth: Mask
    dataset_tag: str = ""

    def __post_init__(self):
        if self.truth.bits.shape != self.image.intensities.shape:
            raise ShapeMismatch(
                f"truth shape {self.truth.bits.shape} != image shape {self.image.intensities.shape}"
            )
        if self.truth.is_empty():
            raise InvalidSpec(f"case {self.id!r} has an empty ground-truth mask")


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for one synthetic lesion case; a pure function of `seed`.

    diameter_mm bounds the area-equivalent lesion diameter; with the default
    1 mm/px spacing the bounds are in pixels. Lesions are unions of
    `blob_count` overlapping ellipses, each painted as a distinct intensity
    plateau so region growing captures roughly one blob per prompt.
    """

    width: int = 64
    height: int = 64
    diameter_mm: tuple[float, float] = (24.0, 32.0)
    blob_count: tuple[int, int] = (2, 5)
    contrast: tuple[float, float] = (0.30, 0.62)
    noise: float = 0.02
    ramp: float = 0.0  # intra-lesion intensity gradient amplitude
    background: tuple[float, float] = (0.08, 0.28)  # smooth-field span
    background_scale: float = 6.0  # field granularity: sigma = min(w,h)/scale
    background_zones: int = 1  # >1: distinct-level Voronoi cells instead of one field
    corner_shade: float = 0.0  # >0: collimation-style dark corner triangles at this level
    corner_frac: float = 0.2  # triangle leg length as a fraction of min(width, height)
    speckle: bool = False
    seed: int = 0
    spacing_mm: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        lo, hi = self.diameter_mm
        if not (0 < lo <= hi):
            raise InvalidSpec(f"diameter range must be positive and ordered, got {self.diameter_mm}")
        blo, bhi = self.blob_count
        if not (1 <= blo <= bhi):
            raise InvalidSpec(f"blob count range must be >= 1 and ordered, got {self.blob_count}")
        clo, chi = self.contrast
        if not (0 < clo <= chi):
            raise InvalidSpec(f"contrast range must be positive and ordered, got {self.contrast}")
        if self.noise < 0:
            raise InvalidSpec("noise amplitude must be >= 0")
        if self.ramp < 0:
            raise InvalidSpec("ramp amplitude must be >= 0")
        bg_lo, bg_hi = self.background
        if not (0 <= bg_lo <= bg_hi <= 1):
            raise InvalidSpec(f"background span must be ordered within [0, 1], got {self.background}")
        if not self.background_scale > 0:
            raise InvalidSpec("background_scale must be > 0")
        if self.background_zones < 1:
            raise InvalidSpec("background_zones must be >= 1")
        if not (0 <= self.corner_shade <= 1):
            raise InvalidSpec("corner_shade must be in [0, 1]")
        if not (0.0 < self.corner_frac < 0.5):
            raise InvalidSpec("corner_frac must be in (0, 0.5)")
        sx, sy = self.spacing_mm
        if not (sx > 0 and sy > 0):
            raise InvalidSpec("spacing must be positive")
        # feasibility: the largest requested lesion must fit with a margin
        dia_px = hi / min(sx, sy)
        if dia_px >= min(self.width, self.height) - 4:
            raise InvalidSpec(
                f"diameter {hi} mm does not fit a {self.width}x{self.height} image at spacing {self.spacing_mm}"
            )
