"""Lesion geometry: anchor point, distance transform, sub-region bands."""
from __future__ import annotations

import numpy as np
from scipy import ndimage

from ..errors import EmptyMask, InvalidCount
from .types import Mask, PointCountGroup, SubRegionPartition


def distance_transform(mask: Mask) -> np.ndarray:
    """Euclidean distance (in pixels) from each foreground pixel to the
    nearest background pixel, with the image border counted as background.
    Background pixels map to 0.
    """
    bits = mask.bits
    padded = np.zeros((bits.shape[0] + 2, bits.shape[1] + 2), dtype=bool)
    padded[1:-1, 1:-1] = bits
    dist = ndimage.distance_transform_edt(padded)
    return dist[1:-1, 1:-1]


def lesion_anchor(mask: Mask) -> tuple[int, int]:
    """A representative interior pixel of the lesion, as (x, y).

    The foreground centroid rounded to the nearest pixel when that pixel is
    itself foreground; otherwise (non-convex lesions) the foreground pixel
    with the largest distance to background, ties broken by the smallest
    row-major index. The result is always a foreground pixel.
    """
    if mask.is_empty():
        raise EmptyMask("cannot compute the anchor of an empty mask")
    ys, xs = np.nonzero(mask.bits)
    # round half up, np.round would round 0.5 to the nearest even integer
    cx = int(np.floor(xs.mean() + 0.5))
    cy = int(np.floor(ys.mean() + 0.5))
    if 0 <= cy < mask.height and 0 <= cx < mask.width and mask.bits[cy, cx]:
        return cx, cy
    dist = distance_transform(mask)
    flat = np.argmax(dist)  # first max in row-major order
    fy, fx = np.unravel_index(flat, dist.shape)
    return int(fx), int(fy)


def decompose_subregions(mask: Mask, delta: float = 5.0) -> SubRegionPartition:
    """Split a lesion into surface / center / union bands.

    Precedence surface > center > union: a foreground pixel within `delta`
    (Euclidean) of the background is surface; otherwise within `delta` of
    the anchor it is center; the rest is union. The three masks are
    pairwise disjoint and tile the lesion exactly.
    """
    if mask.is_empty():
        raise EmptyMask("cannot decompose an empty mask")
    bits = mask.bits
    dist_to_edge = distance_transform(mask)
    surface = bits & (dist_to_edge <= delta)

    ax, ay = lesion_anchor(mask)
    yy, xx = np.ogrid[: mask.height, : mask.width]
    dist_to_anchor = np.hypot(xx - ax, yy - ay)
    center = bits & ~surface & (dist_to_anchor <= delta)

    union = bits & ~surface & ~center
    return SubRegionPartition(Mask(center), Mask(surface), Mask(union), float(delta))


def bin_point_count(n: int) -> PointCountGroup:
    """Map a prompt count onto the studied {1, 2-4, 5+} groups."""
    if n < 1:
        raise InvalidCount(f"point count must be >= 1, got {n}")
    if n == 1:
        return PointCountGroup.ONE
    if n <= 4:
        return PointCountGroup.TWO_TO_FOUR
    return PointCountGroup.FIVE_OR_MORE
