"""Segmentation-derived features: entropy and boundary-gradient maps, class
distributions and their KL divergences, BALD scores, the candidate-region
pool, and the fixed-length state/action vectors consumed by the Q-network.

All entropies and divergences are in nats.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .core.types import Mask, PromptPoint
from .errors import EmptyInput, EmptyRegion, InvalidGrid, ShapeMismatch
from .metrics import boundary_pixels
from .segmenter.core import ProbabilityMap, binarize

KL_EPS = 1e-8
STATE_FEATURES_PER_REGION = 3
ACTION_FEATURES = 5


@dataclass(frozen=True)
class Region:
    """One candidate rectangle of the action pool."""

    index: int
    x0: int
    y0: int
    w: int
    h: int

    @property
    def area(self) -> int:
        return self.w * self.h

    def slices(self) -> tuple[slice, slice]:
        return slice(self.y0, self.y0 + self.h), slice(self.x0, self.x0 + self.w)


@dataclass(frozen=True)
class RegionPool:
    """Row-major grid tiling of the image; the agent's finite action set."""

    regions: tuple[Region, ...]
    grid: tuple[int, int]
    width: int
    height: int

    def __len__(self) -> int:
        return len(self.regions)


def build_region_pool(width: int, height: int, grid: tuple[int, int] = (8, 8)) -> RegionPool:
    """Tile the image into gx*gy rectangles; the last column/row absorb the
    division remainder so the tiles cover every pixel exactly once."""
    gx, gy = grid
    if gx < 1 or gy < 1 or gx > width or gy > height:
        raise InvalidGrid(f"grid {grid} does not fit a {width}x{height} image")
    tile_w, tile_h = width // gx, height // gy
    regions = []
    for iy in range(gy):
        y0 = iy * tile_h
        h = tile_h if iy < gy - 1 else height - y0
        for ix in range(gx):
            x0 = ix * tile_w
            w = tile_w if ix < gx - 1 else width - x0
            regions.append(Region(len(regions), x0, y0, w, h))
    return RegionPool(tuple(regions), (gx, gy), width, height)


def entropy_map(p: ProbabilityMap) -> np.ndarray:
    """Binary Shannon entropy per pixel, H(q) = -q ln q - (1-q) ln(1-q)."""
    return _binary_entropy(p.probs)


def _binary_entropy(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    out = np.zeros_like(q)
    for s in (q, 1.0 - q):
        inner = s > 0.0
        out[inner] -= s[inner] * np.log(s[inner])
    return np.clip(out, 0.0, np.log(2.0))


class GradientSummary(NamedTuple):
    mean: float
    total: float


@dataclass(frozen=True)
class FeatureMaps:
    """Shared per-map intermediates so state/action builders compute the
    entropy, gradient and boundary grids once per step."""

    entropy: np.ndarray
    grad_mag: np.ndarray
    fg: np.ndarray  # binarized foreground
    boundary: np.ndarray  # boundary of the binarized mask


def compute_feature_maps(p: ProbabilityMap) -> FeatureMaps:
    gy, gx = np.gradient(p.probs)
    fg_mask = binarize(p)
    boundary = np.zeros_like(fg_mask.bits)
    pts = boundary_pixels(fg_mask)
    if len(pts):
        boundary[pts[:, 1], pts[:, 0]] = True
    return FeatureMaps(entropy_map(p), np.hypot(gx, gy), fg_mask.bits, boundary)


def boundary_gradient_feature(p: ProbabilityMap, region: Region | None = None) -> GradientSummary:
    """Mean and sum of the probability-gradient magnitude over the boundary
    pixels of the binarized map (optionally restricted to `region`)."""
    maps = compute_feature_maps(p)
    return _gradient_summary(maps, region)


def _gradient_summary(maps: FeatureMaps, region: Region | None) -> GradientSummary:
    if region is None:
        sel = maps.boundary
    else:
        sel = np.zeros_like(maps.boundary)
        sy, sx = region.slices()
        sel[sy, sx] = maps.boundary[sy, sx]
    if not sel.any():
        return GradientSummary(0.0, 0.0)
    vals = maps.grad_mag[sel]
    return GradientSummary(float(vals.mean()), float(vals.sum()))


def class_distribution(source: ProbabilityMap | Mask, region: Region | None = None) -> tuple[float, float]:
    """(p_fg, p_bg) from normalized pixel counts within `region`."""
    if isinstance(source, Mask):
        fg = source.bits
    else:
        fg = binarize(source).bits
    if region is not None:
        sy, sx = region.slices()
        fg = fg[sy, sx]
    area = fg.size
    if area == 0:
        raise EmptyRegion("class distribution of an empty region")
    p_fg = float(fg.sum()) / area
    return (p_fg, 1.0 - p_fg)


def kl_divergence(p: tuple[float, float], q: tuple[float, float]) -> float:
    """KL(p || q) with both distributions epsilon-smoothed and renormalized,
    so the result is finite for degenerate inputs and zero iff p == q."""
    ps = (np.asarray(p, dtype=np.float64) + KL_EPS)
    qs = (np.asarray(q, dtype=np.float64) + KL_EPS)
    ps /= ps.sum()
    qs /= qs.sum()
    return float(max(0.0, np.sum(ps * np.log(ps / qs))))


def kl_binary(p_fg, q_fg) -> np.ndarray:
    """Vectorized kl_divergence for binary (fg, bg) distributions given by
    their foreground probabilities; broadcasts over arrays."""
    p = (np.asarray(p_fg, dtype=np.float64) + KL_EPS) / (1.0 + 2.0 * KL_EPS)
    q = (np.asarray(q_fg, dtype=np.float64) + KL_EPS) / (1.0 + 2.0 * KL_EPS)
    out = p * np.log(p / q) + (1.0 - p) * np.log((1.0 - p) / (1.0 - q))
    return np.maximum(out, 0.0)


def summarize_kl(scores: Sequence[float], mode: str = "max") -> float:
    if len(scores) == 0:
        raise EmptyInput("cannot summarize an empty KL list")
    if mode == "max":
        return float(max(scores))
    if mode == "sum":
        return float(sum(scores))
    raise EmptyInput(f"unknown KL summary mode {mode!r}")


def bald_map(ensemble: Sequence[ProbabilityMap]) -> np.ndarray:
    """Per-pixel mutual information H(mean_k q_k) - mean_k H(q_k) over a
    stochastic ensemble; nonnegative, zero for constant ensembles."""
    if len(ensemble) == 0:
        raise EmptyInput("bald_map needs at least one member")
    shape = ensemble[0].probs.shape
    for member in ensemble:
        if member.probs.shape != shape:
            raise ShapeMismatch("ensemble members have differing shapes")
    stack = np.stack([m.probs for m in ensemble])
    mixture = _binary_entropy(stack.mean(axis=0))
    conditional = np.stack([_binary_entropy(m) for m in stack]).mean(axis=0)
    return np.clip(mixture - conditional, 0.0, np.log(2.0))


def region_to_prompt(region: Region, p: ProbabilityMap) -> PromptPoint:
    """Positive prompt at the region's maximum-entropy pixel; ties (and the
    all-zero map) resolve to the smallest row-major index in the region."""
    sy, sx = region.slices()
    window = _binary_entropy(p.probs[sy, sx])
    flat = int(np.argmax(window))  # first max in row-major order
    dy, dx = np.unravel_index(flat, window.shape)
    return PromptPoint(region.x0 + int(dx), region.y0 + int(dy))


def build_state(p: ProbabilityMap, pool: RegionPool, maps: FeatureMaps | None = None) -> np.ndarray:
    """Length 3K vector: per region in pool order, (mean entropy, mean
    boundary-gradient magnitude, foreground fraction)."""
    if (p.height, p.width) != (pool.height, pool.width):
        raise ShapeMismatch(
            f"map {p.width}x{p.height} does not match pool image {pool.width}x{pool.height}"
        )
    if maps is None:
        maps = compute_feature_maps(p)
    out = np.empty(STATE_FEATURES_PER_REGION * len(pool), dtype=np.float64)
    for region in pool.regions:
        sy, sx = region.slices()
        base = STATE_FEATURES_PER_REGION * region.index
        out[base] = maps.entropy[sy, sx].mean()
        out[base + 1] = _gradient_summary(maps, region).mean
        out[base + 2] = maps.fg[sy, sx].mean()
    return out


def build_action(
    region: Region,
    p: ProbabilityMap,
    labeled: Sequence[Region],
    unlabeled: Sequence[Region],
    truth: Mask | None = None,
    kl_mode: str = "max",
    maps: FeatureMaps | None = None,
) -> np.ndarray:
    """Length-5 action vector for one candidate region.

    Features: entropy sum, boundary-gradient sum, foreground fraction, KL
    against the labeled regions' distributions (ground truth if `truth` is
    given, else predictions) summarized per `kl_mode`, and KL against the
    pooled predicted distribution of the unlabeled regions. Empty labeled
    or unlabeled sets contribute 0; callers choose both pools.
    """
    if maps is None:
        maps = compute_feature_maps(p)
    sy, sx = region.slices()
    entropy_sum = float(maps.entropy[sy, sx].sum())
    grad_sum = _gradient_summary(maps, region).total
    region_dist = _dist_from_bits(maps.fg, region)

    if labeled:
        ref_bits = truth.bits if truth is not None else maps.fg
        kls = [kl_divergence(region_dist, _dist_from_bits(ref_bits, r)) for r in labeled]
        kl_labeled = summarize_kl(kls, kl_mode)
    else:
        kl_labeled = 0.0

    if unlabeled:
        fg_count = 0
        area = 0
        for r in unlabeled:
            usy, usx = r.slices()
            fg_count += int(maps.fg[usy, usx].sum())
            area += r.area
        pooled = (fg_count / area, 1.0 - fg_count / area)
        kl_unlabeled = kl_divergence(region_dist, pooled)
    else:
        kl_unlabeled = 0.0

    return np.array([entropy_sum, grad_sum, region_dist[0], kl_labeled, kl_unlabeled])


def _dist_from_bits(bits: np.ndarray, region: Region) -> tuple[float, float]:
    sy, sx = region.slices()
    window = bits[sy, sx]
    if window.size == 0:
        raise EmptyRegion("class distribution of an empty region")
    p_fg = float(window.sum()) / window.size
    return (p_fg, 1.0 - p_fg)
