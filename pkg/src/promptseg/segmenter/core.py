"""The promptable-segmenter contract and its built-in implementation.

The built-in backend grows a 4-connected region around every positive
prompt, keeping pixels whose intensity stays within `tolerance` of the
seed pixel's intensity. Negative-prompt regions are subtracted, and the
binary result is blurred into a soft probability map.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..core.types import Image2D, Mask, Polarity, PromptPoint, PromptSet
from ..errors import InvalidPrompt, InvalidSpec, InvalidThreshold, ShapeMismatch

_FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=int)


@dataclass(frozen=True)
class ProbabilityMap:
    """Per-pixel foreground probability, (height, width) in [0, 1]."""

    probs: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.probs, dtype=np.float64))
        if arr.ndim != 2:
            raise ShapeMismatch(f"probability map must be 2-D, got {arr.shape}")
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
            raise InvalidSpec("probabilities must be finite and in [0, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "probs", arr)

    @property
    def width(self) -> int:
        return self.probs.shape[1]

    @property
    def height(self) -> int:
        return self.probs.shape[0]


@dataclass(frozen=True)
class SegmenterConfig:
    backend: str = "builtin"  # "builtin" | "bridge"
    tolerance: float = 0.10
    smoothing_sigma: float = 1.0
    bridge_endpoint: str = ""

    def __post_init__(self):
        if self.backend not in ("builtin", "bridge"):
            raise InvalidSpec(f"unknown backend {self.backend!r}")
        if not self.tolerance > 0:
            raise InvalidSpec("tolerance must be > 0")
        if self.smoothing_sigma < 0:
            raise InvalidSpec("smoothing_sigma must be >= 0")
        if self.backend == "bridge" and not self.bridge_endpoint:
            raise InvalidSpec("bridge backend needs a bridge_endpoint command")


@dataclass(frozen=True)
class EnsembleConfig:
    """Stochastic-ensemble settings for uncertainty estimation."""

    members: int = 30
    jitter_seed: int = 0
    tolerance_jitter: float = 0.25  # relative sd of a log-normal tolerance factor
    seed_jitter: int = 1  # max per-axis prompt displacement, px

    def __post_init__(self):
        if self.members < 1:
            raise InvalidSpec("ensemble needs at least 1 member")
        if self.tolerance_jitter < 0 or self.seed_jitter < 0:
            raise InvalidSpec("jitter amounts must be >= 0")


def _check_prompts(image: Image2D, prompts: PromptSet) -> None:
    for p in prompts:
        if not (0 <= p.x < image.width and 0 <= p.y < image.height):
            raise InvalidPrompt(f"prompt ({p.x}, {p.y}) outside {image.width}x{image.height} image")


def grow_region(image: Image2D, point: PromptPoint, tolerance: float) -> np.ndarray:
    """Boolean grid of the 4-connected component around `point` whose
    intensities stay within `tolerance` of the seed intensity."""
    seed_val = image.intensities[point.y, point.x]
    candidates = np.abs(image.intensities - seed_val) <= tolerance
    labels, _ = ndimage.label(candidates, structure=_FOUR_CONN)
    return labels == labels[point.y, point.x]


def predict_mask(image: Image2D, prompts: PromptSet, cfg: SegmenterConfig) -> Mask:
    """Raw (pre-blur) binary prediction of the built-in backend."""
    _check_prompts(image, prompts)
    positive = np.zeros((image.height, image.width), dtype=bool)
    negative = np.zeros_like(positive)
    for p in prompts:
        grown = grow_region(image, p, cfg.tolerance)
        if p.polarity == Polarity.POSITIVE:
            positive |= grown
        else:
            negative |= grown
    return Mask(positive & ~negative)


def predict(image: Image2D, prompts: PromptSet, cfg: SegmenterConfig) -> ProbabilityMap:
    """Segment `image` under `prompts`. Deterministic for fixed inputs; an
    empty prompt set yields the all-zeros map."""
    if cfg.backend == "bridge":
        from .bridge import predict_via_bridge

        return predict_via_bridge(image, prompts, cfg)
    _check_prompts(image, prompts)
    if len(prompts) == 0:
        return ProbabilityMap(np.zeros((image.height, image.width)))
    raw = predict_mask(image, prompts, cfg).bits.astype(np.float64)
    if cfg.smoothing_sigma > 0:
        raw = ndimage.gaussian_filter(raw, sigma=cfg.smoothing_sigma, mode="constant", cval=0.0)
    return ProbabilityMap(np.clip(raw, 0.0, 1.0))


def binarize(p: ProbabilityMap, threshold: float = 0.5) -> Mask:
    """Foreground iff probability >= threshold."""
    if not (0.0 <= threshold <= 1.0):
        raise InvalidThreshold(f"threshold must be in [0, 1], got {threshold}")
    return Mask(p.probs >= threshold)


def _jittered_members(image: Image2D, prompts: PromptSet, cfg: SegmenterConfig, ens: EnsembleConfig):
    """Yield (tolerance, prompts) per member, driven by jitter_seed."""
    rng = np.random.default_rng(ens.jitter_seed)
    for _ in range(ens.members):
        factor = float(np.exp(rng.normal(0.0, ens.tolerance_jitter)))
        jittered: list[PromptPoint] = []
        seen: set[tuple[int, int, Polarity]] = set()
        for p in prompts:
            dx, dy = rng.integers(-ens.seed_jitter, ens.seed_jitter + 1, size=2)
            x = int(np.clip(p.x + dx, 0, image.width - 1))
            y = int(np.clip(p.y + dy, 0, image.height - 1))
            key = (x, y, p.polarity)
            if key in seen:  # collisions add nothing to the grown union
                continue
            seen.add(key)
            jittered.append(PromptPoint(x, y, p.polarity))
        yield cfg.tolerance * factor, PromptSet(tuple(jittered), prompts.meta)


def ensemble_predict(
    image: Image2D, prompts: PromptSet, cfg: SegmenterConfig, ens: EnsembleConfig
) -> list[ProbabilityMap]:
    """Monte-Carlo style ensemble via seeded tolerance and prompt jitter.

    A single member with zero jitter reproduces `predict` exactly. For the
    bridge backend the tolerance knob does not exist remotely, so members
    are requested with `stochastic=true` and a per-member seed instead.
    """
    _check_prompts(image, prompts)
    deterministic = ens.members == 1 and ens.tolerance_jitter == 0 and ens.seed_jitter == 0
    if cfg.backend == "bridge":
        from .bridge import ensemble_via_bridge

        return ensemble_via_bridge(image, prompts, cfg, ens, stochastic=not deterministic)
    maps = []
    for tol, member_prompts in _jittered_members(image, prompts, cfg, ens):
        member_cfg = SegmenterConfig(
            backend="builtin", tolerance=tol, smoothing_sigma=cfg.smoothing_sigma
        )
        maps.append(predict(image, member_prompts, member_cfg))
    return maps
