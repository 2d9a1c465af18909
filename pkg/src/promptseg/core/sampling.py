"""Seeded prompt-point sampling from lesion sub-regions."""
from __future__ import annotations

import numpy as np

from ..errors import InsufficientRegion
from .geometry import decompose_subregions
from .types import LabeledCase, Mask, Polarity, PromptPoint, PromptSet, SubRegionKind

# when the requested band runs out of pixels, continue through this order
FALLBACK_ORDER = (SubRegionKind.UNION, SubRegionKind.SURFACE, SubRegionKind.CENTER)


def _draw(rng: np.random.Generator, mask: Mask, k: int) -> list[tuple[int, int]]:
    ys, xs = np.nonzero(mask.bits)
    if len(xs) == 0 or k == 0:
        return []
    k = min(k, len(xs))
    idx = rng.choice(len(xs), size=k, replace=False)
    return [(int(xs[i]), int(ys[i])) for i in idx]


def sample_prompts(
    case: LabeledCase,
    location: SubRegionKind,
    n: int,
    rng_seed,
    delta: float = 5.0,
) -> PromptSet:
    """Draw `n` distinct positive prompts uniformly from a sub-region of the
    ground-truth mask.

    If the requested band has fewer than `n` pixels the remainder is drawn
    from the other bands in the order union -> surface -> center; any bands
    used this way are listed in the result's `meta["fallback"]`. Deterministic
    for a fixed seed.
    """
    location = SubRegionKind(location)
    if n > case.truth.count:
        raise InsufficientRegion(
            f"requested {n} points but the lesion has only {case.truth.count} pixels"
        )
    partition = decompose_subregions(case.truth, delta)
    order = [location] + [kind for kind in FALLBACK_ORDER if kind != location]

    rng = np.random.default_rng(rng_seed)
    points: list[PromptPoint] = []
    fallback: list[str] = []
    for kind in order:
        need = n - len(points)
        if need == 0:
            break
        drawn = _draw(rng, partition.region(kind), need)
        if drawn and kind != location:
            fallback.append(kind.value)
        points.extend(PromptPoint(x, y, Polarity.POSITIVE) for x, y in drawn)

    meta = {"location": location.value, "fallback": tuple(fallback)}
    return PromptSet(tuple(points), meta)
