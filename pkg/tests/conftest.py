"""Shared fixtures: frozen synthetic-suite recipes and brute-force oracles.

The suite recipes are pinned (sizes, contrast, noise, seeds) so every
statistical check in the suite is reproducible bit-for-bit.
"""
from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from promptseg.core import LabeledCase, Mask, SyntheticSpec, generate_synthetic_case

# --- frozen suite recipes ----------------------------------------------------

LARGE_MULTI = dict(
    width=64, height=64, diameter_mm=(28.0, 36.0), blob_count=(3, 4),
    contrast=(0.30, 0.64), noise=0.012,
)
SMALL_SINGLE = dict(
    width=64, height=64, diameter_mm=(10.0, 14.0), blob_count=(1, 1),
    contrast=(0.05, 0.09), noise=0.02, ramp=0.20,
)
LARGE_IRREGULAR = dict(
    width=64, height=64, diameter_mm=(30.0, 38.0), blob_count=(3, 4),
    contrast=(0.30, 0.64), noise=0.012,
)
SMALL_COMPACT = dict(
    width=64, height=64, diameter_mm=(23.0, 27.0), blob_count=(1, 1),
    contrast=(0.35, 0.55), noise=0.03,
)
AGENT_SUITE = dict(
    width=64, height=64, diameter_mm=(32.0, 42.0), blob_count=(2, 3),
    contrast=(0.30, 0.64), noise=0.012,
)


def case_seed(base: int, index: int) -> int:
    return int(np.random.SeedSequence([base, index]).generate_state(1)[0])


def make_suite(recipe: dict, base: int, count: int) -> list[LabeledCase]:
    cases = []
    for i in range(count):
        spec = SyntheticSpec(seed=case_seed(base, i), **recipe)
        cases.append(dataclasses.replace(generate_synthetic_case(spec), id=f"case{i:04d}"))
    return cases


def random_mask(rng: np.random.Generator, w: int, h: int, p: float = 0.4,
                nonempty: bool = False) -> Mask:
    bits = rng.random((h, w)) < p
    if nonempty and not bits.any():
        bits[rng.integers(h), rng.integers(w)] = True
    return Mask(bits)


# --- brute-force oracles -------------------------------------------------------


def oracle_distance_map(mask: Mask) -> np.ndarray:
    """Exhaustive nearest-background search, border as background."""
    h, w = mask.bits.shape
    bg = [(x, y) for y in range(h) for x in range(w) if not mask.bits[y, x]]
    bg += [(x, -1) for x in range(w)] + [(x, h) for x in range(w)]
    bg += [(-1, y) for y in range(h)] + [(w, y) for y in range(h)]
    bga = np.asarray(bg, dtype=np.float64)
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            if mask.bits[y, x]:
                out[y, x] = np.sqrt(((bga - (x, y)) ** 2).sum(axis=1)).min()
    return out


def oracle_dice(a: Mask, b: Mask) -> float:
    sa = {(x, y) for y, x in zip(*np.nonzero(a.bits))}
    sb = {(x, y) for y, x in zip(*np.nonzero(b.bits))}
    if not sa and not sb:
        return 1.0
    return 2.0 * len(sa & sb) / (len(sa) + len(sb))


def oracle_boundary(mask: Mask) -> list[tuple[int, int]]:
    h, w = mask.bits.shape
    pts = []
    for y in range(h):
        for x in range(w):
            if not mask.bits[y, x]:
                continue
            for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                nx, ny = x + dx, y + dy
                if not (0 <= nx < w and 0 <= ny < h) or not mask.bits[ny, nx]:
                    pts.append((x, y))
                    break
    return pts


def oracle_percentile_95(values: np.ndarray) -> float:
    """Linear-interpolated 95th percentile of a pooled sample."""
    vals = np.sort(np.asarray(values, dtype=np.float64))
    if len(vals) == 1:
        return float(vals[0])
    pos = 0.95 * (len(vals) - 1)
    lo = int(np.floor(pos))
    hi = min(lo + 1, len(vals) - 1)
    frac = pos - lo
    return float(vals[lo] * (1 - frac) + vals[hi] * frac)


def oracle_hd95(a: Mask, b: Mask, spacing=(1.0, 1.0)) -> float:
    """All-pairs boundary distances pooled both ways."""
    pa = np.asarray(oracle_boundary(a), dtype=np.float64) * spacing
    pb = np.asarray(oracle_boundary(b), dtype=np.float64) * spacing
    d = np.sqrt(((pa[:, None, :] - pb[None, :, :]) ** 2).sum(axis=2))
    pooled = np.concatenate([d.min(axis=1), d.min(axis=0)])
    return oracle_percentile_95(pooled)


@pytest.fixture(scope="session")
def small_case() -> LabeledCase:
    """A quick, easy case for plumbing tests."""
    spec = SyntheticSpec(width=48, height=48, diameter_mm=(18, 22), blob_count=(2, 2),
                         contrast=(0.30, 0.55), noise=0.01, seed=1234)
    return generate_synthetic_case(spec)
