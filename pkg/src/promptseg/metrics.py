"""Segmentation quality metrics and the two statistical tests used by the
strategy studies: Dice overlap, pooled 95th-percentile Hausdorff boundary
distance, the paired t-test and the Mann-Whitney U test.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import norm as _norm
from scipy.stats import t as _student_t

from .core.types import Mask
from .errors import DegenerateSample, EmptyMask, ShapeMismatch


@dataclass(frozen=True)
class MetricReport:
    """One evaluation row: overlap, boundary distance (mm) and wall time (s).
    hd95 is None when the prediction was empty and the metric undefined."""

    dice: float
    hd95: float | None
    wall_time: float = 0.0


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    method: str  # "paired_t" | "mann_whitney_u"


def dice(a: Mask, b: Mask) -> float:
    """2|A∩B| / (|A|+|B|). Both masks empty -> 1.0 (nothing to disagree on),
    exactly one empty -> 0.0.
    """
    if not a.same_shape(b):
        raise ShapeMismatch(f"mask shapes differ: {a.bits.shape} vs {b.bits.shape}")
    na, nb = a.count, b.count
    if na == 0 and nb == 0:
        return 1.0
    inter = int(np.logical_and(a.bits, b.bits).sum())
    return 2.0 * inter / (na + nb)


def boundary_pixels(mask: Mask) -> np.ndarray:
    """(N, 2) array of (x, y) for foreground pixels with at least one
    background 4-neighbor; the image border counts as background.
    """
    bits = mask.bits
    padded = np.zeros((bits.shape[0] + 2, bits.shape[1] + 2), dtype=bool)
    padded[1:-1, 1:-1] = bits
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    edge = bits & ~interior
    ys, xs = np.nonzero(edge)
    return np.column_stack([xs, ys])


def hd95(a: Mask, b: Mask, spacing: tuple[float, float] = (1.0, 1.0)) -> float:
    """Pooled 95th-percentile boundary distance in millimeters.

    Nearest-boundary Euclidean distances are computed in both directions
    with per-axis spacing applied before the norm; the two directed sets
    are pooled and the 95th percentile taken with linear interpolation.
    """
    if not a.same_shape(b):
        raise ShapeMismatch(f"mask shapes differ: {a.bits.shape} vs {b.bits.shape}")
    if a.is_empty() or b.is_empty():
        raise EmptyMask("hd95 is undefined for empty masks")
    scale = np.asarray(spacing, dtype=np.float64)
    pa = boundary_pixels(a) * scale
    pb = boundary_pixels(b) * scale
    d_ab = cKDTree(pb).query(pa)[0]
    d_ba = cKDTree(pa).query(pb)[0]
    pooled = np.concatenate([d_ab, d_ba])
    return float(np.percentile(pooled, 95.0))


def paired_t_test(xs, ys) -> TestResult:
    """Two-sided paired t-test on matched samples."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape:
        raise ShapeMismatch(f"sample lengths differ: {len(xs)} vs {len(ys)}")
    n = len(xs)
    if n < 2:
        raise DegenerateSample("paired t-test needs at least 2 pairs")
    d = xs - ys
    sd = d.std(ddof=1)
    if sd == 0.0:
        raise DegenerateSample("paired differences have zero variance")
    t = d.mean() / (sd / np.sqrt(n))
    p = 2.0 * _student_t.sf(abs(t), df=n - 1)
    return TestResult(float(t), float(min(p, 1.0)), "paired_t")


def _u_statistic(xs: np.ndarray, ys: np.ndarray) -> float:
    """U for xs: number of (x, y) pairs with x > y, ties counting 1/2."""
    greater = (xs[:, None] > ys[None, :]).sum()
    equal = (xs[:, None] == ys[None, :]).sum()
    return float(greater) + 0.5 * float(equal)


def mann_whitney_u(xs, ys) -> TestResult:
    """Two-sided Mann-Whitney U test.

    Exact permutation p-value when max(n, m) <= 8 and there are no ties;
    otherwise the normal approximation with tie and continuity corrections.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    n, m = len(xs), len(ys)
    if n == 0 or m == 0:
        raise DegenerateSample("mann-whitney needs two nonempty samples")
    u = _u_statistic(xs, ys)

    pooled = np.concatenate([xs, ys])
    has_ties = len(np.unique(pooled)) < len(pooled)
    if max(n, m) <= 8 and not has_ties:
        # enumerate every assignment of pooled ranks to the x-group
        count_le = 0
        count_ge = 0
        total = 0
        for combo in itertools.combinations(range(n + m), n):
            sel = np.zeros(n + m, dtype=bool)
            sel[list(combo)] = True
            u_perm = _u_statistic(pooled[sel], pooled[~sel])
            count_le += u_perm <= u
            count_ge += u_perm >= u
            total += 1
        p = 2.0 * min(count_le, count_ge) / total
        return TestResult(u, float(min(p, 1.0)), "mann_whitney_u")

    mu = n * m / 2.0
    counts = np.unique(pooled, return_counts=True)[1]
    tie_term = (counts**3 - counts).sum() / ((n + m) * (n + m - 1.0))
    sigma2 = n * m / 12.0 * ((n + m + 1.0) - tie_term)
    if sigma2 <= 0.0:
        raise DegenerateSample("all pooled values identical")
    z = (abs(u - mu) - 0.5) / np.sqrt(sigma2)  # continuity correction
    p = 2.0 * _norm.sf(max(z, 0.0))
    return TestResult(u, float(min(p, 1.0)), "mann_whitney_u")
