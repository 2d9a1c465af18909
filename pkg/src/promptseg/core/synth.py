"""Synthetic multi-plateau lesion phantoms.

Each case is a connected union of overlapping ellipses painted as distinct
intensity plateaus over a smooth background field. Plateau separation is
chosen so a tolerance-based region grower captures roughly one blob per
prompt, which is what the prompt-count studies rely on.
"""
from __future__ import annotations

import numpy as np
from scipy import ndimage

from ..errors import InvalidSpec
from .types import Image2D, LabeledCase, Mask, SyntheticSpec

SPECKLE_SD = 0.10


def _rasterize(shape, ellipses, scale, origin):
    """Union mask of ellipses scaled about `origin` by `scale`."""
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    out = np.zeros(shape, dtype=bool)
    ox, oy = origin
    for cx, cy, a, b, theta in ellipses:
        scx = ox + (cx - ox) * scale
        scy = oy + (cy - oy) * scale
        sa, sb = a * scale, b * scale
        dx, dy = xx - scx, yy - scy
        u = dx * np.cos(theta) + dy * np.sin(theta)
        v = -dx * np.sin(theta) + dy * np.cos(theta)
        out |= (u / sa) ** 2 + (v / sb) ** 2 <= 1.0
    return out


def _blob_masks(shape, ellipses, scale, origin):
    """Per-ellipse masks at the final scale, in draw order."""
    masks = []
    for e in ellipses:
        masks.append(_rasterize(shape, [e], scale, origin))
    return masks


def generate_synthetic_case(spec: SyntheticSpec) -> LabeledCase:
    """Build one labeled case as a pure function of `spec`.

    The lesion mask is connected, nonempty, and its area-equivalent diameter
    tracks the requested range to sub-pixel bisection accuracy.
    """
    rng = np.random.default_rng(spec.seed)
    w, h = spec.width, spec.height
    sx, sy = spec.spacing_mm
    px_per_mm = 1.0 / min(sx, sy)

    d_lo, d_hi = spec.diameter_mm
    diameter_px = rng.uniform(d_lo, d_hi) * px_per_mm
    if diameter_px < 4.0:
        raise InvalidSpec(f"diameter {diameter_px:.1f} px is too small to rasterize")
    blobs = int(rng.integers(spec.blob_count[0], spec.blob_count[1] + 1))

    jitter = 0.08 * min(w, h)
    c0 = np.array([w / 2.0, h / 2.0]) + rng.uniform(-jitter, jitter, size=2)

    mask_bits = None
    ellipses: list[tuple[float, float, float, float, float]] = []
    for _attempt in range(8):
        # chain construction: every new ellipse is centered strictly inside
        # an earlier one, so the union stays connected at any positive scale
        ellipses = []
        for k in range(blobs):
            if k == 0:
                cx, cy = c0
            else:
                j = int(rng.integers(0, k))
                pcx, pcy, pa, pb, pth = ellipses[j]
                r = rng.uniform(0.45, 0.78)  # mid-to-outer parent, still interior
                phi = rng.uniform(0.0, 2.0 * np.pi)
                ex, ey = r * pa * np.cos(phi), r * pb * np.sin(phi)
                cx = pcx + ex * np.cos(pth) - ey * np.sin(pth)
                cy = pcy + ex * np.sin(pth) + ey * np.cos(pth)
            a = rng.uniform(0.30, 0.50) * diameter_px
            ratio = rng.uniform(0.55, 0.95)
            theta = rng.uniform(0.0, np.pi)
            ellipses.append((float(cx), float(cy), float(a), float(a * ratio), float(theta)))

        # bisect a global scale so the union area matches the target diameter
        target_area = np.pi * (diameter_px / 2.0) ** 2
        lo, hi = 0.05, 3.0
        for _ in range(48):
            mid = 0.5 * (lo + hi)
            area = _rasterize((h, w), ellipses, mid, c0).sum()
            if area < target_area:
                lo = mid
            else:
                hi = mid
        scale = 0.5 * (lo + hi)

        # translate into bounds if the fitted lesion sticks out
        mask_bits = _rasterize((h, w), ellipses, scale, c0)
        ys, xs = np.nonzero(mask_bits)
        if len(xs) == 0:
            continue
        shift_x = max(0, 1 - xs.min()) - max(0, xs.max() - (w - 2))
        shift_y = max(0, 1 - ys.min()) - max(0, ys.max() - (h - 2))
        if shift_x or shift_y:
            ellipses = [(cx + shift_x, cy + shift_y, a, b, t) for cx, cy, a, b, t in ellipses]
            c0 = c0 + np.array([shift_x, shift_y])
            mask_bits = _rasterize((h, w), ellipses, scale, c0)
            ys, xs = np.nonzero(mask_bits)
            if xs.min() < 1 or xs.max() > w - 2 or ys.min() < 1 or ys.max() > h - 2:
                mask_bits = None  # chain sprawled past the border; redraw
                continue
        if ndimage.label(mask_bits)[1] == 1:
            break
        mask_bits = None  # sub-pixel overlap lost to rasterization; redraw
    if mask_bits is None:
        raise InvalidSpec(
            "could not rasterize a connected in-bounds lesion for this spec"
        )

    # background: either one smooth field, or Voronoi cells painted at
    # well-separated levels so a stray background prompt floods one cell only
    bg_lo, bg_hi = spec.background
    if spec.background_zones > 1:
        sites = rng.uniform(0, [w, h], size=(spec.background_zones, 2))
        yy, xx = np.mgrid[0:h, 0:w]
        d2 = (xx[..., None] - sites[:, 0]) ** 2 + (yy[..., None] - sites[:, 1]) ** 2
        owner = d2.argmin(axis=2)
        ladder = np.linspace(bg_lo, bg_hi, 3)
        cell_levels = ladder[rng.integers(0, 3, size=spec.background_zones)]
        image = cell_levels[owner]
        image = image + 0.02 * ndimage.gaussian_filter(rng.standard_normal((h, w)), sigma=3.0)
    else:
        field = ndimage.gaussian_filter(
            rng.standard_normal((h, w)), sigma=min(w, h) / spec.background_scale
        )
        field = (field - field.min()) / (field.max() - field.min() + 1e-12)
        image = bg_lo + (bg_hi - bg_lo) * field

    if spec.corner_shade > 0:
        # collimation-style dark triangles in the four image corners
        leg = max(4, int(round(spec.corner_frac * min(w, h))))
        yy, xx = np.mgrid[0:h, 0:w]
        tri = (
            (xx + yy < leg)
            | ((w - 1 - xx) + yy < leg)
            | (xx + (h - 1 - yy) < leg)
            | ((w - 1 - xx) + (h - 1 - yy) < leg)
        )
        image[tri] = spec.corner_shade

    # evenly spaced plateau ladder maximizes separation between blob levels
    c_lo, c_hi = spec.contrast
    if blobs == 1:
        levels = np.array([rng.uniform(c_lo, c_hi)])
    else:
        levels = np.linspace(c_lo, c_hi, blobs)
        rng.shuffle(levels)
    for blob_mask, level in zip(_blob_masks((h, w), ellipses, scale, c0), levels):
        image[blob_mask] = bg_hi + level

    if spec.ramp > 0:
        # linear intensity gradient across the lesion in a seeded direction;
        # widens the intensity span a tolerance-based grower must cover
        angle = rng.uniform(0.0, 2.0 * np.pi)
        yy, xx = np.mgrid[0:h, 0:w]
        proj = np.cos(angle) * xx + np.sin(angle) * yy
        inside = proj[mask_bits]
        span = inside.max() - inside.min()
        if span > 0:
            image[mask_bits] += spec.ramp * (inside - inside.min()) / span

    if spec.noise > 0:
        image = image + rng.normal(0.0, spec.noise, size=(h, w))
    if spec.speckle:
        image = image * (1.0 + SPECKLE_SD * rng.standard_normal((h, w)))
    image = np.clip(image, 0.0, 1.0)

    return LabeledCase(
        id=f"synth-{spec.seed}",
        image=Image2D(image, spacing=(sx, sy)),
        truth=Mask(mask_bits),
        dataset_tag="synthetic",
    )
