import numpy as np
import pytest
from scipy import ndimage

from promptseg.core import SyntheticSpec, generate_synthetic_case
from promptseg.errors import InvalidSpec


def test_same_seed_is_byte_identical():
    spec = SyntheticSpec(seed=91)
    a = generate_synthetic_case(spec)
    b = generate_synthetic_case(spec)
    assert np.array_equal(a.image.intensities, b.image.intensities)
    assert np.array_equal(a.truth.bits, b.truth.bits)
    assert a.id == b.id


def test_different_seeds_differ():
    a = generate_synthetic_case(SyntheticSpec(seed=1))
    b = generate_synthetic_case(SyntheticSpec(seed=2))
    assert not np.array_equal(a.image.intensities, b.image.intensities)


def test_mask_connected_and_nonempty():
    for seed in range(40):
        case = generate_synthetic_case(SyntheticSpec(seed=seed, blob_count=(2, 5)))
        assert case.truth.count > 0
        assert ndimage.label(case.truth.bits)[1] == 1


def test_equivalent_diameter_tracks_spec():
    # fixed 20 px request: measured area-equivalent diameter within 20 +- 2
    diam = []
    for seed in range(100):
        spec = SyntheticSpec(diameter_mm=(20.0, 20.0), blob_count=(2, 3), seed=seed)
        case = generate_synthetic_case(spec)
        diam.append(2.0 * np.sqrt(case.truth.count / np.pi))
    diam = np.asarray(diam)
    assert np.all(np.abs(diam - 20.0) <= 2.0)
    assert abs(diam.mean() - 20.0) <= 0.5


def test_speckle_increases_pixel_variance():
    # same seeds with and without speckle: the multiplicative texture must
    # strictly raise the pooled per-pixel variance across the sample
    plain = []
    textured = []
    for seed in range(30):
        base = dict(diameter_mm=(18.0, 24.0), blob_count=(2, 2), seed=seed)
        plain.append(generate_synthetic_case(SyntheticSpec(**base)).image.intensities)
        textured.append(
            generate_synthetic_case(SyntheticSpec(speckle=True, **base)).image.intensities
        )
    var_plain = np.var(np.stack(plain), axis=0).mean()
    var_textured = np.var(np.stack(textured), axis=0).mean()
    assert var_textured > var_plain


def test_intensities_stay_in_unit_range():
    case = generate_synthetic_case(SyntheticSpec(seed=5, noise=0.08, speckle=True))
    assert case.image.intensities.min() >= 0.0
    assert case.image.intensities.max() <= 1.0


def test_infeasible_diameter_rejected():
    with pytest.raises(InvalidSpec):
        SyntheticSpec(width=32, height=32, diameter_mm=(40.0, 40.0))


def test_bad_ranges_rejected():
    with pytest.raises(InvalidSpec):
        SyntheticSpec(diameter_mm=(10.0, 5.0))
    with pytest.raises(InvalidSpec):
        SyntheticSpec(blob_count=(0, 2))
    with pytest.raises(InvalidSpec):
        SyntheticSpec(noise=-0.1)


def test_plateaus_are_distinct_levels():
    # with negligible noise each blob paints its own intensity plateau
    spec = SyntheticSpec(seed=17, blob_count=(3, 3), noise=0.0)
    case = generate_synthetic_case(spec)
    inside = case.image.intensities[case.truth.bits]
    levels = np.unique(np.round(inside, 6))
    assert len(levels) >= 2  # overlaps are overpainted, at least two survive
    gaps = np.diff(np.sort(levels))
    assert gaps.min() > 0.10  # separated by more than the default tolerance


def test_spacing_scales_diameter_units():
    # 10 mm at 0.5 mm/px must rasterize to about 20 px across
    spec = SyntheticSpec(diameter_mm=(10.0, 10.0), blob_count=(1, 1), seed=3,
                         spacing_mm=(0.5, 0.5))
    case = generate_synthetic_case(spec)
    d_px = 2.0 * np.sqrt(case.truth.count / np.pi)
    assert abs(d_px - 20.0) <= 2.0
    assert case.image.spacing == (0.5, 0.5)
