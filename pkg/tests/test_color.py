import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mixwb.color import (
    POLY_TERMS,
    WB_PRESETS,
    ColorSpace,
    Image,
    SpaceError,
    angular_error,
    cct_to_illuminant,
    delta_e_2000,
    delta_e_2000_lab,
    diagonal_wb,
    gamma_decode,
    gamma_encode,
    planckian_xy,
    poly_expand,
    preset,
    srgb_degamma,
    srgb_gamma,
    srgb_to_lab,
)

FIXTURES = Path(__file__).parent / "fixtures"


def sharma_pairs():
    return np.array(json.loads((FIXTURES / "ciede2000_pairs.json").read_text())["pairs"], dtype=np.float64)


# --- Image ---------------------------------------------------------------

def test_image_rejects_bad_shape_and_nan():
    with pytest.raises(ValueError):
        Image(np.zeros((4, 4)), ColorSpace.GAMMA_SRGB)
    px = np.zeros((2, 2, 3))
    px[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        Image(px, ColorSpace.GAMMA_SRGB)


def test_space_tags_are_enforced():
    img = Image(np.full((2, 2, 3), 0.5), ColorSpace.GAMMA_SRGB)
    with pytest.raises(SpaceError):
        srgb_gamma(img)
    with pytest.raises(SpaceError):
        diagonal_wb(img, [1, 1, 1])


def test_preset_lookup():
    assert [p.cct for p in preset("tfdcs")] == [2850, 3800, 5500, 6500, 7500]
    with pytest.raises(ValueError):
        preset("tx")


# --- transfer curve -------------------------------------------------------

@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (8, 3), elements=st.floats(0, 1)))
def test_gamma_round_trip(x):
    assert np.max(np.abs(gamma_decode(gamma_encode(x)) - x)) <= 1e-6


def test_gamma_round_trip_dense():
    x = np.random.default_rng(0).uniform(size=100_000)
    assert np.max(np.abs(gamma_decode(gamma_encode(x)) - x)) <= 1e-6


def test_gamma_known_values():
    assert gamma_encode(np.array(0.0)) == 0.0
    assert gamma_encode(np.array(1.0)) == pytest.approx(1.0)
    assert gamma_encode(np.array(0.0031308)) == pytest.approx(12.92 * 0.0031308)
    assert gamma_encode(np.array(0.18)) == pytest.approx(0.4613561, abs=1e-6)


def test_image_level_gamma():
    img = Image(np.random.default_rng(0).uniform(size=(3, 3, 3)), ColorSpace.LINEAR_SRGB)
    back = srgb_degamma(srgb_gamma(img))
    assert back.space == ColorSpace.LINEAR_SRGB
    assert np.allclose(back.pixels, img.pixels, atol=1e-6)


# --- illuminants ----------------------------------------------------------

def mccamy_cct(x, y):
    n = (x - 0.3320) / (0.1858 - y)
    return 449 * n**3 + 3525 * n**2 + 6823.3 * n + 5520.33


@pytest.mark.parametrize("cct", [2850, 3800, 5500, 6500, 7500])
def test_planckian_locus_against_mccamy(cct):
    x, y = planckian_xy(cct)
    assert mccamy_cct(x, y) == pytest.approx(cct, rel=0.01)


def test_illuminant_ordering_and_normalization():
    e = [cct_to_illuminant(p.cct) for p in WB_PRESETS.values()]
    for a, b in zip(e, e[1:]):
        assert a[0] > b[0] and a[2] < b[2]
    for v in e:
        assert v[1] == pytest.approx(1.0)
        assert np.all(v > 0)


def test_illuminant_warmth_monotone():
    ratios = [cct_to_illuminant(t)[0] / cct_to_illuminant(t)[2] for t in range(2000, 10001, 100)]
    assert all(a > b for a, b in zip(ratios, ratios[1:]))


def test_warm_preset_is_reddish():
    e = cct_to_illuminant(2850)
    assert e[0] > 1.0 and e[2] < 1.0


@pytest.mark.parametrize("cct", [1000, 1700, 30000])
def test_cct_out_of_range(cct):
    with pytest.raises(ValueError):
        cct_to_illuminant(cct)


def test_diagonal_wb_neutralizes_illuminant():
    e = cct_to_illuminant(3800)
    gray = np.full((2, 2, 3), 0.3)
    cast = Image(gray * e * 0.5, ColorSpace.LINEAR_RAW)
    out = diagonal_wb(cast, e)
    assert np.allclose(out.pixels, 0.15)
    with pytest.raises(ValueError):
        diagonal_wb(cast, [1, 0, 1])


# --- polynomial features --------------------------------------------------

def test_poly_expand_order():
    f = poly_expand(np.array([2.0, 3.0, 5.0]))
    assert len(POLY_TERMS) == 11
    assert f.tolist() == [2, 3, 5, 6, 10, 15, 4, 9, 25, 30, 1]
    rgb = np.random.default_rng(0).uniform(size=(5, 3))
    feats = poly_expand(rgb)
    idx = {"R": 0, "G": 1, "B": 2}
    for j, name in enumerate(POLY_TERMS):
        expect = np.ones(5)
        for ch in name.replace("2", name[0]) if name != "1" else "":
            expect = expect * rgb[:, idx[ch]]
        assert np.array_equal(feats[:, j], expect)


# --- angular error --------------------------------------------------------

def test_angular_error_analytic_cases():
    assert angular_error([1, 1, 1], [1, 1, 1]) == pytest.approx(0.0, abs=1e-6)
    assert angular_error([1, 0, 0], [0, 1, 0]) == pytest.approx(90.0)
    expected = math.degrees(math.acos(4 / (math.sqrt(6) * math.sqrt(3))))
    assert angular_error([2, 1, 1], [1, 1, 1]) == pytest.approx(expected)


def test_angular_error_degenerate_is_nan():
    assert np.isnan(angular_error([0, 0, 0], [1, 1, 1]))


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, 3, elements=st.floats(0.01, 1)), st.floats(0.1, 10), st.floats(0.1, 10))
def test_angular_error_scale_invariant(v, s, t):
    w = v[::-1].copy()
    assert angular_error(v * s, w * t) == pytest.approx(float(angular_error(v, w)), abs=1e-9)


# --- CIEDE2000 ------------------------------------------------------------

def test_ciede2000_reference_pairs():
    p = sharma_pairs()
    assert len(p) >= 20
    de = delta_e_2000_lab(p[:, :3], p[:, 3:6])
    assert np.max(np.abs(de - p[:, 6])) <= 1e-4


def test_ciede2000_agrees_with_skimage():
    color = pytest.importorskip("skimage.color")
    rng = np.random.default_rng(3)
    lab1 = np.column_stack([rng.uniform(0, 100, 200), rng.uniform(-80, 80, (200, 2))])
    lab2 = lab1 + rng.normal(scale=5, size=lab1.shape)
    ref = color.deltaE_ciede2000(lab1, lab2)
    assert np.allclose(delta_e_2000_lab(lab1, lab2), ref, atol=1e-6)
    # the Lab conversions differ only by rounding of the D65 constants
    rgb = rng.uniform(size=(100, 3))
    assert np.allclose(srgb_to_lab(rgb), color.rgb2lab(rgb[None])[0], atol=1e-2)


def test_srgb_to_lab_white_and_black():
    assert np.allclose(srgb_to_lab(np.ones(3)), [100, 0, 0], atol=1e-3)
    assert np.allclose(srgb_to_lab(np.zeros(3)), [0, 0, 0], atol=1e-6)


def test_ciede2000_symmetric_and_nonnegative():
    rng = np.random.default_rng(1)
    a, b = rng.uniform(size=(200, 3)), rng.uniform(size=(200, 3))
    assert np.allclose(delta_e_2000(a, b), delta_e_2000(b, a), atol=1e-9)
    assert np.all(delta_e_2000(a, b) > 0)
    assert np.all(delta_e_2000(a, a) == 0)
