import math

import numpy as np
import pytest

from dtsa.gasf import (
    GramMatrix,
    ScenarioImage,
    encode_image,
    gasf_closed_form,
    gasf_matrix,
    load_gram_cache,
    load_image_cache,
    resize_bilinear,
    save_gram_cache,
    save_image_cache,
    to_polar,
)
from dtsa.series import NormalizedSnapshot


def polar_of(values):
    return to_polar(NormalizedSnapshot(tuple(values), 1.0))


def test_polar_angle_endpoints():
    ps = polar_of([1.0, 0.0, -1.0])
    assert ps.angles[0] == 0.0
    assert ps.angles[1] == pytest.approx(math.pi / 2, abs=1e-15)
    assert ps.angles[2] == pytest.approx(math.pi, abs=1e-15)


def test_polar_radii_one_based():
    ps = polar_of([0.5, 0.5, 0.5, 0.5])
    assert np.allclose(ps.radii, [0.25, 0.5, 0.75, 1.0])
    assert ps.radii[-1] == 1.0


def test_gasf_all_ones():
    gm = gasf_matrix(polar_of([1.0, 1.0, 1.0]))
    assert np.allclose(gm.values, 1.0)


def test_gasf_all_zeros_gives_minus_one():
    gm = gasf_matrix(polar_of([0.0, 0.0]))
    assert np.allclose(gm.values, -1.0)


def test_gasf_closed_form_three_four_five():
    # arccos oracle: 0.6*0.8 - sqrt(1-0.36)*sqrt(1-0.64) = 0.48 - 0.48
    assert gasf_closed_form(0.6, 0.8) == pytest.approx(0.0, abs=1e-15)
    gm = gasf_matrix(polar_of([0.6, 0.8]))
    assert gm.values[0, 1] == pytest.approx(0.0, abs=1e-12)


def test_closed_form_identity_with_one():
    for x in (-1.0, -0.3, 0.0, 0.7, 1.0):
        assert gasf_closed_form(1.0, x) == pytest.approx(x, abs=1e-12)
    assert gasf_closed_form(0.0, 0.0) == pytest.approx(-1.0, abs=1e-15)


def test_gasf_matches_closed_form_everywhere():
    rng = np.random.default_rng(7)
    for _ in range(100):
        vals = rng.uniform(-1, 1, size=16)
        gm = gasf_matrix(polar_of(vals)).values
        closed = gasf_closed_form(vals[:, None], vals[None, :])
        assert np.abs(gm - closed).max() < 1e-12


def test_gram_symmetry_exact_and_bounded():
    rng = np.random.default_rng(3)
    vals = rng.uniform(-1, 1, size=24)
    gm = gasf_matrix(polar_of(vals)).values
    assert np.array_equal(gm, gm.T)
    assert gm.min() >= -1.0 and gm.max() <= 1.0


def test_diagonal_recovers_magnitude():
    rng = np.random.default_rng(11)
    vals = rng.uniform(-1, 1, size=32)
    gm = gasf_matrix(polar_of(vals)).values
    rec = np.sqrt((np.diag(gm) + 1.0) / 2.0)
    assert np.abs(rec - np.abs(vals)).max() < 1e-10


def test_encode_image_endpoints_and_midpoint():
    gm = GramMatrix(np.array([[1.0, -1.0], [-1.0, 0.0]]))
    img = encode_image(gm)
    assert img.pixels[0, 0, 0] == 255
    assert img.pixels[0, 1, 0] == 0
    # round-half-up: (0+1)/2*255 = 127.5 -> 128
    assert img.pixels[1, 1, 0] == 128
    assert np.array_equal(img.pixels[:, :, 0], img.pixels[:, :, 1])
    assert np.array_equal(img.pixels[:, :, 0], img.pixels[:, :, 2])


def test_encode_image_monotone():
    vals = np.linspace(-1, 1, 101)
    img = encode_image(GramMatrix(np.diag(vals)))
    diag = np.diag(img.pixels[:, :, 0]).astype(int)
    assert (np.diff(diag) >= 0).all()


def test_resize_identity():
    rng = np.random.default_rng(1)
    img = ScenarioImage(rng.integers(0, 256, size=(16, 16, 3)).astype(np.uint8))
    out = resize_bilinear(img, 16, 16)
    assert np.array_equal(out.pixels, img.pixels)


def test_resize_constant_stays_constant():
    img = ScenarioImage(np.full((7, 7, 3), 77, dtype=np.uint8))
    out = resize_bilinear(img, 224, 224)
    assert (out.pixels == 77).all()


def test_resize_checkerboard_center():
    board = np.array([[0, 255], [255, 0]], dtype=np.uint8)
    img = ScenarioImage(np.repeat(board[:, :, None], 3, axis=2))
    out = resize_bilinear(img, 3, 3)
    # center sample at (0.5, 0.5): bilinear average of all four corners
    assert out.pixels[1, 1, 0] == 128
    assert out.pixels[0, 0, 0] == 0 and out.pixels[2, 2, 0] == 0


def test_gram_cache_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    grams = [gasf_matrix(polar_of(rng.uniform(-1, 1, size=8))) for _ in range(4)]
    path = tmp_path / "grams.bin"
    save_gram_cache(grams, path)
    loaded = load_gram_cache(path)
    assert len(loaded) == 4
    for a, b in zip(grams, loaded):
        assert np.array_equal(a.values, b.values)


def test_image_cache_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    images = [
        ScenarioImage(rng.integers(0, 256, size=(12, 12, 3)).astype(np.uint8)) for _ in range(3)
    ]
    path = tmp_path / "imgs.bin"
    save_image_cache(images, path)
    loaded = load_image_cache(path)
    assert len(loaded) == 3
    for a, b in zip(images, loaded):
        assert np.array_equal(a.pixels, b.pixels)


def test_png_export(tmp_path):
    img = ScenarioImage(np.full((5, 5, 3), 10, dtype=np.uint8))
    from dtsa.gasf import export_png

    path = tmp_path / "img.png"
    export_png(img, path)
    from PIL import Image

    back = np.asarray(Image.open(path))
    assert np.array_equal(back, img.pixels)
