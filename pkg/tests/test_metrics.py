import math

import numpy as np
import pytest

from sgwgan.errors import InvalidInput, MalformedFile, RangeMismatch, ShapeMismatch, TooSmall
from sgwgan.metrics import (
    ImageBuffer,
    gaussian_window,
    psnr,
    read_image,
    read_pnm,
    ssim,
    write_pnm,
    write_raw_image,
)


def img(px, r=255.0):
    return ImageBuffer(np.asarray(px, dtype=float), r)


def test_psnr_identical_is_inf(rng):
    a = img(rng.integers(0, 256, (16, 16)))
    assert psnr(a, a) == math.inf


def test_psnr_constant_offset():
    a = img(np.full((16, 16), 100.0))
    b = img(np.full((16, 16), 116.0))
    expected = 10 * math.log10(65025 / 256)
    assert psnr(a, b) == pytest.approx(expected, abs=1e-12)
    assert psnr(a, b) == pytest.approx(24.05, abs=0.01)


def test_psnr_single_pixel():
    a = np.zeros((16, 16))
    b = a.copy()
    b[3, 7] = 255
    assert psnr(img(a), img(b)) == pytest.approx(10 * math.log10(256), abs=1e-12)
    assert psnr(img(a), img(b)) == pytest.approx(24.08, abs=0.01)


def test_psnr_symmetric(rng):
    a, b = img(rng.integers(0, 256, (12, 9, 3))), img(rng.integers(0, 256, (12, 9, 3)))
    assert psnr(a, b) == pytest.approx(psnr(b, a), abs=1e-12)


def test_psnr_decreases_with_noise(rng):
    base = rng.uniform(60, 190, (32, 32))
    noise = rng.normal(size=(32, 32))
    vals = [psnr(img(base), img(np.clip(base + amp * noise, 0, 255))) for amp in (2.0, 8.0, 20.0)]
    assert vals[0] > vals[1] > vals[2]


def test_errors():
    with pytest.raises(ShapeMismatch):
        psnr(img(np.zeros((4, 4))), img(np.zeros((4, 5))))
    with pytest.raises(RangeMismatch):
        psnr(img(np.zeros((4, 4))), img(np.zeros((4, 4)), 1.0))
    with pytest.raises(TooSmall):
        ssim(img(np.zeros((10, 20))), img(np.zeros((10, 20))))
    with pytest.raises(InvalidInput):
        img(np.full((3, 3), 300.0))
    with pytest.raises(InvalidInput):
        img(np.zeros((3, 3, 2)))


def test_ssim_identical(rng):
    a = img(rng.integers(0, 256, (24, 20)))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    c = img(rng.integers(0, 256, (24, 20, 3)))
    assert ssim(c, c) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("ma,mb", [(10.0, 200.0), (128.0, 129.0), (0.0, 255.0)])
def test_ssim_constant_images(ma, mb):
    c1 = (0.01 * 255) ** 2
    expected = (2 * ma * mb + c1) / (ma**2 + mb**2 + c1)
    got = ssim(img(np.full((16, 16), ma)), img(np.full((16, 16), mb)))
    assert got == pytest.approx(expected, abs=1e-9)


def test_ssim_symmetric_and_bounded(rng):
    for _ in range(10):
        a = img(rng.integers(0, 256, (20, 22)))
        b = img(rng.integers(0, 256, (20, 22)))
        s = ssim(a, b)
        assert -1 <= s <= 1
        assert s == pytest.approx(ssim(b, a), abs=1e-12)
    inv = img(255.0 - a.pixels[:, :, 0])
    assert -1 <= ssim(a, inv) < 0


def test_ssim_valid_region_matches_direct_window(rng):
    a = rng.uniform(0, 255, (13, 12))
    b = rng.uniform(0, 255, (13, 12))
    w1 = gaussian_window()
    w = np.outer(w1, w1)
    c1, c2 = (0.01 * 255) ** 2, (0.03 * 255) ** 2
    vals = []
    for i in range(13 - 10):
        for j in range(12 - 10):
            pa, pb = a[i : i + 11, j : j + 11], b[i : i + 11, j : j + 11]
            ma, mb = (w * pa).sum(), (w * pb).sum()
            va = (w * (pa - ma) ** 2).sum()
            vb = (w * (pb - mb) ** 2).sum()
            cov = (w * (pa - ma) * (pb - mb)).sum()
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
    assert ssim(img(a), img(b)) == pytest.approx(np.mean(vals), abs=1e-10)


def test_pnm_round_trip(tmp_path, rng):
    for ch in (1, 3):
        a = img(rng.integers(0, 256, (5, 4, ch)))
        p = tmp_path / f"x{ch}.pnm"
        write_pnm(a, p)
        back = read_pnm(p)
        np.testing.assert_array_equal(back.pixels, a.pixels)
        assert back.dynamic_range == 255


def test_pnm_comments_and_errors(tmp_path):
    p = tmp_path / "a.pgm"
    p.write_text("P2\n# comment\n2 2\n15\n0 1\n2 15\n")
    assert read_pnm(p).pixels[:, :, 0].tolist() == [[0, 1], [2, 15]]
    q = tmp_path / "b.pgm"
    q.write_text("P2\n2 2\n15\n0 1 2\n")
    with pytest.raises(MalformedFile):
        read_pnm(q)
    r = tmp_path / "c.pgm"
    r.write_text("P5\n2 2\n15\n")
    with pytest.raises(MalformedFile):
        read_pnm(r)


def test_raw_image_round_trip(tmp_path, rng):
    a = img(rng.uniform(0, 1, (6, 7, 3)), 1.0)
    p = tmp_path / "x.raw"
    write_raw_image(a, p)
    back = read_image(p)
    assert back.pixels.tobytes() == a.pixels.tobytes() and back.dynamic_range == 1.0
