import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ian_forge.config import Config, ConfigError, apply_overrides, load_config, parse_config
from ian_forge.data import (
    SIDE,
    decode_pgm,
    disk_image,
    encode_pgm,
    generate,
    index_path,
    load_dataset,
    make_data,
    montage,
    read_points_csv,
    write_points_csv,
)


def test_ring_points_lie_in_the_band():
    pts, meta = generate("ring", 1000, 0)
    r = np.hypot(pts[:, 0], pts[:, 1])
    # uniform band plus N(0, 0.02) radial jitter; 5 sigma covers 1000 draws
    assert meta is None and pts.shape == (1000, 2)
    assert r.min() >= 0.8 - 5 * 0.02 and r.max() <= 1.0 + 5 * 0.02
    assert np.abs(pts).max() <= 1.0


def test_disks_have_radius_in_range():
    imgs, meta = generate("disks", 200, 3)
    assert imgs.shape == (200, SIDE * SIDE)
    assert set(np.unique(imgs)) <= {-1.0, 1.0}
    for img, m in zip(imgs, meta):
        assert 2.0 <= m["size"] <= 6.0
        assert np.array_equal(img, disk_image(m["cy"], m["cx"], m["size"]).ravel())
        lit = int((img > 0).sum())
        # disk fully inside the frame: pixel count is close to its area
        assert abs(lit - math.pi * m["size"] ** 2) < 2 * math.pi * m["size"] + 4


def test_crosses_stay_inside_the_frame():
    imgs, meta = generate("crosses", 200, 4)
    for img, m in zip(imgs, meta):
        a = m["size"]
        assert a <= m["cy"] < SIDE - a and a <= m["cx"] < SIDE - a
        assert img.reshape(SIDE, SIDE)[m["cy"], m["cx"]] == 1.0


def test_shifted_is_translated_blobs():
    a, _ = generate("blobs", 50, 7)
    b, _ = generate("shifted", 50, 7)
    assert np.allclose(b, np.clip(a + 0.25, -1, 1), atol=1e-15)


@pytest.mark.parametrize("kind", ["ring", "blobs", "shifted", "disks", "crosses"])
def test_generation_is_seeded(kind):
    assert np.array_equal(generate(kind, 20, 5)[0], generate(kind, 20, 5)[0])
    assert not np.array_equal(generate(kind, 20, 5)[0], generate(kind, 20, 6)[0])


def test_bad_requests():
    with pytest.raises(ValueError):
        generate("ring", 0, 0)
    with pytest.raises(ValueError):
        generate("spiral", 10, 0)


def test_points_csv_round_trip(tmp_path):
    pts = np.random.default_rng(0).normal(size=(17, 3))
    write_points_csv(tmp_path / "p.csv", pts)
    assert np.array_equal(read_points_csv(tmp_path / "p.csv"), pts)
    assert (tmp_path / "p.csv").read_bytes().startswith(b"x0,x1,x2\n")


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_pgm_round_trip_on_byte_grid(h, w, seed):
    levels = np.random.default_rng(seed).integers(0, 256, size=(h, w))
    img = levels / 127.5 - 1.0
    assert np.allclose(decode_pgm(encode_pgm(img)), img, atol=1e-12)


def test_pgm_header_and_comments():
    blob = b"P5\n# note\n2 1\n255\n" + bytes([0, 255])
    assert decode_pgm(blob).tolist() == [[-1.0, 1.0]]
    with pytest.raises(ValueError):
        decode_pgm(b"P2\n1 1\n255\n0")


def test_image_set_files(tmp_path):
    out = make_data("crosses", 5, 1, tmp_path / "c.pgm")
    data = load_dataset(out)
    assert np.array_equal(data, generate("crosses", 5, 1)[0])
    assert index_path(out).read_text().splitlines()[0] == "index,kind,cy,cx,size,half_width"
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "missing.csv")


def test_montage_layout():
    grid = np.arange(2 * 3 * 256, dtype=float).reshape(2, 3, 256)
    pic = montage(grid)
    assert pic.shape == (32, 48)
    assert np.array_equal(pic[16:32, 32:48], grid[1, 2].reshape(16, 16))


# ------------------------------------------------------------------ config

def test_config_round_trip_is_a_fixed_point():
    cfg = parse_config("[train]\nk = 8\nlr = 0.0002\n[model]\nmodel = kgan\n")
    text = cfg.to_ini()
    assert parse_config(text) == cfg
    assert parse_config(text).to_ini() == text


def test_defaults_match_train_config():
    tc = Config().train_config(2)
    assert (tc.k, tc.mu_hi, tc.mu_lo, tc.latent_dim) == (4, 0.0, 0.0, 8)  # vanilla zeroes mu
    assert Config().train_config(256).latent_dim == 32
    kg = apply_overrides(Config(), ["model.model=kgan"]).train_config(2)
    assert (kg.mu_hi, kg.mu_lo) == (0.001, 0.0001)


@pytest.mark.parametrize("text", [
    "[nope]\nx = 1\n",
    "[train]\nbogus = 1\n",
    "[train]\nk = four\n",
    "[model]\nmodel = diffusion\n",
    "not an ini",
])
def test_bad_configs_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_invalid_values_surface_as_config_errors():
    with pytest.raises(ConfigError):
        parse_config("[train]\nk = 0\n").train_config(2)


def test_overrides(tmp_path):
    cfg = apply_overrides(Config(), ["train.k=2", "eval.seed=9"])
    assert cfg["train"]["k"] == 2 and cfg["eval"]["seed"] == 9
    with pytest.raises(ConfigError):
        apply_overrides(Config(), ["k=2"])
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.ini")
