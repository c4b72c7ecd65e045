import json

import numpy as np
import pytest

import stegosan as sg


@pytest.fixture(scope="module")
def table():
    r = sg.FaceRenderer(8, 7)
    return sg.calibrate([r.canonical(i, e) for i in range(8) for e in range(7)])


def test_dct_round_trip():
    img = np.random.default_rng(0).uniform(-1, 1, (64, 64, 3)).astype(np.float32)
    coeffs = sg.image_dct(img)
    assert coeffs.shape == (8, 8, 64, 3)
    # DC of an orthonormal 8x8 block is 8 times the block mean.
    assert coeffs[0, 0, 0, 0] == pytest.approx(img[:8, :8, 0].mean() * 8, abs=1e-4)
    assert np.abs(sg.image_idct(coeffs) - img).max() < 1e-5
    assert sg.zigzag_order(8)[:3] == [(0, 0), (0, 1), (1, 0)]


def test_embed_extract(table):
    key = sg.derive_key(3, 5, 8, table)
    assert key == sg.StegoKey.from_json(key.to_json())
    assert len(set(key.positions)) == 8
    face = sg.FaceRenderer().canonical(5, 3)
    secret = np.eye(8, dtype=np.uint8)[2]
    stego = sg.embed(face, secret, key)
    assert np.abs(stego).max() <= 255
    assert (sg.extract(stego, key) == secret).all()
    assert (sg.extract(sg.quantize_pixels(stego), key, mode="quantized") == secret).all()
    with pytest.raises(sg.ConfigError):
        sg.extract(stego, key, mode="median")


def test_adversarial_sanitizer_recovers_identity(table):
    cfg = sg.SanitizerConfig()
    san = sg.reference_sanitizer(cfg, table)
    face = sg.FaceRenderer().render(6, 2, dx=0.3, brightness=(0.02, 0.0, -0.01))
    out = sg.adversarial_sanitize(san, face, y_id=6, y_ep=2, target=1)
    assert np.array_equal(out["sanitized"], sg.honest_sanitize(san, face, 6, 2, 1))
    y_id, bits, low = sg.recover_scheme1(out["stego"], 2, 1, table, cfg)
    assert (y_id, low) == (6, False)
    assert bits.tolist() == out["secret"].tolist() == np.eye(8, dtype=int)[6].tolist()
    assert json.loads(cfg.to_json())["scheme"] == 1


def test_scheme2_reconstruction(table):
    cfg = sg.SanitizerConfig()
    cfg.scheme, cfg.k, cfg.m_pool = 2, 36, 144
    san = sg.reference_sanitizer(cfg, table)
    face = sg.FaceRenderer().canonical(4, 6)
    out = sg.adversarial_sanitize(san, face, 4, 6, 0)
    y_id, y_ep, recon = sg.recover_scheme2(out["stego"], 6, 0, table, cfg)
    assert (y_id, y_ep) == (4, 6)
    assert np.mean((recon - face) ** 2) < 1e-3


def test_merge_and_errors():
    ok, dev, cross = sg.verify_random_merge(samples=1)
    assert ok and dev < 1e-5 and cross == 0
    assert sg.crc32(b"123456789") == 0xCBF43926
    with pytest.raises(sg.ShapeError):
        sg.image_idct(np.zeros((8, 8, 64), np.float32))
    assert issubclass(sg.ChecksumError, sg.FormatError)
