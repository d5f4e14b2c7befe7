import math
import os
import sys

import numpy as np
import pytest

import caststyle

HERE = os.path.dirname(os.path.abspath(__file__))
sys.path.insert(0, os.path.join(HERE, "..", "..", "tools"))


def unit_rows(rng, n, k):
    x = rng.standard_normal((n, k))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def brute_info_nce(anchor, positive, negatives, tau):
    total = 0.0
    for a, p, neg in zip(anchor, positive, negatives):
        if len(neg) == 0:
            continue
        layer = 0.0
        for b in range(a.shape[0]):
            pos = math.exp(a[b] @ p[b] / tau)
            denom = pos + sum(math.exp(a[b] @ n / tau) for n in neg)
            layer -= math.log(pos / denom)
        total += layer / a.shape[0]
    return total


def test_info_nce_worked_case():
    anchor = np.array([[1.0, 0.0, 0.0]])
    positive = np.array([[0.5, math.sqrt(0.75), 0.0]])
    negative = np.array([[0.1, 0.0, math.sqrt(0.99)]])
    got = caststyle.info_nce([anchor], [positive], [negative], 0.07)
    assert abs(got - math.log1p(math.exp(-0.4 / 0.07))) < 1e-9
    assert caststyle.info_nce([anchor], [positive], [np.zeros((0, 3))]) == 0.0


def test_info_nce_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(20):
        dims = rng.integers(2, 16, size=rng.integers(1, 5))
        b, n = int(rng.integers(1, 4)), int(rng.integers(0, 20))
        a = [unit_rows(rng, b, k) for k in dims]
        p = [unit_rows(rng, b, k) for k in dims]
        neg = [unit_rows(rng, n, k) for k in dims]
        assert caststyle.info_nce(a, p, neg, 0.07) == pytest.approx(brute_info_nce(a, p, neg, 0.07), rel=1e-9)


def test_adversarial_total_and_cycle():
    half = np.full((1, 1, 6, 6), 0.5)
    d_loss, g_loss = caststyle.adversarial_loss(half, half, half, half)
    assert -d_loss == pytest.approx(4 * math.log(0.5), abs=1e-12)
    assert g_loss == pytest.approx(-2 * math.log(0.5), abs=1e-12)
    assert caststyle.total_loss(1.0, 1.0, 1.0) == pytest.approx(3.2)
    x = np.random.default_rng(1).uniform(-1, 1, (2, 3, 4, 4))
    assert caststyle.cycle_loss(x, x, x, x) == 0.0
    assert caststyle.cycle_loss(x, x + 0.5, x, x) == pytest.approx(0.5)
    with pytest.raises(caststyle.NumericError):
        caststyle.total_loss(float("nan"), 1.0, 1.0)


def test_gram_matches_einsum():
    f = np.random.default_rng(2).standard_normal((2, 3, 4, 5))
    flat = f.reshape(2, 3, -1)
    np.testing.assert_allclose(caststyle.gram_matrix(f), np.einsum("bcn,bdn->bcd", flat, flat), rtol=1e-12)
    assert caststyle.gram_style_loss([f], [f]) == 0.0


def test_style_bank_fifo():
    rng = np.random.default_rng(3)
    bank = caststyle.StyleBank([4, 3], 5)
    rows = []
    for _ in range(4):
        code = [unit_rows(rng, 2, 4).astype(np.float32), unit_rows(rng, 2, 3).astype(np.float32)]
        bank.push(code)
        rows.extend(code[0])
    assert bank.occupancy == 5
    np.testing.assert_array_equal(bank.negatives()[0], np.stack(rows[-5:]))
    with pytest.raises(caststyle.ArgumentError):
        bank.push([unit_rows(rng, 1, 4).astype(np.float32)])


def test_image_round_trip_and_decode_error(tmp_path):
    img = np.random.default_rng(4).uniform(-1, 1, (1, 3, 16, 16)).astype(np.float32)
    path = tmp_path / "x.png"
    caststyle.save_image(img, path)
    back = caststyle.load_image(path, 16)
    assert back.shape == (1, 3, 16, 16)
    assert np.abs(back - img).max() <= 1.0 / 255 + 1e-6
    (tmp_path / "bad.jpg").write_bytes(b"not an image")
    with pytest.raises(caststyle.DecodeError, match="bad.jpg"):
        caststyle.load_image(tmp_path / "bad.jpg", 16)


def test_extractor_matches_torchvision(tmp_path):
    torch = pytest.importorskip("torch")
    torchvision = pytest.importorskip("torchvision")
    import convert_torchvision_vgg19 as conv

    torch.manual_seed(0)
    model = torchvision.models.vgg19(weights=None).eval()
    blob = tmp_path / "vgg.bin"
    conv.convert(model, str(blob))
    ours = caststyle.FeatureExtractor.load(blob)

    img = np.random.default_rng(5).uniform(-1, 1, (1, 3, 32, 32)).astype(np.float32)
    mean = torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1)
    std = torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1)
    x = ((torch.from_numpy(img) + 1) * 0.5 - mean) / std
    reference = []
    with torch.no_grad():
        for i, layer in enumerate(model.features[:25]):
            x = layer(x)
            if i in (3, 8, 15, 24):
                reference.append(x.numpy())
    for got, want in zip(ours.extract(img), reference):
        assert got.shape == want.shape
        np.testing.assert_allclose(got, want, rtol=1e-4, atol=1e-4 * np.abs(want).max())


def test_cli_train_then_stylize(tmp_path):
    art, real = caststyle.make_toy_corpus(tmp_path / "toy", per_style=2, photos=4, size=32, seed=0)
    cfg = tmp_path / "cfg.toml"
    cfg.write_text(
        "iterations = 2\nbatch = 2\nimage_size = 32\nbank_capacity = 8\nhead_hidden = 16\n"
        "[projector]\ncode_dims = [8, 8, 8, 8]\nhidden_widths = [8, 8, 8, 8]\n"
    )
    run = tmp_path / "run"
    assert caststyle.run_cli(["train", "--config", str(cfg), "--art-dir", str(art), "--real-dir", str(real),
                              "--out", str(run)]) == 0
    model = caststyle.Model.load(run / "checkpoint")
    assert model.step == 2
    assert caststyle.model_config(model)["image_size"] == 32
    content = np.random.default_rng(6).uniform(-1, 1, (1, 3, 40, 48)).astype(np.float32)
    style = caststyle.load_image(next(art.rglob("*.png")), 32)
    out = model.stylize(content, style)
    assert out.shape == (1, 3, 40, 48)
    assert np.isfinite(out).all() and np.abs(out).max() <= 1.0
    assert [c.shape[1] for c in model.style_code(style)] == [8, 8, 8, 8]
    assert model.extractor.content_loss(content, content) == 0.0
    assert caststyle.run_cli(["stylize", "--content", "a.png"]) == 1
    with pytest.raises(caststyle.IoError):
        caststyle.Model.load(tmp_path / "missing")


def test_deception_rate():
    assert caststyle.deception_rate(["a", "b", "a"], ["a", "a", "a"]) == pytest.approx(2 / 3)
    with pytest.raises(caststyle.ArgumentError):
        caststyle.deception_rate([], [])
