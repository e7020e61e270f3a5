import numpy as np
import pytest

import lhtclip

CONFIG = {
    "layers": 3,
    "heads": 2,
    "width": 16,
    "patch_size": 4,
    "image_size": 16,
    "projection_dim": 8,
}

LHT = {
    "variant": "clearclip",
    "atr": {"enabled": True, "threshold": 0.5},
    "ssr": {"enabled": True, "alpha": 0.1, "start_layer": 2, "end_layer": 2},
    "she": {"enabled": True, "heads": [[1, 1], [2, 2]], "beta": 0.7},
}


def toy_model(seed=0):
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in lhtclip.expected_shapes(CONFIG).items():
        t = rng.normal(0.0, 0.2, size=shape).astype(np.float32)
        if "gain" in name:
            t += 1.0
        tensors[name] = t
    return lhtclip.Model.from_tensors(CONFIG, tensors)


def image(h=16, w=16, seed=1):
    return np.random.default_rng(seed).random((h, w, 3), dtype=np.float32)


def test_forward_matches_layer_by_layer():
    m = toy_model()
    img = image()
    r = lhtclip.forward(m, img, tap_layers=[0, 1, 2, 3])
    assert r["features"].shape == (16, 8)
    assert (r["grid_h"], r["grid_w"]) == (4, 4)
    x = lhtclip.tokenize(m, img)
    np.testing.assert_array_equal(x, r["layers"][0])
    for layer in (1, 2, 3):
        x = lhtclip.layer_forward(m, x, 4, 4, layer)
        np.testing.assert_array_equal(x, r["layers"][layer])


def test_ssr_alpha_zero_is_standard():
    m = toy_model()
    x = lhtclip.tokenize(m, image())
    a = lhtclip.layer_forward(m, x, 4, 4, 1)
    b = lhtclip.layer_forward(m, x, 4, 4, 1, alpha=0.0)
    assert np.max(np.abs(a - b)) <= 1e-6


def test_strategy_is_deterministic_across_threads():
    m = toy_model(3)
    img = image(seed=4)
    ref = lhtclip.forward(m, img, LHT)["features"]
    for threads in (2, 5):
        np.testing.assert_array_equal(lhtclip.forward(m, img, LHT, threads=threads)["features"], ref)
    assert not np.array_equal(ref, lhtclip.forward(m, img)["features"])


def test_presets_round_trip():
    s = lhtclip.strategy_preset("vitb")
    assert s["she"]["heads"][:3] == [[8, 9], [8, 8], [7, 10]]
    with pytest.raises(lhtclip.ConfigError):
        lhtclip.strategy_preset("vitz")


def test_hoyer_and_detection():
    assert lhtclip.hoyer_score(np.eye(1, 768, 5)[0]) == pytest.approx(1.0, abs=1e-7)
    assert lhtclip.hoyer_score(np.full(768, -2.0)) == pytest.approx(0.0, abs=1e-7)
    assert lhtclip.hoyer_score([3, 1, 0, 0]) == pytest.approx(0.7350889, abs=1e-6)
    rng = np.random.default_rng(6)
    tokens = rng.normal(size=(1 + 49, 64)).astype(np.float32)
    tokens[1 + 24] = 0
    tokens[1 + 24, 7] = 40
    assert lhtclip.detect_abnormal(tokens, 7, 7, 0.5) == [24]
    fixed, unresolved = lhtclip.atr(tokens, 7, 7, [0])
    assert unresolved == 0
    np.testing.assert_allclose(fixed[1], tokens[[2, 8, 9]].mean(axis=0), atol=1e-6)


def test_auc_matches_brute_force_with_ties():
    rng = np.random.default_rng(7)
    for _ in range(50):
        n = int(rng.integers(2, 40))
        s = rng.integers(0, 4, size=n).astype(np.float32)
        pos = [True, False] + list(rng.random(n - 2) < 0.5)
        assert lhtclip.auc_rank(s, pos) == lhtclip.auc_brute_force(s, pos)


def test_she_mask_rows_and_identity():
    rng = np.random.default_rng(8)
    heads = [rng.normal(size=(1 + 25, 8)).astype(np.float32) for _ in range(2)]
    mask = lhtclip.she_mask(heads, beta=0.3)
    assert mask.shape == (25, 25)
    np.testing.assert_allclose(mask.sum(axis=1), 1.0, atol=1e-5)
    x = rng.normal(size=(26, 4)).astype(np.float32)
    ident = lhtclip.she_mask(heads[:1], beta=1.0)
    np.testing.assert_allclose(lhtclip.apply_she(x, 5, 5, ident), x, atol=1e-6)


def test_miou_fixtures():
    X = 255
    gt = np.array([0] * 6 + [1] * 10).reshape(4, 4)
    pred = np.array([0, 0, 0, X, X, X, 1, 1, 1, 1, 1, X, X, X, X, X]).reshape(4, 4)
    r = lhtclip.miou(pred, gt, classes=2)
    assert r["intersection"] == [3, 5] and r["union"] == [6, 10] and r["miou"] == 0.5
    assert lhtclip.miou(gt, gt, classes=2)["miou"] == 1.0
    assert lhtclip.miou(1 - gt, gt, classes=2)["miou"] == 0.0
    with pytest.raises(lhtclip.DataError):
        lhtclip.miou(gt + 5, gt, classes=2)


def test_slide_segment_shape_and_threads():
    m = toy_model(9)
    text = lhtclip.TextEmbeddings(["a", "b", "c"], np.random.default_rng(10).normal(size=(3, 8)))
    img = image(20, 30, seed=11)
    a = lhtclip.slide_segment(m, img, text, LHT, short_side=16, crop=16, stride=8)
    b = lhtclip.slide_segment(m, img, text, LHT, short_side=16, crop=16, stride=8, threads=3)
    assert a.shape == (20, 30) and a.dtype == np.int32
    assert a.min() >= 0 and a.max() < 3
    np.testing.assert_array_equal(a, b)
    with pytest.raises(lhtclip.ConfigError):
        lhtclip.slide_segment(m, img, text, crop=15, stride=8)


def test_containers_weights_and_parity(tmp_path):
    m = toy_model(12)
    path = tmp_path / "toy.lhtw"
    m.save(path)
    loaded = lhtclip.load_weights(path)
    assert loaded.config["layers"] == 3
    img = image(seed=13)
    np.testing.assert_array_equal(lhtclip.forward(loaded, img)["features"],
                                  lhtclip.forward(m, img)["features"])

    probe = tmp_path / "probe.lhtw"
    lhtclip.make_probe(m, img, probe)
    worst, per_tensor = lhtclip.check_parity(loaded, probe)
    assert worst == 0.0 and set(per_tensor) >= {"layer_0", "layer_3", "features"}

    meta, tensors = lhtclip.read_container(probe)
    tensors["layer_2"][3, 1] += 0.1 * np.abs(tensors["layer_2"]).max()
    lhtclip.write_container(tmp_path / "bad.lhtw", tensors, meta)
    worst, _ = lhtclip.check_parity(loaded, tmp_path / "bad.lhtw")
    assert worst > 1e-3


def test_bad_inputs_raise():
    m = toy_model()
    with pytest.raises(lhtclip.ShapeError):
        lhtclip.forward(m, np.zeros((16, 16), np.float32))
    with pytest.raises(lhtclip.DataError):
        lhtclip.load_weights("/nonexistent.lhtw")
    assert issubclass(lhtclip.ConfigError, lhtclip.LhtError)
