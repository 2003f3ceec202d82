import math

import numpy as np
import pytest

import slicefusion as sf


def test_hu_window_maps_onto_unit_interval():
    raw = np.array([[[1500.0, -2000.0, 0.0]]])
    np.testing.assert_array_equal(sf.hu_window(raw), [[[1.0, 0.0, 0.5]]])


def test_resize_identity_and_constant():
    rng = np.random.default_rng(0)
    v = rng.uniform(-1000, 1000, size=(3, 4, 5))
    np.testing.assert_array_equal(sf.resize(v, 3, 4, 5), v)
    np.testing.assert_array_equal(sf.resize(np.full((2, 2, 2), 7.0), 4, 3, 5), np.full((4, 3, 5), 7.0))


def test_mvol_round_trip(tmp_path):
    v = np.arange(24, dtype=np.float32).reshape(2, 3, 4).astype(np.float64)
    sf.write_mvol(v, tmp_path / "v.mvol")
    np.testing.assert_array_equal(sf.read_mvol(tmp_path / "v.mvol"), v)


def test_softmax_and_repeat_blocks():
    s = sf.softmax(np.array([math.log(2.0), 0.0]))
    np.testing.assert_allclose(s, [2 / 3, 1 / 3], atol=1e-12)
    r = sf.repeat_blocks(np.array([[1.0, 2.0], [3.0, 4.0]]), 2)
    np.testing.assert_array_equal(r, [[1, 2], [1, 2], [3, 4], [3, 4]])
    with pytest.raises(ValueError):
        sf.repeat_blocks(np.zeros((2, 2)), 0)


def test_metrics():
    assert sf.bleu([3, 1, 4, 1, 5], [3, 1, 4, 1, 5]) == pytest.approx(1.0)
    assert sf.rouge_l([1, 2, 3, 4], [1, 3, 4]) == pytest.approx(6 / 7)
    with pytest.raises(ValueError):
        sf.rouge_l([1], [])


def test_shape_errors_surface_as_value_error():
    with pytest.raises(sf.ShapeError):
        sf.transform_3d(np.zeros((5, 32)), sf.EncoderConfig())


def test_transform_3d_shape():
    cfg = sf.EncoderConfig()
    out = sf.transform_3d(np.zeros((cfg.tokens_3d, cfg.hidden)), cfg)
    assert out.shape == (cfg.depth, cfg.slice_tokens, cfg.hidden)


def test_pipeline_scores_form_a_distribution():
    params = sf.init_params(3)
    g = sf.generate_sample(1, 0)
    assert g["volume"].shape == (32, 64, 64)
    s = sf.slice_scores(params, g["volume"], g["instruction"])
    assert s.shape == (32,)
    assert s.min() > 0
    assert s.sum() == pytest.approx(1.0, abs=1e-12)
    feats = sf.image_features(params, g["volume"], g["instruction"], sf.Strategy.tgis)
    assert feats.shape == (144, 32)
    assert sf.image_features(params, g["volume"], g["instruction"], sf.Strategy.only_2d).shape == (16, 32)


def test_checkpoint_round_trip(tmp_path):
    p = sf.init_params(5)
    sf.save_checkpoint(p, tmp_path / "m.ckpt")
    q = sf.load_checkpoint(tmp_path / "m.ckpt")
    assert q.numel() == p.numel()
    assert q.config.encoder.hidden == 32


def test_gradcheck_passes():
    err, n = sf.gradcheck(0)
    assert n > 0
    assert err <= 1e-4


def test_attention_export():
    s = np.full(4, 0.25)
    csv = sf.scores_csv(s)
    assert len(csv.strip().splitlines()) == 5
    assert "<svg" in sf.scores_svg(s, "a<b")
