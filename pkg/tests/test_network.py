import numpy as np
import pytest

from conftest import tiny_config, tiny_model
from regionaug import network
from regionaug.geometry import BoxRegion
from regionaug.network import ShapeError


class TestExtractFeatures:
    def test_zero_image_finite(self, model):
        fp = network.extract_features(model, np.zeros((32, 32, 3)))
        for lvl in fp.levels:
            assert np.all(np.isfinite(lvl))
        assert np.all(np.isfinite(fp.global_feature))

    def test_deterministic(self, model, rng):
        img = rng.random((32, 32, 3))
        a = network.extract_features(model, img)
        b = network.extract_features(model, img)
        for la, lb in zip(a.levels, b.levels):
            np.testing.assert_array_equal(la, lb)
        np.testing.assert_array_equal(a.global_feature, b.global_feature)

    def test_level_shapes_match_strides(self, cfg, model, rng):
        fp = network.extract_features(model, rng.random((32, 32, 3)))
        strides = [lv.stride for lv in cfg.pyramid]
        assert [l.shape[1:] for l in fp.levels] == [(32 // s, 32 // s) for s in strides]
        assert fp.global_feature.shape == (cfg.model_config().feature_dim,)

    def test_wrong_size_rejected(self, model, rng):
        with pytest.raises(ShapeError):
            network.extract_features(model, rng.random((16, 16, 3)))


class TestConfidence:
    def test_uniform_logits_give_one_over_n(self, cfg, model, rng):
        model.params["classifier.w"][:] = 0
        model.params["classifier.b"][:] = 0
        img = rng.random((32, 32, 3))
        assert network.confidence(model, img, 2) == pytest.approx(1 / cfg.num_classes)

    def test_probabilities_sum_to_one(self, cfg, model, rng):
        img = rng.random((32, 32, 3))
        total = sum(network.confidence(model, img, c) for c in range(cfg.num_classes))
        assert total == pytest.approx(1.0, abs=1e-6)

    def test_in_open_interval(self, cfg, model, rng):
        for _ in range(5):
            p = network.confidence(model, rng.random((32, 32, 3)), 0)
            assert 0.0 < p < 1.0

    def test_invalid_class_rejected(self, cfg, model, rng):
        with pytest.raises(ValueError):
            network.confidence(model, rng.random((32, 32, 3)), cfg.num_classes)

    def test_region_crop_resized_automatically(self, model, rng):
        big = rng.random((50, 70, 3))
        p = network.confidence(model, big, 1)
        assert 0.0 < p < 1.0


class TestCropAndResize:
    def test_full_image_identity(self, rng):
        img = rng.random((8, 8, 3))
        out = network.crop_and_resize(img, BoxRegion(0, 0, 8, 8), (8, 8))
        np.testing.assert_allclose(out, img)

    def test_constant_image(self):
        img = np.full((10, 10, 3), 0.6)
        out = network.crop_and_resize(img, BoxRegion(2, 3, 7, 9), (5, 5))
        np.testing.assert_allclose(out, 0.6, atol=1e-12)

    def test_values_stay_in_range(self, rng):
        img = rng.random((16, 16, 3))
        out = network.crop_and_resize(img, BoxRegion(1.3, 2.7, 11.2, 14.9), (32, 32))
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_checkerboard_2x_upsample(self):
        img = np.zeros((2, 2, 1))
        img[0, 0, 0] = img[1, 1, 0] = 1.0
        out = network.crop_and_resize(img, BoxRegion(0, 0, 2, 2), (4, 4))
        expected = np.array([
            [1.0, 0.75, 0.25, 0.0],
            [0.75, 0.625, 0.375, 0.25],
            [0.25, 0.375, 0.625, 0.75],
            [0.0, 0.25, 0.75, 1.0],
        ])
        np.testing.assert_allclose(out[:, :, 0], expected, atol=1e-12)


class TestForwardSafety:
    def test_no_nan_on_random_inputs(self, cfg, model, rng):
        for _ in range(5):
            fp = network.extract_features(model, rng.random((32, 32, 3)))
            assert np.all(np.isfinite(fp.global_feature))


class TestCheckpoints:
    def test_round_trip_bit_exact(self, cfg, tmp_path, rng):
        model = tiny_model(cfg, dtype=np.float32)
        path = tmp_path / "model.drna"
        network.save_checkpoint(model, path, extra={"note": "x"})
        loaded, extra = network.load_checkpoint(path)
        assert extra == {"note": "x"}
        assert loaded.config == model.config
        assert set(loaded.params) == set(model.params)
        for k in model.params:
            np.testing.assert_array_equal(loaded.params[k], model.params[k])
        img = rng.random((32, 32, 3)).astype(np.float32)
        assert network.confidence(loaded, img, 0) == network.confidence(model, img, 0)

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "junk.drna"
        p.write_bytes(b"not a checkpoint")
        with pytest.raises(ValueError):
            network.load_checkpoint(p)

    def test_parameter_count_pure_function_of_config(self):
        a = tiny_model(tiny_config(), seed=0)
        b = tiny_model(tiny_config(), seed=99)
        assert {k: v.shape for k, v in a.params.items()} == \
               {k: v.shape for k, v in b.params.items()}
