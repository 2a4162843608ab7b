import numpy as np
import pytest

from conftest import tiny_config, tiny_model
from regionaug import network, trainer
from regionaug.trainer import (ConfigError, NumericError, OptState, TrainConfig,
                               sgd_update, total_loss, train, train_step)


def make_batch(rng, n, num_classes=4, size=32):
    return [(rng.random((size, size, 3)), int(rng.integers(num_classes)))
            for _ in range(n)]


class TestTrainConfig:
    def test_paper_defaults(self):
        c = TrainConfig()
        assert (c.regions_m, c.regions_k) == (4, 2)
        assert (c.crop_threshold, c.drop_threshold) == (0.5, 0.5)
        assert (c.alpha, c.beta, c.gamma) == (1.0, 1.0, 1.0)
        assert (c.batch_size, c.momentum, c.weight_decay) == (8, 0.9, 1e-4)
        assert (c.initial_lr, c.lr_drop_epoch, c.lr_after_drop) == (1e-3, 20, 1e-4)

    def test_lr_schedule(self):
        c = TrainConfig()
        assert c.learning_rate(1) == 1e-3
        assert c.learning_rate(20) == 1e-3
        assert c.learning_rate(21) == 1e-4
        assert c.learning_rate(25) == 1e-4

    def test_invariants_enforced(self):
        with pytest.raises(ConfigError):
            TrainConfig(regions_k=5, regions_m=4)
        with pytest.raises(ConfigError):
            TrainConfig(crop_threshold=1.5)
        with pytest.raises(ConfigError):
            TrainConfig(initial_lr=0)


class TestTotalLoss:
    def test_all_zero(self):
        assert total_loss(0, 0, 0, 0, 1, 1, 1) == 0

    def test_direct_sum(self):
        assert total_loss(1, 2, 3, 4, 1, 1, 1) == 10

    def test_weights(self):
        assert total_loss(1, 2, 3, 4, 0.5, 2.0, 0.25) == 1 + 1 + 6 + 1


class TestSGD:
    def test_weight_decay_shrinks_exactly(self):
        cfg = tiny_config()
        model = tiny_model(cfg)
        opt = OptState()
        p0 = {k: v.copy() for k, v in model.params.items()}
        zero = {k: np.zeros_like(v) for k, v in model.params.items()}
        lr, wd = 0.1, 0.01
        sgd_update(model, zero, opt, lr, momentum=0.9, weight_decay=wd, grad_clip=0)
        for k in p0:
            np.testing.assert_allclose(model.params[k], p0[k] * (1 - lr * wd), rtol=1e-12)
        sgd_update(model, zero, opt, lr, momentum=0.9, weight_decay=wd, grad_clip=0)
        for k in p0:
            np.testing.assert_allclose(model.params[k], p0[k] * (1 - lr * wd) ** 2, rtol=1e-12)

    def test_momentum_recurrence_two_steps(self):
        cfg = tiny_config()
        model = tiny_model(cfg)
        opt = OptState()
        key = "classifier.w"
        p0 = model.params[key].copy()
        g1 = np.ones_like(p0)
        g2 = 2 * np.ones_like(p0)
        lr, mu = 0.1, 0.9
        sgd_update(model, {key: g1}, opt, lr, mu, weight_decay=0.0, grad_clip=0)
        sgd_update(model, {key: g2}, opt, lr, mu, weight_decay=0.0, grad_clip=0)
        # hand-unrolled: v1 = g1; v2 = mu*g1 + g2; p = p0 - lr*(v1 + v2)
        expected = p0 - lr * (g1 + mu * g1 + g2)
        np.testing.assert_allclose(model.params[key], expected, rtol=1e-6)

    def test_gradient_clipping_scales_norm(self):
        cfg = tiny_config()
        model = tiny_model(cfg)
        opt = OptState()
        key = "classifier.b"
        p0 = model.params[key].copy()
        g = np.full_like(p0, 100.0)
        sgd_update(model, {key: g}, opt, lr=1.0, momentum=0.0,
                   weight_decay=0.0, grad_clip=5.0)
        step = p0 - model.params[key]
        assert np.linalg.norm(step) == pytest.approx(5.0, rel=1e-5)


class TestTrainStep:
    def test_returns_all_terms_finite(self, cfg, model, rng):
        batch = make_batch(rng, 2)
        _, bd = train_step(model, batch, cfg, OptState(), 1e-3)
        for term in ("loss_i", "loss_s", "loss_c", "loss_a", "loss_total"):
            assert term in bd and np.isfinite(bd[term])
        assert bd["loss_total"] == pytest.approx(
            total_loss(bd["loss_i"], bd["loss_s"], bd["loss_c"], bd["loss_a"],
                       cfg.alpha, cfg.beta, cfg.gamma))

    def test_deterministic_given_seed(self, cfg, rng):
        batches = [make_batch(rng, 2) for _ in range(3)]

        def run():
            model = tiny_model(cfg, seed=7)
            opt = OptState()
            trace = []
            for bi, batch in enumerate(batches):
                drop_rngs = [np.random.default_rng((0, bi, i)) for i in range(len(batch))]
                _, bd = train_step(model, batch, cfg, opt, 1e-3, drop_rngs)
                trace.append(bd["loss_total"])
            return trace, model

        t1, m1 = run()
        t2, m2 = run()
        assert t1 == t2
        for k in m1.params:
            np.testing.assert_array_equal(m1.params[k], m2.params[k])

    def test_empty_batch_rejected(self, cfg, model):
        with pytest.raises(ValueError):
            train_step(model, [], cfg, OptState(), 1e-3)

    def test_nonfinite_loss_names_term(self, cfg, model, rng):
        model.params["fusion.out.w"][:] = np.inf
        with pytest.raises(NumericError, match="loss_s"):
            train_step(model, make_batch(rng, 2), cfg, OptState(), 1e-3)

    def test_baseline_variant_only_classification(self, rng):
        cfg = tiny_config(variant="backbone_only")
        model = tiny_model(cfg)
        _, bd = train_step(model, make_batch(rng, 2), cfg, OptState(), 1e-3)
        assert set(bd) == {"loss_s", "loss_total"}
        assert bd["loss_total"] == bd["loss_s"]

    def test_overfit_small_batch(self, rng):
        # loss drops sharply when repeating one batch
        cfg = tiny_config(num_classes=3)
        model = tiny_model(cfg, dtype=np.float32)
        batch = make_batch(rng, 3, num_classes=3)
        batch = [(img, i % 3) for i, (img, _) in enumerate(batch)]
        opt = OptState()
        first = None
        for step in range(150):
            _, bd = train_step(model, batch, cfg, opt, 5e-3)
            if first is None:
                first = bd["loss_s"]
        assert bd["loss_s"] < 0.05
        assert bd["loss_s"] < first


class TestTrainLoop:
    def _dataset(self, rng, n_train=8, n_test=4, num_classes=4):
        from regionaug.data import SplitArrays
        return SplitArrays(
            train_images=[rng.random((32, 32, 3)) for _ in range(n_train)],
            train_labels=np.arange(n_train) % num_classes,
            test_images=[rng.random((32, 32, 3)) for _ in range(n_test)],
            test_labels=np.arange(n_test) % num_classes,
            class_names=[f"c{i}" for i in range(num_classes)],
        )

    def test_zero_epochs_returns_initial(self, cfg, rng):
        model = tiny_model(cfg)
        before = {k: v.copy() for k, v in model.params.items()}
        out, records = train(model, self._dataset(rng), tiny_config(epochs=0))
        assert records == []
        for k in before:
            np.testing.assert_array_equal(out.params[k], before[k])

    def test_records_shape_and_lr(self, rng, tmp_path):
        cfg = tiny_config(epochs=2)
        model = tiny_model(cfg, dtype=np.float32)
        log = tmp_path / "log.jsonl"
        ckpt = tmp_path / "best.drna"
        _, records = train(model, self._dataset(rng), cfg,
                           log_path=log, checkpoint_path=ckpt)
        assert [r["epoch"] for r in records] == [1, 2]
        assert all(r["lr"] == cfg.initial_lr for r in records)
        assert all(0 <= r["top1"] <= r["top5"] <= 1 for r in records)
        assert ckpt.exists()
        assert len(log.read_text().splitlines()) == 2

    def test_checkpoint_round_trip_metrics(self, rng, tmp_path):
        from regionaug.evaluate import topk_accuracy
        from regionaug.trainer import predict
        cfg = tiny_config(epochs=1)
        ds = self._dataset(rng)
        model = tiny_model(cfg, dtype=np.float32)
        ckpt = tmp_path / "best.drna"
        model, records = train(model, ds, cfg, checkpoint_path=ckpt)
        loaded, extra = network.load_checkpoint(ckpt)
        probs, _, _ = predict(loaded, ds.test_images, cfg)
        assert topk_accuracy(probs, ds.test_labels, 1) == extra["top1"]

    def test_empty_split_rejected(self, cfg, rng):
        ds = self._dataset(rng)
        ds.test_images = []
        with pytest.raises(ConfigError):
            train(tiny_model(cfg), ds, cfg)
