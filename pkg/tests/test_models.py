import numpy as np
import pytest

from stepseq import models, numerics as nm
from stepseq.models import ModelConfig, build_model
from stepseq.numerics import backward, zero_grads


def toy_config(kind, **kw):
    defaults = dict(
        input_dim=8,
        hidden=4,
        kernel_sizes=(3, 5, 7) if kind in ("conv_ensemble", "tsan") else (3,),
        num_classes=7,
        dropout_rate=0.5,
    )
    defaults.update(kw)
    return ModelConfig(kind=kind, **defaults)


class TestConfig:
    def test_rep_widths(self):
        h128 = dict(input_dim=16, hidden=128)
        assert models.rep_width(ModelConfig("lstm", **h128)) == 256
        assert models.rep_width(ModelConfig("tsan", **h128)) == 256
        assert models.rep_width(ModelConfig("conv_ensemble", **h128)) == 384
        assert models.rep_width(ModelConfig("conv1d", kernel_sizes=(5,), **h128)) == 128

    def test_conv1d_needs_one_kernel(self):
        with pytest.raises(ValueError):
            ModelConfig("conv1d", input_dim=8, kernel_sizes=(5, 25, 39))

    def test_tsan_needs_three_kernels(self):
        with pytest.raises(ValueError):
            ModelConfig("tsan", input_dim=8, kernel_sizes=(5,))

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError):
            ModelConfig("conv1d", input_dim=8, kernel_sizes=(4,))

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            ModelConfig("transformer", input_dim=8)

    def test_lstm_layers_bound(self):
        with pytest.raises(ValueError):
            ModelConfig("lstm", input_dim=8, lstm_layers=3)


class TestBuild:
    def test_full_scale_tsan_widths(self):
        cfg = ModelConfig("tsan", input_dim=2049, hidden=128)
        model = build_model(cfg, seed=0)
        for conv in model.backbone.convs:
            assert conv.weight.shape[1] == 2049
        assert model.backbone.lstms[0].in_channels == 2049
        assert model.backbone.lstms[1].in_channels == 640  # 3*128 + 256
        assert models.rep_width(cfg) == 256
        assert model.head.weight.shape == (256, 7)

    def test_single_layer_lstm_structure(self):
        model = build_model(toy_config("lstm", lstm_layers=1), seed=0)
        assert len(model.backbone.lstms) == 1
        assert len(model.backbone.convs) == 0

    def test_build_determinism(self):
        a = build_model(toy_config("tsan"), seed=5)
        b = build_model(toy_config("tsan"), seed=5)
        for pa, pb in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(pa.data, pb.data)

    def test_names_unique(self):
        model = build_model(toy_config("tsan"), seed=0)
        names = [p.name for p in model.parameters()]
        assert len(names) == len(set(names))


class TestForward:
    def test_tsan_output_shape(self):
        model = build_model(toy_config("tsan"), seed=1)
        out = models.backbone_forward(model, np.zeros((20, 8)))
        assert out.shape == (20, 8)  # 2H with H=4

    def test_zero_params_propagate(self):
        model = build_model(toy_config("tsan"), seed=2)
        for p in model.backbone.parameters():
            p.data[...] = 0.0
        out = models.backbone_forward(
            model, np.random.default_rng(0).normal(size=(9, 8))
        )
        np.testing.assert_array_equal(out.data, np.zeros((9, 8)))

    def test_inference_deterministic(self):
        model = build_model(toy_config("tsan"), seed=3)
        x = np.random.default_rng(1).normal(size=(12, 8))
        a = models.backbone_forward(model, x, training=False).data
        b = models.backbone_forward(model, x, training=False).data
        np.testing.assert_array_equal(a, b)

    def test_shape_contract_all_kinds(self):
        for kind in models.KINDS:
            cfg = toy_config(kind)
            model = build_model(cfg, seed=4)
            for length in (1, 9, 50):
                out = models.backbone_forward(model, np.ones((length, 8)))
                assert out.shape == (length, models.rep_width(cfg))

    def test_width_mismatch(self):
        model = build_model(toy_config("lstm"), seed=0)
        with pytest.raises(nm.ShapeError):
            models.backbone_forward(model, np.zeros((5, 9)))


class TestLogProbs:
    def test_rows_sum_to_one(self):
        model = build_model(toy_config("tsan"), seed=5)
        lp = models.step_log_probs(model, np.random.default_rng(2).normal(size=(6, 8)))
        np.testing.assert_allclose(np.exp(lp.data).sum(axis=1), 1.0, atol=1e-9)

    def test_zero_model_uniform(self):
        model = build_model(toy_config("lstm"), seed=6)
        for p in model.parameters():
            p.data[...] = 0.0
        lp = models.step_log_probs(model, np.ones((4, 8)))
        np.testing.assert_allclose(lp.data, np.log(1 / 7), rtol=1e-12)

    def test_head_bias_monotonicity(self):
        model = build_model(toy_config("tsan"), seed=7)
        x = np.random.default_rng(3).normal(size=(10, 8))
        before = models.step_log_probs(model, x).data
        model.head.bias.data[4] += 1.0
        after = models.step_log_probs(model, x).data
        assert np.all(after[:, 4] > before[:, 4])
        # argmax may only move toward the boosted class
        moved = np.argmax(after, axis=1) != np.argmax(before, axis=1)
        assert np.all(np.argmax(after, axis=1)[moved] == 4)


class TestPredict:
    def test_dominant_logit(self):
        model = build_model(toy_config("lstm"), seed=8)
        for p in model.parameters():
            p.data[...] = 0.0
        model.head.bias.data[3] = 10.0
        preds = models.predict_steps(model, np.ones((5, 8)))
        np.testing.assert_array_equal(preds, [3, 3, 3, 3, 3])

    def test_tie_breaks_to_lowest(self):
        model = build_model(toy_config("lstm"), seed=9)
        for p in model.parameters():
            p.data[...] = 0.0
        preds = models.predict_steps(model, np.ones((4, 8)))
        np.testing.assert_array_equal(preds, [0, 0, 0, 0])

    def test_against_row_scan(self):
        model = build_model(toy_config("conv_ensemble"), seed=10)
        x = np.random.default_rng(4).normal(size=(8, 8))
        lp = models.step_log_probs(model, x).data
        expected = []
        for row in lp:
            best, best_c = -np.inf, 0
            for c, v in enumerate(row):
                if v > best:
                    best, best_c = v, c
            expected.append(best_c)
        np.testing.assert_array_equal(models.predict_steps(model, x), expected)


class TestGradientFlow:
    def test_every_tsan_parameter_gets_gradient(self):
        model = build_model(toy_config("tsan"), seed=11)
        x = np.random.default_rng(5).normal(size=(12, 8))
        labels = np.random.default_rng(6).integers(0, 7, size=12)
        zero_grads(model.parameters())
        loss = nm.nll_loss(models.step_log_probs(model, x), labels)
        backward(loss)
        for p in model.parameters():
            assert np.any(p.grad != 0.0), f"dead parameter {p.name}"

    def test_training_dropout_changes_output(self):
        model = build_model(toy_config("tsan"), seed=12)
        x = np.random.default_rng(7).normal(size=(10, 8))
        base = models.backbone_forward(model, x, training=False).data
        dropped = models.backbone_forward(
            model, x, training=True, rng=np.random.default_rng(0)
        ).data
        assert not np.allclose(base, dropped)
