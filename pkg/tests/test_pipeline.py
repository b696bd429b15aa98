import math

import numpy as np
import pytest

from kwt_tiny.isa import AluOp
from kwt_tiny.model import KWT_TINY, ModelConfig, QuantParams, tensor_layout, weight_set_from_arrays
from kwt_tiny.pipeline import Engine, Mode, classify, embed, infer, self_attention, transformer_block
from kwt_tiny.profiler import CATEGORIES, Profiler
from kwt_tiny.quantizer import quantize_weight_set
from kwt_tiny.tensor_core import ArenaError, Tensor2D, layer_norm
from oracles import float_forward, quantized_forward

# largest float-vs-mode logit deviation measured on the shipped fixture (0.279 quantized,
# 0.256 accelerated), frozen with headroom as a regression bound
LOGIT_DEV_BOUND = 0.30


def weights(cfg, **fixed):
    """Random weight set; ``fixed`` overrides tensors by name (callables get the shape)."""
    rng = np.random.default_rng(0)
    arrays = {}
    for name, kind, shape in tensor_layout(cfg):
        if name in fixed:
            v = fixed[name]
            arrays[name] = v(shape) if callable(v) else np.asarray(v, dtype=np.float64).reshape(shape)
        elif kind == "norm":
            arrays[name] = np.ones(shape) if name.endswith("gamma") else np.zeros(shape)
        else:
            arrays[name] = rng.uniform(-1, 1, shape)
    return weight_set_from_arrays(cfg, arrays)


ZERO = np.zeros
TINY3 = ModelConfig((2, 2), (2, 1), 2, 1, 1, 4, 2, 3, 2)


class TestEmbed:
    def test_all_zero(self):
        ws = weights(KWT_TINY, w0=ZERO, x_pos=ZERO, class_token=ZERO)
        out = embed(np.random.default_rng(1).uniform(-5, 5, (16, 26)), ws)
        assert out.shape == (27, 12) and not out.data.any()

    def test_identity_projection(self):
        cfg = ModelConfig((4, 3), (4, 1), 4, 1, 1, 8, 4, 4, 2)
        ws = weights(cfg, w0=lambda s: np.eye(4), x_pos=ZERO)
        spec = np.arange(12.0).reshape(4, 3)
        out = embed(spec, ws).data
        for t in range(3):
            np.testing.assert_array_equal(out[t + 1], spec[:, t])
        np.testing.assert_array_equal(out[0], ws.class_token[0])

    def test_shape_checked(self):
        with pytest.raises(ValueError):
            infer(np.zeros((26, 16)), weights(KWT_TINY))


class TestAttention:
    def test_zero_values(self):
        ws = weights(KWT_TINY, **{"layers.0.wv": ZERO})
        x = Tensor2D.from_values(np.random.default_rng(2).standard_normal((27, 12)))
        assert not self_attention(x, ws).data.any()

    def test_single_position(self):
        cfg = ModelConfig((2, 0), (2, 1), 2, 1, 1, 4, 2, 1, 2)
        ws = weights(cfg)
        x = np.array([[0.7, -1.3]])
        lw = ws.layers[0]
        expected = (x @ lw.wv) @ lw.w_out  # softmax over one score is exactly 1
        np.testing.assert_allclose(self_attention(Tensor2D.from_values(x), ws).data, expected, atol=1e-15)

    def test_three_by_two_step_by_step(self):
        ws = weights(TINY3)
        lw = ws.layers[0]
        x = np.array([[0.5, -1.0], [2.0, 0.25], [-0.75, 1.5]])
        q, k, v = x @ lw.wq, x @ lw.wk, x @ lw.wv
        s = q @ k.T / math.sqrt(2)
        p = np.exp(s - s.max(axis=1, keepdims=True))
        p /= p.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(self_attention(Tensor2D.from_values(x), ws).data, p @ v @ lw.w_out, atol=1e-14)

    def test_float_softmax_rows_sum_to_one(self):
        engine = Engine(weights(KWT_TINY))
        rng = np.random.default_rng(3)
        with engine.prof.stage("self_attention"):
            for _ in range(200):
                row = engine._softmax_row(Tensor2D.from_values(rng.uniform(-30, 30, (1, 27))))
                assert abs(row.data.sum() - 1.0) < 1e-9


class TestBlock:
    def test_all_zero_weights(self):
        ws = weights(KWT_TINY, **{n: ZERO for n, k, _ in tensor_layout(KWT_TINY) if k != "norm"})
        x = Tensor2D.from_values(np.zeros((27, 12)))
        assert not transformer_block(x, ws).data.any()

    def test_residual_wiring(self):
        ws = weights(KWT_TINY, **{"layers.0.wv": ZERO, "layers.0.w2": ZERO, "layers.0.b2": ZERO})
        lw = ws.layers[0]
        x = Tensor2D.from_values(np.random.default_rng(4).standard_normal((27, 12)))
        twice = layer_norm(layer_norm(x, lw.ln1_gamma, lw.ln1_beta, 1e-5), lw.ln2_gamma, lw.ln2_beta, 1e-5)
        np.testing.assert_allclose(transformer_block(x, ws).data, twice.data, atol=1e-12)


class TestClassify:
    def test_bias_only_head(self):
        ws = weights(KWT_TINY, head_w=ZERO, head_b=[0.25, -1.5])
        logits, arg = classify(Tensor2D.from_values(np.ones((27, 12))), ws)
        assert logits.tolist() == [0.25, -1.5] and arg == 0

    def test_tie_goes_to_lowest_index(self):
        ws = weights(KWT_TINY, head_w=ZERO, head_b=[0.5, 0.5])
        assert classify(Tensor2D.from_values(np.ones((27, 12))), ws)[1] == 0

    def test_head_column_equivariance(self, shipped):
        ws = shipped.ws
        swapped = weight_set_from_arrays(ws.config, {
            **{n: a for n, _, a in ws.tensors()},
            "head_w": ws.head_w[:, ::-1],
            "head_b": ws.head_b[::-1],
        })
        for x in shipped.inputs[:10]:
            np.testing.assert_array_equal(infer(x, swapped).logits, infer(x, ws).logits[::-1])


class TestAgainstOracles:
    def test_float_matches_reference(self, shipped):
        for x, got in zip(shipped.inputs, shipped.float_logits):
            np.testing.assert_allclose(got, float_forward(x, shipped.ws), rtol=0, atol=1e-12)

    def test_quantized_matches_integer_reference(self, shipped):
        for x, got in zip(shipped.inputs, shipped.quant_logits):
            np.testing.assert_allclose(got, quantized_forward(x, shipped.qws), rtol=0, atol=1e-12)

    @pytest.mark.parametrize("heads,depth", [(2, 1), (1, 3), (3, 2)])
    def test_float_matches_reference_other_shapes(self, heads, depth):
        cfg = ModelConfig((6, 5), (6, 1), 8, depth, heads, 16, 4, 6, 3)
        ws = weights(cfg)
        x = np.random.default_rng(heads * 10 + depth).uniform(-3, 3, (6, 5))
        np.testing.assert_allclose(infer(x, ws).logits, float_forward(x, ws), rtol=0, atol=1e-12)
        q, _ = quantize_weight_set(ws, QuantParams(6, 8))
        np.testing.assert_allclose(infer(x, q, Mode.QUANTIZED).logits, quantized_forward(x, q), rtol=0, atol=1e-12)


class TestModes:
    def test_weight_form_must_match_mode(self, shipped):
        with pytest.raises(ValueError):
            Engine(shipped.ws, Mode.ACCELERATED)
        with pytest.raises(ValueError):
            Engine(shipped.qws, Mode.FLOAT)
        assert Engine(shipped.qws).mode == Mode.QUANTIZED

    def test_mode_aliases(self):
        assert Mode.parse("quant") is Mode.QUANTIZED
        assert Mode.parse("accel") is Mode.ACCELERATED
        with pytest.raises(ValueError):
            Mode.parse("fast")

    def test_deterministic(self, shipped):
        x = shipped.inputs[3]
        for ws, mode in ((shipped.ws, Mode.FLOAT), (shipped.qws, Mode.QUANTIZED), (shipped.qws, Mode.ACCELERATED)):
            a, b = infer(x, ws, mode).logits, infer(x, ws, mode).logits
            assert a.tobytes() == b.tobytes()

    def test_logit_deviation_bounded(self, shipped):
        for other in (shipped.quant_logits, shipped.accel_logits):
            dev = np.abs(other - shipped.float_logits).max(axis=1)
            assert dev.max() <= LOGIT_DEV_BOUND
            flipped = shipped.float_logits.argmax(axis=1) != other.argmax(axis=1)
            gaps = np.abs(np.diff(shipped.float_logits, axis=1))[:, 0]
            # a flip needs the float margin to be within the two logits' combined movement
            assert np.all(gaps[flipped] <= 2 * LOGIT_DEV_BOUND)

    def test_accelerated_routes_every_lookup_through_the_unit(self, shipped):
        prof = Profiler("accelerated")
        engine = Engine(shipped.qws, Mode.ACCELERATED, prof)
        engine.run(shipped.inputs[0])
        c, executed = prof.counters, engine.unit.executed
        assert c["lut_exp"] == executed[AluOp.ALU_EXP] == 27 * 27
        assert c["lut_invert"] == executed[AluOp.ALU_INVERT]
        assert c["lut_gelu"] == executed[AluOp.ALU_GELU] == 27 * 24
        assert c["lut_to_fixed"] == executed[AluOp.ALU_TO_FIXED]
        assert c["lut_to_float"] == executed[AluOp.ALU_TO_FLOAT]
        assert c["float_div"] == c["erf"] == c["exp"] == 0


class TestArenaUse:
    def test_preset_high_water(self, shipped):
        for ws, mode in ((shipped.ws, Mode.FLOAT), (shipped.qws, Mode.ACCELERATED)):
            r = infer(shipped.inputs[0], ws, mode)
            assert r.high_water == 648 and r.bank_high_water == (648, 648)

    def test_overflow_is_hard_error(self):
        # residual stream wider than the MLP bank
        cfg = ModelConfig((4, 3), (4, 1), 16, 1, 1, 8, 4, 4, 2)
        with pytest.raises(ArenaError):
            infer(np.ones((4, 3)), weights(cfg))


class TestProfile:
    def test_partitions(self, shipped):
        for ws, mode in ((shipped.ws, Mode.FLOAT), (shipped.qws, Mode.QUANTIZED), (shipped.qws, Mode.ACCELERATED)):
            rep = infer(shipped.inputs[1], ws, mode, profiler=Profiler(mode.value)).report
            assert rep.total == sum(rep.categories.values()) == sum(rep.stages.values())
            for stage, cats in rep.stage_categories.items():
                assert sum(cats.values()) == rep.stages[stage]
            assert list(rep.categories) == list(CATEGORIES)

    def test_text_is_stable(self, shipped):
        rep = infer(shipped.inputs[1], shipped.ws, profiler=Profiler()).report
        text = rep.to_text()
        assert text.splitlines()[0].startswith("cost units per operation (float mode)")
        assert text == infer(shipped.inputs[1], shipped.ws, profiler=Profiler()).report.to_text()

    def test_charge_outside_stage(self):
        with pytest.raises(RuntimeError):
            Profiler().charge("other", 1)
