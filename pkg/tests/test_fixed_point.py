import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kwt_tiny import fixed_point as fp
from oracles import exp_neg, gelu, softmax

LUTS = fp.default_luts()
STEP = 1 / 32


class TestConversions:
    def test_examples(self):
        assert fp.to_fixed(1.0) == 0x01000000
        assert fp.to_fixed(0.5) == 0x00800000
        assert fp.to_fixed(200.0) == 0x7FFFFFFF
        assert fp.to_fixed(-200.0) == -(1 << 31)
        assert fp.to_float(0x01000000) == 1.0
        assert fp.to_float(0) == 0.0
        assert abs(fp.to_float(fp.to_fixed(0.3)) - 0.3) < 2**-24

    def test_truncates_toward_zero(self):
        tiny = 2**-26
        assert fp.to_fixed(tiny) == 0
        assert fp.to_fixed(-tiny) == 0
        assert fp.to_fixed(-1.5 * 2**-24) == -1

    @given(st.floats(-127.99, 127.99, allow_nan=False))
    def test_round_trip(self, x):
        assert abs(fp.to_float(fp.to_fixed(x)) - x) < 2**-24

    def test_fixed_mul(self):
        assert fp.fixed_mul(fp.to_fixed(1.5), fp.to_fixed(-2.0)) == fp.to_fixed(-3.0)
        assert fp.fixed_mul(fp.to_fixed(100.0), fp.to_fixed(100.0)) == fp.RAW_MAX
        assert fp.fixed_mul(fp.to_fixed(-100.0), fp.to_fixed(100.0)) == fp.RAW_MIN


class TestTables:
    def test_sizes_and_payload(self):
        assert (len(LUTS.lut_exp), len(LUTS.lut_inv), len(LUTS.lut_gelu)) == (320, 320, 32)
        assert LUTS.payload_bytes == 2688  # about 2.69 kB

    def test_exp_table(self):
        assert LUTS.lut_exp[0] == fp.to_fixed(1.0)
        assert all(a > b for a, b in zip(LUTS.lut_exp, LUTS.lut_exp[1:]))
        for i in (1, 32, 319):
            assert abs(fp.to_float(LUTS.lut_exp[i]) - exp_neg(i / 32)) < 2**-24

    def test_inverse_table(self):
        assert LUTS.lut_inv[31] == fp.to_fixed(1.0)
        assert all(a > b for a, b in zip(LUTS.lut_inv, LUTS.lut_inv[1:]))
        assert LUTS.lut_inv[0] == fp.to_fixed(32.0)

    def test_gelu_table_midpoints(self):
        w = (1.595 + 1.857) / 32
        for k, v in enumerate(LUTS.lut_gelu):
            assert abs(fp.to_float(v) - gelu(-1.857 + (k + 0.5) * w)) < 2**-24

    def test_dump_round_trip(self, tmp_path):
        path = tmp_path / "luts.bin"
        fp.dump_luts(LUTS, path)
        raw = path.read_bytes()
        assert len(raw) == 672 * 4
        assert int.from_bytes(raw[:4], "little", signed=True) == fp.to_fixed(1.0)
        assert fp.load_luts(path) == LUTS

    def test_load_rejects_wrong_size(self, tmp_path):
        path = tmp_path / "short.bin"
        path.write_bytes(b"\0" * 12)
        with pytest.raises(ValueError):
            fp.load_luts(path)


class TestExp:
    def test_examples(self):
        assert fp.approx_exp_neg(0) == fp.to_fixed(1.0)
        assert abs(fp.to_float(fp.approx_exp_neg(fp.to_fixed(1.0))) - math.exp(-1)) < STEP
        assert fp.approx_exp_neg(fp.to_fixed(10.5)) == fp.approx_exp_neg(fp.to_fixed(319 / 32))

    def test_negative_clamps_to_one(self):
        assert fp.approx_exp_neg(fp.to_fixed(-3.0)) == fp.to_fixed(1.0)

    def test_nearest_index(self):
        # just below and above the half-step between entries 0 and 1
        assert fp.approx_exp_neg(fp.to_fixed(0.015)) == LUTS.lut_exp[0]
        assert fp.approx_exp_neg(fp.to_fixed(0.016)) == LUTS.lut_exp[1]

    @given(st.floats(0, 9.98, allow_nan=False))
    def test_within_half_step(self, z):
        err = abs(fp.to_float(fp.approx_exp_neg(fp.to_fixed(z))) - exp_neg(z))
        # derivative of e^-z is at most e^-(z - 1/64) over the half-step
        assert err <= math.exp(-max(z - 1 / 64, 0)) / 64 + 2**-23


class TestInvert:
    def test_examples(self):
        assert fp.approx_invert(fp.to_fixed(1.0)) == fp.to_fixed(1.0)
        assert abs(fp.to_float(fp.approx_invert(fp.to_fixed(2.0))) - 0.5) < STEP
        assert fp.approx_invert(0) == LUTS.lut_inv[0] == max(LUTS.lut_inv)

    def test_large_clamps(self):
        assert fp.approx_invert(fp.to_fixed(50.0)) == LUTS.lut_inv[-1]

    @pytest.mark.parametrize("s", [1.0, 3.3, 7.99, 12.0, 27.0, 100.0])
    def test_range_reduced_reciprocal(self, s):
        r = fp.reciprocal_normalized(fp.to_fixed(s), lambda z: fp.approx_invert(z, LUTS))
        # inside [4, 8) the table's relative error is at most 1/(2*4*32)
        assert abs(fp.to_float(r) * s - 1) <= 1 / 256 + 1e-6


class TestGelu:
    def test_examples(self):
        assert fp.approx_gelu(fp.to_fixed(2.0)) == fp.to_fixed(2.0)
        assert fp.approx_gelu(fp.to_fixed(-3.0)) == 0
        assert abs(fp.to_float(fp.approx_gelu(0))) < 0.062
        assert abs(fp.to_float(fp.approx_gelu(fp.to_fixed(1.0))) - 0.841345) < 0.062

    def test_exact_gelu_reference(self):
        assert fp.exact_gelu(0.0) == 0.0
        assert abs(fp.exact_gelu(1.0) - 0.8413447460685429) < 1e-15
        xs = np.linspace(-5, 5, 101)
        np.testing.assert_allclose(fp.exact_gelu(xs), [gelu(x) for x in xs], rtol=0, atol=1e-15)

    def test_boundaries(self):
        assert fp.approx_gelu(fp.GELU_HI_RAW + 1) == fp.GELU_HI_RAW + 1
        assert fp.approx_gelu(fp.GELU_HI_RAW) == LUTS.lut_gelu[31]
        assert fp.approx_gelu(fp.GELU_LO_RAW) == LUTS.lut_gelu[0]
        assert fp.approx_gelu(fp.GELU_LO_RAW - 1) == 0

    def test_outside_band_error_is_threshold_gap(self):
        for x in np.linspace(1.6, 4, 50):
            got = fp.to_float(fp.approx_gelu(fp.to_fixed(x)))
            assert abs(got - gelu(x)) <= abs(gelu(1.595) - 1.595) + 2**-23
        for x in np.linspace(-4, -1.86, 50):
            assert fp.approx_gelu(fp.to_fixed(x)) == 0
            assert abs(gelu(x)) <= abs(gelu(-1.857))

    def test_monotone_on_rising_branch(self):
        # GELU dips to about -0.17 near x = -0.75, so the table (and GELU) only rise after that
        xs = np.arange(-0.75, 4.0, (1.595 + 1.857) / 32)
        ys = [fp.approx_gelu(fp.to_fixed(x)) for x in xs]
        assert all(a <= b for a, b in zip(ys, ys[1:]))


class TestSoftmax:
    def test_float_forms_agree(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            x = rng.uniform(-20, 20, 27)
            np.testing.assert_allclose(fp.exact_softmax(x), fp.softmax_unshifted(x), rtol=0, atol=1e-12)

    def test_shift_invariance(self):
        x = np.array([0.3, -1.2, 2.5])
        np.testing.assert_allclose(fp.exact_softmax(x + 40.0), fp.exact_softmax(x), atol=1e-15)

    def test_exact_against_mpmath(self):
        x = [1.0, 2.0, 3.0]
        np.testing.assert_allclose(fp.exact_softmax(x), softmax(x), atol=1e-15)

    def test_uniform(self):
        out = fp.approx_softmax([fp.to_fixed(0.7)] * 3)
        for v in out:
            assert abs(fp.to_float(v) - 1 / 3) < 1 / 256

    def test_single(self):
        assert abs(fp.to_float(fp.approx_softmax([fp.to_fixed(-4.2)])[0]) - 1.0) < 1 / 256

    def test_one_two_three(self):
        out = [fp.to_float(v) for v in fp.approx_softmax([fp.to_fixed(v) for v in (1, 2, 3)])]
        np.testing.assert_allclose(out, [0.0900, 0.2447, 0.6652], atol=0.0051)

    def test_empty(self):
        with pytest.raises(ValueError):
            fp.approx_softmax([])

    def test_custom_lookups_are_used(self):
        calls = []

        def exp_fn(z):
            calls.append("exp")
            return fp.approx_exp_neg(z)

        def inv_fn(z):
            calls.append("inv")
            return fp.approx_invert(z)

        fp.approx_softmax([0, fp.ONE, 2 * fp.ONE], exp_fn=exp_fn, inv_fn=inv_fn)
        assert calls == ["exp", "exp", "exp", "inv"]
