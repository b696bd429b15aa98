"""KWT-Tiny inference in float, quantized and accelerated form.

Memory discipline: every matrix-sized intermediate lives in one of the two
arena banks; only single rows (attention scores, one MLP output row, one
normalisation row) are held outside them.

* bank A (seqlen x mlp_dim): residual stream during attention, MLP hidden layer
* bank B (seqlen x heads*dim_head*3): Q|K|V, then the residual stream during the MLP

Quantized activations are int16 at scale 2^input_exp, weights int8 at
2^weight_exp. Softmax, layer norm and GELU run on dequantized floats in
quantized mode; accelerated mode replaces the softmax and GELU islands with
the LUT instructions and normalises without any floating-point division.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import fixed_point as fp
from .isa import CustomUnit
from .model import ModelConfig, WeightSet
from .profiler import FLOAT_DIV, FLOAT_OP, INT_OP, LIB_CALL, LUT_OP, SHIFT, Profiler, ProfileReport, matmul_units
from .quantizer import dequantize_array, quantize_array
from .tensor_core import (
    Arena,
    ArenaBank,
    Domain,
    Tensor2D,
    arena_acquire,
    arena_release,
    layer_norm,
    matrix_multiply,
    saturate,
    split_into_qkv,
)

LN_EPSILON = 1e-5


class Mode(enum.Enum):
    FLOAT = "float"
    QUANTIZED = "quantized"
    ACCELERATED = "accelerated"

    @classmethod
    def parse(cls, text) -> "Mode":
        if isinstance(text, Mode):
            return text
        aliases = {"quant": cls.QUANTIZED, "accel": cls.ACCELERATED}
        return aliases.get(text) or cls(text)


@dataclass
class ClassResult:
    logits: np.ndarray
    argmax: int
    high_water: int
    bank_high_water: tuple[int, int]
    report: ProfileReport | None = None


def _real(arr) -> Tensor2D:
    return Tensor2D(np.asarray(arr, dtype=np.float64).reshape(1, -1) if np.ndim(arr) == 1
                    else np.asarray(arr, dtype=np.float64))


class Engine:
    """One inference context: weights, mode, arena, profiler and LUT unit."""

    def __init__(self, ws: WeightSet, mode=None, profiler: Profiler | None = None,
                 arena: Arena | None = None, luts: fp.LutSet | None = None):
        if mode is None:
            mode = Mode.FLOAT if ws.quant is None else Mode.QUANTIZED
        self.mode = Mode.parse(mode)
        if (self.mode == Mode.FLOAT) != (ws.quant is None):
            raise ValueError(f"{self.mode.value} mode needs {'float' if self.mode == Mode.FLOAT else 'quantized'} weights")
        self.ws = ws
        self.cfg: ModelConfig = ws.config
        self.prof = profiler or Profiler(self.mode.value)
        self.arena = arena or Arena.for_config(self.cfg)
        self.unit = CustomUnit(luts) if self.mode == Mode.ACCELERATED else None
        self.integer = self.mode != Mode.FLOAT
        if self.integer:
            self.yw, self.yx = ws.quant.weight_exp, ws.quant.input_exp
            self.act = Domain.INT16
            self.inv_sqrt_dh_raw = fp.to_fixed(1.0 / math.sqrt(self.cfg.dim_head))
        else:
            self.yw = self.yx = 0
            self.act = Domain.REAL
        self._mats = {}

    # weight access -----------------------------------------------------

    def mat(self, name: str, arr: np.ndarray) -> Tensor2D:
        t = self._mats.get(name)
        if t is None:
            if self.integer:
                t = Tensor2D.from_values(arr, Domain.INT8)
            else:
                t = Tensor2D.from_values(arr)
            self._mats[name] = t
        return t

    def layer(self, i: int):
        return self.ws.layers[i]

    # small helpers -----------------------------------------------------

    def _mm(self, a: Tensor2D, b: Tensor2D, *, shift=0, bias=None, out=None) -> Tensor2D:
        self.prof.charge("matrix_multiply", matmul_units(a.rows, a.cols, b.cols, self.integer))
        if not self.integer:
            return matrix_multiply(a, b, bias=bias, out=out)
        return matrix_multiply(a, b, Domain.INT16, bias=bias, shift=shift, out=out)

    def _sat_count(self, raw: np.ndarray) -> np.ndarray:
        clipped = saturate(raw, Domain.INT16)
        self.prof.count("saturations", int(np.count_nonzero(clipped != raw)))
        return clipped

    def _add_into(self, dst: np.ndarray, src: np.ndarray) -> None:
        n = dst.size
        if self.integer:
            self.prof.charge("other", n * INT_OP)
            dst[...] = self._sat_count(dst.astype(np.int64) + np.asarray(src, dtype=np.int64))
        else:
            self.prof.charge("other", n * FLOAT_OP)
            dst += src

    def _dequant(self, q) -> np.ndarray:
        q = np.asarray(q)
        self.prof.charge("quant_dequant", q.size * SHIFT)
        return dequantize_array(q, self.yx)

    def _requant(self, x) -> np.ndarray:
        x = np.asarray(x)
        self.prof.charge("quant_dequant", x.size * SHIFT)
        q, n_sat = quantize_array(x, self.yx, "int16")
        self.prof.count("saturations", n_sat)
        return q

    def _to_q824(self, q) -> list[int]:
        q = np.asarray(q).reshape(-1)
        self.prof.charge("quant_dequant", q.size * SHIFT)
        up = fp.FRAC_BITS - self.yx
        return [fp.saturate32(int(v) << up) for v in q]

    def _from_q824(self, raws) -> np.ndarray:
        self.prof.charge("quant_dequant", len(raws) * SHIFT)
        down = fp.FRAC_BITS - self.yx
        return self._sat_count(np.array([r >> down for r in raws], dtype=np.int64))

    # embedding ---------------------------------------------------------

    def embed(self, spec) -> Tensor2D:
        """Patches -> projection, prepend class token, add positions. Result lives in bank A."""
        cfg = self.cfg
        spec = spec.data if isinstance(spec, Tensor2D) else np.asarray(spec, dtype=np.float64)
        if spec.shape != tuple(cfg.input_dim):
            raise ValueError(f"input shape {spec.shape} != {tuple(cfg.input_dim)}")
        x = arena_acquire(self.arena.a, cfg.seqlen, cfg.dim, self.act)
        rows = Tensor2D(x.data[1:], self.act)
        if self.integer:
            self.prof.charge("quant_dequant", spec.size * SHIFT)
            patches_q, n_sat = quantize_array(spec.T, self.yx, "int16")
            self.prof.count("saturations", n_sat)
            patches = Tensor2D.from_values(patches_q, Domain.INT16)
        else:
            patches = Tensor2D.from_values(spec.T)
        self._mm(patches, self.mat("w0", self.ws.w0), shift=self.yw, out=rows)
        x.data[0] = self.ws.class_token.reshape(-1)
        self._add_into(x.data, self.ws.x_pos)
        assert x.shape == (cfg.seqlen, cfg.dim)
        return x

    # attention ---------------------------------------------------------

    def _softmax_row(self, scores: Tensor2D) -> Tensor2D:
        """Scaled softmax of one score row, returned in the activation domain."""
        n = scores.cols
        dh = self.cfg.dim_head
        p = self.prof
        if self.mode == Mode.ACCELERATED:
            # subtract the row max while still int16 so the Q8.24 shift cannot overflow
            # on large scores; offsets beyond the exp table's range clamp anyway
            shifted = scores.data.astype(np.int64) - scores.data.max()
            p.charge("softmax", 2 * n * INT_OP)
            raw = self._to_q824(shifted)
            p.charge("softmax", n * INT_OP)  # fixed-point scale by 1/sqrt(dh)
            raw = [fp.fixed_mul(r, self.inv_sqrt_dh_raw) for r in raw]
            probs = fp.approx_softmax(raw, exp_fn=self.unit.exp_neg, inv_fn=self.unit.invert)
            p.charge("softmax", n * (4 * INT_OP + LUT_OP) + 2 * INT_OP + LUT_OP)
            p.count("lut_exp", n)
            p.count("lut_invert", 1)
            return Tensor2D(self._from_q824(probs).reshape(1, -1).astype(np.int16), Domain.INT16)
        vals = self._dequant(scores.data) if self.integer else scores.data
        vals = vals / math.sqrt(dh)
        p.charge("softmax", n * FLOAT_DIV)
        p.count("float_div", n)
        probs = fp.exact_softmax(vals)
        # max, subtract, exp, accumulate, divide
        p.charge("softmax", n * (3 * FLOAT_OP + LIB_CALL + FLOAT_DIV))
        p.count("exp", n)
        p.count("float_div", n)
        if self.integer:
            return Tensor2D(self._requant(probs).astype(np.int16), Domain.INT16)
        return Tensor2D(probs)

    def attention_rows(self, qkv: Tensor2D, layer: int):
        """Yield (row index, projected attention output row) from a Q|K|V slot."""
        cfg = self.cfg
        inner, dh = cfg.inner_dim, cfg.dim_head
        w_out = self.mat(f"layers.{layer}.w_out", self.layer(layer).w_out)
        data = qkv.data
        heads = []
        for h in range(cfg.heads):
            q = data[:, h * dh : (h + 1) * dh]
            k = data[:, inner + h * dh : inner + (h + 1) * dh]
            v = data[:, 2 * inner + h * dh : 2 * inner + (h + 1) * dh]
            heads.append((q, Tensor2D(k.T, self.act), Tensor2D(v, self.act)))
        for i in range(cfg.seqlen):
            ctx = []
            for q, k_t, v in heads:
                scores = self._mm(Tensor2D(q[i : i + 1], self.act), k_t, shift=self.yx)
                probs = self._softmax_row(scores)
                ctx.append(self._mm(probs, v, shift=self.yx).data)
            ctx = Tensor2D(np.concatenate(ctx, axis=1), self.act)
            out = self._mm(ctx, w_out, shift=self.yw)
            assert out.shape == (1, cfg.dim)
            yield i, out.data[0]

    def project_qkv(self, x: Tensor2D, layer: int) -> Tensor2D:
        cfg = self.cfg
        lw = self.layer(layer)
        qkv = arena_acquire(self.arena.b, cfg.seqlen, 3 * cfg.inner_dim, self.act)
        for w in ("wq", "wk", "wv"):
            self.prof.charge("matrix_multiply", matmul_units(cfg.seqlen, cfg.dim, cfg.inner_dim, self.integer))
        split_into_qkv(x, *(self.mat(f"layers.{layer}.{w}", getattr(lw, w)) for w in ("wq", "wk", "wv")),
                       shift=self.yw, out=qkv)
        return qkv

    # normalisation -----------------------------------------------------

    def _ln_row_division_free(self, row: np.ndarray, gamma, beta) -> np.ndarray:
        n = row.size
        p = self.prof
        mean = row.sum() * (1.0 / n)
        centred = row - mean
        var = (centred * centred).sum() * (1.0 / n)
        std = math.sqrt(var + LN_EPSILON)
        p.count("sqrt", 1)
        m, e = math.frexp(std)  # std = m * 2^e, m in [0.5, 1)
        inv_m = self.unit.to_float(self.unit.invert(self.unit.to_fixed(m * 8.0)))
        inv_std = math.ldexp(inv_m, 3 - e)
        p.count("lut_to_fixed", 1)
        p.count("lut_invert", 1)
        p.count("lut_to_float", 1)
        p.charge("layer_norm", (4 * n + 2) * FLOAT_OP + LIB_CALL + 3 * LUT_OP + 3 * n * FLOAT_OP)
        return centred * inv_std * gamma + beta

    def _norm_row(self, row: np.ndarray, gamma: np.ndarray, beta: np.ndarray) -> np.ndarray:
        if self.mode == Mode.ACCELERATED:
            return self._ln_row_division_free(row, gamma, beta)
        d = row.size
        # mean: n adds + div; variance: n sub/mul/add + div; sqrt; per element sub, div, mul, add
        self.prof.charge("layer_norm", (7 * d) * FLOAT_OP + (d + 2) * FLOAT_DIV + LIB_CALL)
        self.prof.count("float_div", d + 2)
        self.prof.count("sqrt", 1)
        return layer_norm(_real(row), gamma, beta, LN_EPSILON).data[0]

    def norm_rows(self, t: Tensor2D, gamma, beta) -> None:
        """Layer-normalise each row of ``t`` in place."""
        gamma = np.asarray(gamma, dtype=np.float64)
        beta = np.asarray(beta, dtype=np.float64)
        for i in range(t.rows):
            row = self._dequant(t.data[i]) if self.integer else t.data[i]
            normed = self._norm_row(row, gamma, beta)
            t.data[i] = self._requant(normed) if self.integer else normed

    # MLP ---------------------------------------------------------------

    def gelu_inplace(self, h: Tensor2D) -> None:
        n = h.data.size
        p = self.prof
        if self.mode == Mode.ACCELERATED:
            raws = [self.unit.gelu(r) for r in self._to_q824(h.data)]
            p.charge("gelu", n * LUT_OP)
            p.count("lut_gelu", n)
            h.data[...] = self._from_q824(raws).reshape(h.shape)
            return
        vals = self._dequant(h.data) if self.integer else h.data
        out = fp.exact_gelu(vals)
        # x / sqrt(2), erf, 1 + ., * 0.5, * x
        p.charge("gelu", n * (FLOAT_DIV + LIB_CALL + 3 * FLOAT_OP))
        p.count("float_div", n)
        p.count("erf", n)
        h.data[...] = self._requant(out) if self.integer else out

    def _bias(self, b: np.ndarray) -> np.ndarray:
        return np.asarray(b, dtype=np.int64 if self.integer else np.float64)

    # block / head ------------------------------------------------------

    def attention_stage(self, x: Tensor2D, layer: int) -> Tensor2D:
        """x (bank A) -> layer_norm(x + SA(x)), moved to bank B."""
        cfg = self.cfg
        lw = self.layer(layer)
        qkv = self.project_qkv(x, layer)
        for i, row in self.attention_rows(qkv, layer):
            self._add_into(x.data[i], row)
        arena_release(self.arena.b)
        self.norm_rows(x, lw.ln1_gamma, lw.ln1_beta)
        return self._move(x, self.arena.a, self.arena.b)

    def mlp_stage(self, u: Tensor2D, layer: int) -> Tensor2D:
        """u (bank B) -> layer_norm(u + FFN(u)), stays in bank B."""
        cfg = self.cfg
        lw = self.layer(layer)
        h = arena_acquire(self.arena.a, cfg.seqlen, cfg.mlp_dim, self.act)
        self._mm(u, self.mat(f"layers.{layer}.w1", lw.w1), shift=self.yw, bias=self._bias(lw.b1), out=h)
        self.prof.charge("other", h.data.size * (INT_OP if self.integer else FLOAT_OP))
        self.gelu_inplace(h)
        w2 = self.mat(f"layers.{layer}.w2", lw.w2)
        b2 = self._bias(lw.b2)
        for i in range(cfg.seqlen):
            out = self._mm(Tensor2D(h.data[i : i + 1], self.act), w2, shift=self.yw, bias=b2)
            self.prof.charge("other", cfg.dim * (INT_OP if self.integer else FLOAT_OP))
            self._add_into(u.data[i], out.data[0])
        arena_release(self.arena.a)
        self.norm_rows(u, lw.ln2_gamma, lw.ln2_beta)
        return u

    def _move(self, t: Tensor2D, src: ArenaBank, dst: ArenaBank) -> Tensor2D:
        moved = arena_acquire(dst, t.rows, t.cols, t.domain)
        moved.data[...] = t.data
        self.prof.charge("other", t.data.size * INT_OP)
        arena_release(src)
        return moved

    def class_features(self, x: Tensor2D) -> np.ndarray:
        """Final-normed class-token row (the head's input), as floats."""
        ws = self.ws
        row = self._dequant(x.data[0]) if self.integer else x.data[0]
        return self._norm_row(row, np.asarray(ws.norm_gamma, dtype=np.float64),
                              np.asarray(ws.norm_beta, dtype=np.float64))

    def classify(self, x: Tensor2D) -> tuple[np.ndarray, int]:
        """Final norm on the class-token row, then the linear head."""
        ws = self.ws
        feats = self.class_features(x)
        d, c = self.cfg.dim, self.cfg.output_classes
        if self.integer:
            self.prof.charge("quant_dequant", (d * c + c) * SHIFT)
            head_w = dequantize_array(ws.head_w, self.yw)
            head_b = dequantize_array(ws.head_b, self.yw + self.yx)
        else:
            head_w, head_b = ws.head_w, ws.head_b
        self.prof.charge("matrix_multiply", matmul_units(1, d, c, False) + c * FLOAT_OP)
        logits = matrix_multiply(_real(feats), _real(head_w), bias=head_b).data[0].copy()
        return logits, int(np.argmax(logits))

    def encode(self, spec) -> Tensor2D:
        """Embedding plus all transformer blocks; the result sits in bank B."""
        prof = self.prof
        with prof.stage("embed"):
            x = self.embed(spec)
        for layer in range(self.cfg.depth):
            with prof.stage("self_attention"):
                if layer:
                    x = self._move(x, self.arena.b, self.arena.a)
                u = self.attention_stage(x, layer)
            with prof.stage("mlp"):
                x = self.mlp_stage(u, layer)
        return x

    def run(self, spec) -> ClassResult:
        prof = self.prof
        x = self.encode(spec)
        with prof.stage("classify"):
            logits, arg = self.classify(x)
            arena_release(self.arena.b)
        return ClassResult(logits, arg, self.arena.high_water,
                           (self.arena.a.high_water, self.arena.b.high_water))


# module-level entry points ---------------------------------------------


def infer(spec, ws: WeightSet, mode=None, profiler: Profiler | None = None,
          luts: fp.LutSet | None = None) -> ClassResult:
    """Full pass: embed -> depth x transformer block -> classify.

    The profile report is attached when a profiler is passed in.
    """
    engine = Engine(ws, mode, profiler, luts=luts)
    result = engine.run(spec)
    if profiler is not None:
        result.report = profiler.report()
    return result


def embed(spec, ws: WeightSet, mode=None) -> Tensor2D:
    engine = Engine(ws, mode)
    with engine.prof.stage("embed"):
        x = engine.embed(spec)
    return Tensor2D.from_values(x.data, x.domain)


def self_attention(x: Tensor2D, ws: WeightSet, layer: int = 0, mode=None) -> Tensor2D:
    """SA(x) projected back to the model width (no residual, no norm)."""
    engine = Engine(ws, mode)
    cfg = ws.config
    if x.shape != (cfg.seqlen, cfg.dim):
        raise ValueError(f"attention input {x.shape} != {(cfg.seqlen, cfg.dim)}")
    out = np.zeros((cfg.seqlen, cfg.dim), dtype=x.data.dtype)
    with engine.prof.stage("self_attention"):
        qkv = engine.project_qkv(x, layer)
        for i, row in engine.attention_rows(qkv, layer):
            out[i] = row
    return Tensor2D.from_values(out, x.domain)


def transformer_block(x: Tensor2D, ws: WeightSet, layer: int = 0, mode=None) -> Tensor2D:
    """Post-norm block: u = LN(x + SA(x)); LN(u + FFN(u))."""
    engine = Engine(ws, mode)
    cfg = ws.config
    slot = arena_acquire(engine.arena.a, cfg.seqlen, cfg.dim, engine.act)
    slot.data[...] = x.data
    with engine.prof.stage("self_attention"):
        u = engine.attention_stage(slot, layer)
    with engine.prof.stage("mlp"):
        out = engine.mlp_stage(u, layer)
    return Tensor2D.from_values(out.data, out.domain)


def classify(x: Tensor2D, ws: WeightSet, mode=None) -> tuple[np.ndarray, int]:
    engine = Engine(ws, mode)
    with engine.prof.stage("classify"):
        return engine.classify(x)
