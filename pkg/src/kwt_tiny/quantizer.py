"""Post-training static quantization with power-of-two scales."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .model import QuantParams, WeightSet, weight_set_from_arrays
from .tensor_core import INT_LIMITS, Domain

__all__ = [
    "QuantParams", "SaturationCounter", "QuantReport", "SweepRow", "SweepReport",
    "quantize_value", "quantize_array", "dequantize_value", "dequantize_array",
    "quantize_weight_set", "dequantize_weight_set", "sweep_scales", "TABLE_V_GRID",
]

_TARGETS = {"int8": Domain.INT8, "int16": Domain.INT16}

# (weight factor, input factor) rows of the reference scale sweep
TABLE_V_GRID = [(8, 8), (16, 16), (32, 32), (64, 32), (64, 64)]


@dataclass
class SaturationCounter:
    events: int = 0

    def add(self, n: int) -> None:
        self.events += int(n)


def _limits(target) -> tuple[int, int]:
    domain = _TARGETS.get(target, target)
    return INT_LIMITS[domain]


def quantize_value(w: float, y: int, target="int8", counter: SaturationCounter | None = None) -> int:
    """floor(w * 2^y), saturated to the target integer range."""
    lo, hi = _limits(target)
    q = math.floor(w * 2.0**y)
    if q < lo or q > hi:
        if counter is not None:
            counter.add(1)
        q = min(max(q, lo), hi)
    return q


def quantize_array(x, y: int, target="int16") -> tuple[np.ndarray, int]:
    """Vectorised quantize_value; returns (int64 values, saturation count)."""
    lo, hi = _limits(target)
    q = np.floor(np.asarray(x, dtype=np.float64) * 2.0**y)
    n_sat = int(np.count_nonzero((q < lo) | (q > hi)))
    return np.clip(q, lo, hi).astype(np.int64), n_sat


def dequantize_value(q: int, y: int) -> float:
    return q * 2.0**-y


def dequantize_array(q, y: int) -> np.ndarray:
    return np.asarray(q, dtype=np.float64) * 2.0**-y


@dataclass
class QuantReport:
    params: QuantParams
    saturations: dict[str, int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.saturations.values())

    def to_text(self) -> str:
        lines = [f"weight_exp={self.params.weight_exp} input_exp={self.params.input_exp} "
                 f"saturated={self.total}"]
        lines += [f"  {name:<24}{n:>6}" for name, n in self.saturations.items() if n]
        return "\n".join(lines)


def quantize_weight_set(ws: WeightSet, qp: QuantParams) -> tuple[WeightSet, QuantReport]:
    """Quantize every tensor of a float weight set.

    Weight matrices become int8 at 2^yw, biases int16 at 2^(yw+yx) so they add
    straight onto accumulated products, additive embeddings (class token,
    positions) int16 at the activation scale 2^yx. Norm parameters stay float.
    """
    if ws.quant is not None:
        raise ValueError("weight set is already quantized")
    ws.validate()
    yw, yx = qp.weight_exp, qp.input_exp
    report = QuantReport(qp)
    arrays = {}
    for name, kind, arr in ws.tensors():
        if kind == "norm":
            arrays[name] = np.array(arr, dtype=np.float64)
            continue
        y, target = {"matrix": (yw, "int8"), "bias": (yw + yx, "int16"), "embed": (yx, "int16")}[kind]
        arrays[name], report.saturations[name] = quantize_array(arr, y, target)
    return weight_set_from_arrays(ws.config, arrays, qp), report


def dequantize_weight_set(ws: WeightSet) -> WeightSet:
    """Float weight set holding exactly the values a quantized set represents."""
    qp = ws.quant
    if qp is None:
        return ws
    scale = {"matrix": qp.weight_exp, "bias": qp.weight_exp + qp.input_exp, "embed": qp.input_exp}
    arrays = {}
    for name, kind, arr in ws.tensors():
        arrays[name] = arr.astype(np.float64) if kind == "norm" else dequantize_array(arr, scale[kind])
    return weight_set_from_arrays(ws.config, arrays)


@dataclass
class SweepRow:
    weight_exp: int
    input_exp: int
    agreement: float
    mean_abs_logit_dev: float
    saturations: int

    def record(self) -> dict:
        return {
            "weight_exp": self.weight_exp,
            "input_exp": self.input_exp,
            "weight_factor": 2**self.weight_exp,
            "input_factor": 2**self.input_exp,
            "agreement": self.agreement,
            "mean_abs_logit_dev": self.mean_abs_logit_dev,
            "saturations": self.saturations,
        }


@dataclass
class SweepReport:
    rows: list[SweepRow]
    n_inputs: int

    def row(self, weight_exp: int, input_exp: int) -> SweepRow:
        for r in self.rows:
            if (r.weight_exp, r.input_exp) == (weight_exp, input_exp):
                return r
        raise KeyError((weight_exp, input_exp))

    def to_text(self) -> str:
        lines = [f"scale sweep over {self.n_inputs} inputs",
                 f"{'2^y weights':>12}{'2^y input':>11}{'agreement':>11}{'mean|dlogit|':>14}{'saturations':>13}"]
        for r in self.rows:
            lines.append(f"{2**r.weight_exp:>12}{2**r.input_exp:>11}{r.agreement:>11.4f}"
                         f"{r.mean_abs_logit_dev:>14.5f}{r.saturations:>13}")
        return "\n".join(lines)

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps(r.record(), sort_keys=True) for r in self.rows)


def sweep_scales(ws: WeightSet, inputs, grid) -> SweepReport:
    """Compare float and quantized inference for each exponent pair in ``grid``.

    Saturations count both weight quantization and runtime events.
    """
    from .pipeline import Mode, infer
    from .profiler import Profiler

    inputs = list(inputs)
    if not inputs:
        raise ValueError("sweep needs at least one input")
    reference = [infer(x, ws, Mode.FLOAT).logits for x in inputs]
    rows = []
    for qp in grid:
        qws, qreport = quantize_weight_set(ws, qp)
        agree, dev, sat = 0, 0.0, qreport.total
        for x, ref in zip(inputs, reference):
            prof = Profiler("quantized")
            res = infer(x, qws, Mode.QUANTIZED, profiler=prof)
            agree += int(res.argmax == int(np.argmax(ref)))
            dev += float(np.mean(np.abs(res.logits - ref)))
            sat += prof.counters["saturations"]
        n = len(inputs)
        rows.append(SweepRow(qp.weight_exp, qp.input_exp, agree / n, dev / n, sat))
    return SweepReport(rows, len(inputs))
