"""Operation-level cost accounting.

Real RV32 cycle counts are not modelled; instead every primitive is charged
a fixed number of cost units that roughly follows the price of each
operation on an RV32 core without an FPU:

=====================  =====
integer add/mul/cmp        1
float add/mul/cmp          8
float division            40
erf / exp / sqrt call    120
LUT instruction            2
quant/requant shift        1
=====================  =====
"""

from __future__ import annotations

import json
from collections import Counter
from contextlib import contextmanager
from dataclasses import dataclass, field

INT_OP = 1
FLOAT_OP = 8
FLOAT_DIV = 40
LIB_CALL = 120
LUT_OP = 2
SHIFT = 1

CATEGORIES = ("matrix_multiply", "softmax", "gelu", "layer_norm", "quant_dequant", "other")
STAGES = ("embed", "self_attention", "mlp", "classify")
COUNTERS = ("float_div", "erf", "exp", "sqrt", "saturations",
            "lut_exp", "lut_invert", "lut_gelu", "lut_to_fixed", "lut_to_float")


@dataclass
class ProfileReport:
    mode: str
    categories: dict[str, int]
    stages: dict[str, int]
    stage_categories: dict[str, dict[str, int]]
    counters: dict[str, int]

    @property
    def total(self) -> int:
        return sum(self.categories.values())

    def as_record(self) -> dict:
        return {
            "mode": self.mode,
            "total": self.total,
            "categories": dict(self.categories),
            "stages": dict(self.stages),
            "stage_categories": {k: dict(v) for k, v in self.stage_categories.items()},
            "counters": dict(self.counters),
        }

    def to_json(self) -> str:
        return json.dumps(self.as_record(), sort_keys=True)

    def to_text(self) -> str:
        total = self.total or 1
        lines = [f"cost units per operation ({self.mode} mode) - total {self.total:,}"]
        for name in CATEGORIES:
            v = self.categories[name]
            lines.append(f"  {name:<18}{v:>14,}  {100 * v / total:6.2f}%")
        for stage in STAGES:
            sub = self.stage_categories[stage]
            st = self.stages[stage] or 1
            lines.append(f"stage {stage} - {self.stages[stage]:,}")
            for name in CATEGORIES:
                if sub[name]:
                    lines.append(f"  {name:<18}{sub[name]:>14,}  {100 * sub[name] / st:6.2f}%")
        lines.append("counters: " + " ".join(f"{k}={self.counters[k]}" for k in COUNTERS))
        return "\n".join(lines)


@dataclass
class Profiler:
    mode: str = "float"
    _current: str | None = None
    _costs: dict = field(default_factory=lambda: {s: Counter() for s in STAGES})
    counters: Counter = field(default_factory=Counter)

    @contextmanager
    def stage(self, name: str):
        if name not in STAGES:
            raise ValueError(f"unknown stage {name}")
        prev, self._current = self._current, name
        try:
            yield self
        finally:
            self._current = prev

    def charge(self, category: str, units: int) -> None:
        if category not in CATEGORIES:
            raise ValueError(f"unknown category {category}")
        if self._current is None:
            raise RuntimeError("cost charged outside a pipeline stage")
        self._costs[self._current][category] += units

    def count(self, name: str, n: int = 1) -> None:
        self.counters[name] += n

    def report(self) -> ProfileReport:
        cats = {c: sum(self._costs[s][c] for s in STAGES) for c in CATEGORIES}
        stages = {s: sum(self._costs[s].values()) for s in STAGES}
        per = {s: {c: self._costs[s][c] for c in CATEGORIES} for s in STAGES}
        counters = {k: self.counters[k] for k in COUNTERS}
        return ProfileReport(self.mode, cats, stages, per, counters)


def matmul_units(m: int, k: int, n: int, integer: bool) -> int:
    if integer:
        # multiply + accumulate per term, shift + saturate compare per output
        return m * n * (2 * k + 2)
    return m * n * k * 2 * FLOAT_OP
