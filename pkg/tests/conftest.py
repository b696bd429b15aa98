from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from kwt_tiny.fixture import write_fixture
from kwt_tiny.model import QuantParams, load_input, load_weights, tensor_layout, weight_set_from_arrays
from kwt_tiny.pipeline import Mode, infer
from kwt_tiny.quantizer import quantize_weight_set

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def random_weights(cfg, seed: int = 0):
    """Float weight set with U(-1, 1) entries, unit gammas and zero betas."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, kind, shape in tensor_layout(cfg):
        if kind == "norm":
            arrays[name] = np.ones(shape) if name.endswith("gamma") else np.zeros(shape)
        else:
            arrays[name] = rng.uniform(-1, 1, shape)
    return weight_set_from_arrays(cfg, arrays)


@dataclass
class FixtureRun:
    root: Path
    weights_path: Path
    inputs_dir: Path
    ws: object
    qws: object
    inputs: list
    float_logits: np.ndarray
    quant_logits: np.ndarray
    accel_logits: np.ndarray

    def agreement(self, other: np.ndarray) -> float:
        return float(np.mean(self.float_logits.argmax(axis=1) == other.argmax(axis=1)))


@pytest.fixture(scope="session")
def shipped(tmp_path_factory) -> FixtureRun:
    """The default-seed fixture written to disk, reloaded, and run in all three modes."""
    root = tmp_path_factory.mktemp("fixture")
    weights_path, inputs_dir = write_fixture(root)
    ws = load_weights(weights_path)
    inputs = [load_input(p, ws.config) for p in sorted(inputs_dir.iterdir())]
    qws, _ = quantize_weight_set(ws, QuantParams(6, 5))
    f = np.array([infer(x, ws, Mode.FLOAT).logits for x in inputs])
    q = np.array([infer(x, qws, Mode.QUANTIZED).logits for x in inputs])
    a = np.array([infer(x, qws, Mode.ACCELERATED).logits for x in inputs])
    return FixtureRun(root, weights_path, inputs_dir, ws, qws, inputs, f, q, a)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
