"""Deterministic synthetic KWT-Tiny weights and spectrogram inputs.

Inputs alternate between background noise (class 0) and noise plus a fixed
random "keyword" pattern (class 1). The transformer body is random; only the
linear head is fitted (closed-form ridge regression on the float model's
class-token features over a separate calibration draw), so the fixture
behaves like a weak but genuinely discriminating keyword spotter instead of
a constant classifier.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .model import KWT_TINY, ModelConfig, WeightSet, save_input, save_weights, tensor_layout, weight_set_from_arrays

DEFAULT_SEED = 2024
DEFAULT_COUNT = 200
NOISE_LEVEL = 30.0
KEYWORD_GAIN = 2.0
PROJECTION_GAIN = 0.25
INPUT_BOUND = 1000.0  # |v| * 2^5 stays inside int16
RIDGE = 1e-2


def _f32(arr) -> np.ndarray:
    return np.asarray(arr, dtype=np.float32).astype(np.float64)


def make_body(seed: int = DEFAULT_SEED, cfg: ModelConfig = KWT_TINY) -> WeightSet:
    """Random float weights, every value inside [-1, 1]."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, kind, shape in tensor_layout(cfg):
        if kind == "matrix":
            vals = rng.uniform(-1.0, 1.0, shape)
            if name == "w0":
                vals *= PROJECTION_GAIN
        elif kind == "norm":
            vals = rng.uniform(0.5, 1.5, shape) if name.endswith("gamma") else rng.uniform(-0.1, 0.1, shape)
        elif kind == "bias":
            vals = rng.uniform(-0.1, 0.1, shape)
        else:
            vals = rng.uniform(-1.0, 1.0, shape)
        arrays[name] = _f32(vals)
    return weight_set_from_arrays(cfg, arrays)


def input_labels(count: int) -> np.ndarray:
    return np.arange(count) % 2


def make_inputs(seed: int = DEFAULT_SEED, count: int = DEFAULT_COUNT, cfg: ModelConfig = KWT_TINY,
                stream: int = 1) -> list[np.ndarray]:
    rng = np.random.default_rng([seed, 0])
    f, t = cfg.input_dim
    keyword = rng.standard_normal((f, t))
    rng = np.random.default_rng([seed, stream])
    out = []
    for label in input_labels(count):
        spec = rng.uniform(0.3, 1.0) * NOISE_LEVEL * rng.standard_normal((f, t))
        if label:
            spec += KEYWORD_GAIN * NOISE_LEVEL * rng.uniform(0.5, 1.5) * keyword
        out.append(_f32(np.clip(spec, -INPUT_BOUND, INPUT_BOUND)))
    return out


def fit_head(ws: WeightSet, inputs, labels) -> WeightSet:
    """Least-squares two-class head on float class-token features (entries kept within [-0.5, 0.5])."""
    from .pipeline import Engine

    if ws.config.output_classes != 2:
        raise ValueError("head fitting supports the two-class preset only")
    feats = []
    for spec in inputs:
        engine = Engine(ws)
        x = engine.encode(spec)
        with engine.prof.stage("classify"):
            feats.append(engine.class_features(x))
    a = np.c_[np.array(feats), np.ones(len(feats))]
    target = 2.0 * np.asarray(labels) - 1.0
    w = np.linalg.solve(a.T @ a + RIDGE * np.eye(a.shape[1]), a.T @ target)
    scale = 0.5 / np.abs(w[:-1]).max()
    w *= scale
    ws.head_w = _f32(np.stack([-w[:-1], w[:-1]], axis=1))
    ws.head_b = _f32([-w[-1], w[-1]])
    ws.validate()
    return ws


def make_weights(seed: int = DEFAULT_SEED, cfg: ModelConfig = KWT_TINY) -> WeightSet:
    calib = make_inputs(seed, DEFAULT_COUNT, cfg, stream=2)
    return fit_head(make_body(seed, cfg), calib, input_labels(len(calib)))


def write_fixture(out_dir, seed: int = DEFAULT_SEED, count: int = DEFAULT_COUNT) -> tuple[Path, Path]:
    """Write ``weights.kwtt`` and ``inputs/input_NNN.f32`` under ``out_dir``."""
    out = Path(out_dir)
    inputs_dir = out / "inputs"
    inputs_dir.mkdir(parents=True, exist_ok=True)
    weights_path = out / "weights.kwtt"
    save_weights(make_weights(seed), weights_path)
    for i, spec in enumerate(make_inputs(seed, count)):
        save_input(spec, inputs_dir / f"input_{i:03d}.f32")
    return weights_path, inputs_dir
