"""Model hyperparameters, weight containers and the on-disk formats.

Weight file layout (little-endian, no padding)::

    b"KWTT" | version u8 | form u8 (0 float32, 1 int8+exponents)
    | 9 x u16: F, T, dim, depth, heads, mlp_dim, dim_head, seqlen, classes
    | tensors in ``tensor_layout`` order
    | (quantized only) weight_exp i8, input_exp i8

Quantized payload types per tensor kind: matrix int8, bias int16,
embedding int16, norm float32. Float files store everything as float32.

Input files are raw float32 spectrograms, F x T column-major (i.e. T
consecutive F-element patches).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

MAGIC = b"KWTT"
FORMAT_VERSION = 1
FORM_FLOAT = 0
FORM_QUANT = 1


class FormatError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    input_dim: tuple[int, int]  # (F, T)
    patch_dim: tuple[int, int]
    dim: int
    depth: int
    heads: int
    mlp_dim: int
    dim_head: int
    seqlen: int
    output_classes: int

    def __post_init__(self):
        f, t = self.input_dim
        if self.seqlen != t + 1:
            raise ValueError(f"seqlen {self.seqlen} must be T+1 = {t + 1}")
        if tuple(self.patch_dim) != (f, 1):
            raise ValueError(f"patch_dim {self.patch_dim} must be ({f}, 1)")
        for f_ in fields(self):
            if f_.name in ("input_dim", "patch_dim"):
                continue
            if getattr(self, f_.name) < 1:
                raise ValueError(f"{f_.name} must be positive")

    @property
    def freq(self) -> int:
        return self.input_dim[0]

    @property
    def time(self) -> int:
        return self.input_dim[1]

    @property
    def inner_dim(self) -> int:
        return self.heads * self.dim_head

    def header_values(self) -> tuple[int, ...]:
        return (self.freq, self.time, self.dim, self.depth, self.heads,
                self.mlp_dim, self.dim_head, self.seqlen, self.output_classes)

    @classmethod
    def from_header(cls, vals) -> "ModelConfig":
        f, t, dim, depth, heads, mlp, dh, seqlen, classes = vals
        return cls((f, t), (f, 1), dim, depth, heads, mlp, dh, seqlen, classes)


KWT_TINY = ModelConfig((16, 26), (16, 1), 12, 1, 1, 24, 8, 27, 2)
KWT_1 = ModelConfig((40, 98), (40, 1), 64, 12, 1, 256, 64, 99, 35)

# reported parameter count of the trained KWT-Tiny
REFERENCE_PARAM_COUNT = 1646


@dataclass(frozen=True)
class QuantParams:
    weight_exp: int
    input_exp: int

    def __post_init__(self):
        for name in ("weight_exp", "input_exp"):
            y = getattr(self, name)
            if not 0 <= y <= 14:
                raise ValueError(f"{name}={y} outside 0..14")

    @classmethod
    def from_factors(cls, weight_factor: int, input_factor: int) -> "QuantParams":
        """From 2^y scale factors such as (64, 32)."""
        exps = []
        for f in (weight_factor, input_factor):
            if f < 1 or f & (f - 1):
                raise ValueError(f"scale factor {f} is not a power of two")
            exps.append(f.bit_length() - 1)
        return cls(*exps)


@dataclass
class LayerWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    w_out: np.ndarray
    ln1_gamma: np.ndarray
    ln1_beta: np.ndarray
    ln2_gamma: np.ndarray
    ln2_beta: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


LAYER_KINDS = {
    "wq": "matrix", "wk": "matrix", "wv": "matrix", "w_out": "matrix",
    "ln1_gamma": "norm", "ln1_beta": "norm", "ln2_gamma": "norm", "ln2_beta": "norm",
    "w1": "matrix", "b1": "bias", "w2": "matrix", "b2": "bias",
}


@dataclass
class WeightSet:
    config: ModelConfig
    w0: np.ndarray
    x_pos: np.ndarray
    class_token: np.ndarray
    layers: list[LayerWeights]
    norm_gamma: np.ndarray
    norm_beta: np.ndarray
    head_w: np.ndarray
    head_b: np.ndarray
    quant: QuantParams | None = field(default=None)

    @property
    def form(self) -> str:
        return "float" if self.quant is None else "quantized"

    def tensors(self):
        """Yield (name, kind, array) in file order."""
        yield "w0", "matrix", self.w0
        yield "x_pos", "embed", self.x_pos
        yield "class_token", "embed", self.class_token
        for i, layer in enumerate(self.layers):
            for name, kind in LAYER_KINDS.items():
                yield f"layers.{i}.{name}", kind, getattr(layer, name)
        yield "norm_gamma", "norm", self.norm_gamma
        yield "norm_beta", "norm", self.norm_beta
        yield "head_w", "matrix", self.head_w
        yield "head_b", "bias", self.head_b

    def param_count(self) -> int:
        return sum(arr.size for _, _, arr in self.tensors())

    def validate(self) -> None:
        expected = dict((name, shape) for name, _, shape in tensor_layout(self.config))
        seen = 0
        for name, _, arr in self.tensors():
            seen += 1
            if name not in expected:
                raise FormatError(f"unexpected tensor {name}")
            if arr.shape != expected[name]:
                raise FormatError(f"{name}: shape {arr.shape} != {expected[name]}")
        if seen != len(expected):
            raise FormatError(f"weight set has {seen} tensors, layout needs {len(expected)}")

    def with_quant(self, quant: QuantParams | None, **arrays) -> "WeightSet":
        return replace(self, quant=quant, **arrays)


def tensor_layout(cfg: ModelConfig) -> list[tuple[str, str, tuple[int, ...]]]:
    d, inner = cfg.dim, cfg.inner_dim
    layer_shapes = {
        "wq": (d, inner), "wk": (d, inner), "wv": (d, inner), "w_out": (inner, d),
        "ln1_gamma": (d,), "ln1_beta": (d,), "ln2_gamma": (d,), "ln2_beta": (d,),
        "w1": (d, cfg.mlp_dim), "b1": (cfg.mlp_dim,), "w2": (cfg.mlp_dim, d), "b2": (d,),
    }
    out = [
        ("w0", "matrix", (cfg.freq, d)),
        ("x_pos", "embed", (cfg.seqlen, d)),
        ("class_token", "embed", (1, d)),
    ]
    for i in range(cfg.depth):
        out += [(f"layers.{i}.{n}", LAYER_KINDS[n], s) for n, s in layer_shapes.items()]
    out += [
        ("norm_gamma", "norm", (d,)),
        ("norm_beta", "norm", (d,)),
        ("head_w", "matrix", (d, cfg.output_classes)),
        ("head_b", "bias", (cfg.output_classes,)),
    ]
    return out


def param_count(cfg: ModelConfig) -> int:
    return sum(int(np.prod(shape)) for _, _, shape in tensor_layout(cfg))


def weight_set_from_arrays(cfg: ModelConfig, arrays: dict, quant: QuantParams | None = None) -> WeightSet:
    layers = []
    for i in range(cfg.depth):
        layers.append(LayerWeights(**{n: arrays[f"layers.{i}.{n}"] for n in LAYER_KINDS}))
    ws = WeightSet(
        config=cfg,
        w0=arrays["w0"],
        x_pos=arrays["x_pos"],
        class_token=arrays["class_token"],
        layers=layers,
        norm_gamma=arrays["norm_gamma"],
        norm_beta=arrays["norm_beta"],
        head_w=arrays["head_w"],
        head_b=arrays["head_b"],
        quant=quant,
    )
    ws.validate()
    return ws


_QUANT_DTYPES = {"matrix": "<i1", "bias": "<i2", "embed": "<i2", "norm": "<f4"}


def _payload_dtype(kind: str, form: int) -> str:
    return "<f4" if form == FORM_FLOAT else _QUANT_DTYPES[kind]


def serialize_weights(ws: WeightSet) -> bytes:
    form = FORM_FLOAT if ws.quant is None else FORM_QUANT
    parts = [MAGIC, struct.pack("<BB", FORMAT_VERSION, form),
             struct.pack("<9H", *ws.config.header_values())]
    for _, kind, arr in ws.tensors():
        dtype = _payload_dtype(kind, form)
        if dtype != "<f4" and not np.array_equal(arr, np.round(arr)):
            raise FormatError("quantized tensors must hold integers")
        parts.append(np.ascontiguousarray(arr).astype(dtype).tobytes())
    if ws.quant is not None:
        parts.append(struct.pack("<bb", ws.quant.weight_exp, ws.quant.input_exp))
    return b"".join(parts)


def deserialize_weights(blob: bytes) -> WeightSet:
    if len(blob) < 24 or blob[:4] != MAGIC:
        raise FormatError("missing KWTT header")
    version, form = struct.unpack_from("<BB", blob, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")
    if form not in (FORM_FLOAT, FORM_QUANT):
        raise FormatError(f"unknown numeric form tag {form}")
    try:
        cfg = ModelConfig.from_header(struct.unpack_from("<9H", blob, 6))
    except ValueError as exc:
        raise FormatError(f"bad model config: {exc}") from None
    offset = 24
    arrays = {}
    for name, kind, shape in tensor_layout(cfg):
        dtype = np.dtype(_payload_dtype(kind, form))
        n = int(np.prod(shape))
        end = offset + n * dtype.itemsize
        if end > len(blob):
            raise FormatError(f"file truncated inside tensor {name}")
        raw = np.frombuffer(blob, dtype=dtype, count=n, offset=offset).reshape(shape)
        arrays[name] = raw.astype(np.float64 if dtype.kind == "f" else np.int64)
        offset = end
    quant = None
    if form == FORM_QUANT:
        if offset + 2 > len(blob):
            raise FormatError("file truncated before scale exponents")
        try:
            quant = QuantParams(*struct.unpack_from("<bb", blob, offset))
        except ValueError as exc:
            raise FormatError(str(exc)) from None
        offset += 2
    if offset != len(blob):
        raise FormatError(f"{len(blob) - offset} trailing bytes")
    return weight_set_from_arrays(cfg, arrays, quant)


def save_weights(ws: WeightSet, path) -> None:
    Path(path).write_bytes(serialize_weights(ws))


def load_weights(path) -> WeightSet:
    return deserialize_weights(Path(path).read_bytes())


def serialize_input(spec: np.ndarray) -> bytes:
    """F x T spectrogram to column-major float32 bytes."""
    return np.asarray(spec, dtype="<f4").T.tobytes()


def deserialize_input(blob: bytes, cfg: ModelConfig) -> np.ndarray:
    f, t = cfg.input_dim
    if len(blob) != 4 * f * t:
        raise FormatError(f"input holds {len(blob)} bytes, expected {4 * f * t}")
    return np.frombuffer(blob, dtype="<f4").reshape(t, f).T.astype(np.float64)


def save_input(spec: np.ndarray, path) -> None:
    Path(path).write_bytes(serialize_input(spec))


def load_input(path, cfg: ModelConfig) -> np.ndarray:
    return deserialize_input(Path(path).read_bytes(), cfg)
