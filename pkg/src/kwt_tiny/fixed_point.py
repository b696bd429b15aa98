"""Q8.24 fixed-point scalars, the exp / reciprocal / GELU lookup tables and
the kernels built on them.

Fixed-point values are carried as plain Python ints holding the raw signed
32-bit pattern (value = raw / 2**24).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

FRAC_BITS = 24
ONE = 1 << FRAC_BITS
RAW_MIN = -(1 << 31)
RAW_MAX = (1 << 31) - 1

LUT_STEPS_PER_UNIT = 32
EXP_LUT_SIZE = 320
INV_LUT_SIZE = 320
GELU_LUT_SIZE = 32
GELU_LO = -1.857
GELU_HI = 1.595


def saturate32(raw: int) -> int:
    return RAW_MAX if raw > RAW_MAX else RAW_MIN if raw < RAW_MIN else raw


def to_fixed(x: float) -> int:
    """Float to Q8.24, rounding toward zero and saturating at the range ends."""
    if math.isnan(x):
        return 0
    if math.isinf(x):
        return RAW_MAX if x > 0 else RAW_MIN
    return saturate32(math.trunc(x * ONE))


def to_float(raw: int) -> float:
    return raw / ONE


def fixed_mul(a: int, b: int) -> int:
    # 64-bit product, arithmetic shift, saturate
    return saturate32((a * b) >> FRAC_BITS)


GELU_LO_RAW = to_fixed(GELU_LO)
GELU_HI_RAW = to_fixed(GELU_HI)


@dataclass(frozen=True)
class LutSet:
    lut_exp: tuple[int, ...]
    lut_inv: tuple[int, ...]
    lut_gelu: tuple[int, ...]

    def __post_init__(self):
        sizes = (len(self.lut_exp), len(self.lut_inv), len(self.lut_gelu))
        if sizes != (EXP_LUT_SIZE, INV_LUT_SIZE, GELU_LUT_SIZE):
            raise ValueError(f"unexpected table sizes {sizes}")

    @property
    def payload_bytes(self) -> int:
        return 4 * (EXP_LUT_SIZE + INV_LUT_SIZE + GELU_LUT_SIZE)

    def as_array(self) -> np.ndarray:
        return np.array(self.lut_exp + self.lut_inv + self.lut_gelu, dtype="<i4")


def exact_gelu(x):
    """x * (1 + erf(x / sqrt(2))) / 2, for scalars or arrays."""
    if np.ndim(x) == 0:
        return float(x) * 0.5 * (1.0 + math.erf(float(x) / math.sqrt(2.0)))
    x = np.asarray(x, dtype=np.float64)
    erf = np.vectorize(math.erf, otypes=[np.float64])
    return x * 0.5 * (1.0 + erf(x / math.sqrt(2.0)))


def softmax_unshifted(x) -> np.ndarray:
    e = np.exp(np.asarray(x, dtype=np.float64))
    return e / e.sum(axis=-1, keepdims=True)


def exact_softmax(x) -> np.ndarray:
    """Softmax in the max-subtracted form (same value, no overflow)."""
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-(x.max(axis=-1, keepdims=True) - x))
    return e / e.sum(axis=-1, keepdims=True)


def gelu_bucket_width() -> float:
    return (GELU_HI - GELU_LO) / GELU_LUT_SIZE


def build_luts() -> LutSet:
    """Sample the float references into Q8.24 tables.

    exp table: e^-z at z = i/32; reciprocal table: 1/z at z = (i+1)/32;
    GELU table: GELU at the midpoints of 32 equal buckets over [GELU_LO, GELU_HI].
    """
    lut_exp = tuple(to_fixed(math.exp(-i / LUT_STEPS_PER_UNIT)) for i in range(EXP_LUT_SIZE))
    lut_inv = tuple(to_fixed(LUT_STEPS_PER_UNIT / (i + 1)) for i in range(INV_LUT_SIZE))
    width = gelu_bucket_width()
    lut_gelu = tuple(to_fixed(exact_gelu(GELU_LO + (k + 0.5) * width)) for k in range(GELU_LUT_SIZE))
    return LutSet(lut_exp, lut_inv, lut_gelu)


@lru_cache(maxsize=None)
def default_luts() -> LutSet:
    return build_luts()


def _nearest_step(raw: int) -> int:
    # round(raw / 2**24 * 32), half up
    return (raw + (1 << (FRAC_BITS - 6))) >> (FRAC_BITS - 5)


def approx_exp_neg(z: int, luts: LutSet | None = None) -> int:
    """e^-z from the exp table; z outside [0, 320/32) clamps to the end entries."""
    luts = luts or default_luts()
    idx = min(max(_nearest_step(z), 0), EXP_LUT_SIZE - 1)
    return luts.lut_exp[idx]


def approx_invert(z: int, luts: LutSet | None = None) -> int:
    """1/z from the reciprocal table, index round(32 z) - 1, clamped."""
    luts = luts or default_luts()
    idx = min(max(_nearest_step(z) - 1, 0), INV_LUT_SIZE - 1)
    return luts.lut_inv[idx]


def approx_gelu(x: int, luts: LutSet | None = None) -> int:
    if x > GELU_HI_RAW:
        return x
    if x < GELU_LO_RAW:
        return 0
    luts = luts or default_luts()
    idx = ((x - GELU_LO_RAW) * GELU_LUT_SIZE) // (GELU_HI_RAW - GELU_LO_RAW)
    return luts.lut_gelu[min(max(idx, 0), GELU_LUT_SIZE - 1)]


def reciprocal_normalized(s: int, invert: Callable[[int], int]) -> int:
    """1/s for positive Q8.24 s using a reciprocal table over [4, 8).

    s is shifted by a power of two into [4, 8), inverted there, and the
    result shifted back; only shifts and the table lookup are involved.
    """
    if s <= 0:
        return RAW_MAX
    k = s.bit_length() - (FRAC_BITS + 3)
    m = s >> k if k >= 0 else s << -k
    r = invert(m)
    return r >> k if k >= 0 else saturate32(r << -k)


def approx_softmax(
    x: Sequence[int],
    luts: LutSet | None = None,
    *,
    exp_fn: Callable[[int], int] | None = None,
    inv_fn: Callable[[int], int] | None = None,
) -> list[int]:
    """Division-free softmax on Q8.24 inputs.

    e_i = exp_table(max - x_i), s = sum e_i, out_i = e_i * (1/s) where the
    reciprocal comes from the table after power-of-two range reduction.
    ``exp_fn``/``inv_fn`` let callers route the lookups elsewhere (e.g. the
    custom-instruction unit).
    """
    if len(x) == 0:
        raise ValueError("softmax of an empty vector")
    luts = luts or default_luts()
    exp_fn = exp_fn or (lambda z: approx_exp_neg(z, luts))
    inv_fn = inv_fn or (lambda z: approx_invert(z, luts))
    top = max(x)
    e = [exp_fn(saturate32(top - v)) for v in x]
    s = saturate32(sum(e))
    r = reciprocal_normalized(s, inv_fn)
    return [fixed_mul(v, r) for v in e]


def dump_luts(luts: LutSet, path) -> None:
    """Write exp, reciprocal, GELU tables as 672 little-endian int32 values."""
    Path(path).write_bytes(luts.as_array().tobytes())


def load_luts(path) -> LutSet:
    raw = np.frombuffer(Path(path).read_bytes(), dtype="<i4")
    if raw.size != EXP_LUT_SIZE + INV_LUT_SIZE + GELU_LUT_SIZE:
        raise ValueError(f"LUT dump holds {raw.size} entries")
    vals = [int(v) for v in raw]
    return LutSet(
        tuple(vals[:EXP_LUT_SIZE]),
        tuple(vals[EXP_LUT_SIZE : EXP_LUT_SIZE + INV_LUT_SIZE]),
        tuple(vals[EXP_LUT_SIZE + INV_LUT_SIZE :]),
    )
