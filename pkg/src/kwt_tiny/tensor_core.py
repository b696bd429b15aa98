"""Fixed-shape 2-D tensors, the small tensor library used by the engine, and
the two-bank arena that holds intermediate results.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class Domain(enum.Enum):
    REAL = "real"
    INT8 = "int8"
    INT16 = "int16"


INT_LIMITS = {
    Domain.INT8: (-128, 127),
    Domain.INT16: (-32768, 32767),
}

_DTYPES = {
    Domain.REAL: np.float64,
    Domain.INT8: np.int8,
    Domain.INT16: np.int16,
}


class ShapeError(ValueError):
    pass


class DomainError(TypeError):
    pass


class ArenaError(RuntimeError):
    pass


@dataclass(frozen=True)
class Tensor2D:
    """Row-major 2-D array tagged with its element domain.

    ``data`` is always a 2-D numpy array; tensors produced by library
    operations are read-only, tensors handed out by an arena bank are
    writable views of the bank storage.
    """

    data: np.ndarray
    domain: Domain = Domain.REAL

    def __post_init__(self):
        if self.data.ndim != 2:
            raise ShapeError(f"Tensor2D needs a 2-D array, got ndim={self.data.ndim}")
        if self.data.shape[0] < 1 or self.data.shape[1] < 1:
            raise ShapeError(f"empty tensor shape {self.data.shape}")
        if self.data.dtype != _DTYPES[self.domain]:
            raise DomainError(f"{self.domain.value} tensor stored as {self.data.dtype}")

    @classmethod
    def from_values(cls, values, domain: Domain = Domain.REAL) -> "Tensor2D":
        """Build a read-only tensor, checking integer values against the domain range."""
        arr = np.asarray(values)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if domain in INT_LIMITS:
            lo, hi = INT_LIMITS[domain]
            if arr.size and (arr.min() < lo or arr.max() > hi):
                raise DomainError(f"values outside {domain.value} range [{lo}, {hi}]")
        arr = np.array(arr, dtype=_DTYPES[domain])
        arr.setflags(write=False)
        return cls(arr, domain)

    @classmethod
    def zeros(cls, rows: int, cols: int, domain: Domain = Domain.REAL) -> "Tensor2D":
        return cls.from_values(np.zeros((rows, cols)), domain)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def elems(self) -> np.ndarray:
        return self.data.reshape(-1)

    def transpose(self) -> "Tensor2D":
        return Tensor2D.from_values(self.data.T, self.domain)

    def __eq__(self, other):
        if not isinstance(other, Tensor2D):
            return NotImplemented
        return self.domain == other.domain and np.array_equal(self.data, other.data)

    def __hash__(self):
        return hash((self.domain, self.data.shape, self.data.tobytes()))


def _freeze(arr: np.ndarray, domain: Domain) -> Tensor2D:
    arr.setflags(write=False)
    return Tensor2D(arr, domain)


def _store(result: np.ndarray, domain: Domain, out: Tensor2D | None) -> Tensor2D:
    if out is None:
        return _freeze(result.astype(_DTYPES[domain]), domain)
    if out.shape != result.shape:
        raise ShapeError(f"output slot {out.shape} does not fit result {result.shape}")
    if out.domain != domain:
        raise DomainError(f"output slot is {out.domain.value}, result is {domain.value}")
    out.data[...] = result
    return out


def saturate(values: np.ndarray, domain: Domain) -> np.ndarray:
    lo, hi = INT_LIMITS[domain]
    return np.clip(values, lo, hi)


def matrix_multiply(
    a: Tensor2D,
    b: Tensor2D,
    acc_domain: Domain | None = None,
    *,
    bias: np.ndarray | None = None,
    shift: int = 0,
    out: Tensor2D | None = None,
) -> Tensor2D:
    """C = A·B with the plain O(n^3) accumulation order.

    Real operands accumulate in float64, summing k = 0, 1, ... in order, so the
    result matches a naive triple loop exactly. Integer operands accumulate in
    64 bits; an optional ``bias`` (already at the product scale) is added, the
    sum is arithmetically shifted right by ``shift`` and then saturated to
    ``acc_domain`` (int16).
    """
    if a.cols != b.rows:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    a_int = a.domain in INT_LIMITS
    b_int = b.domain in INT_LIMITS
    if a_int != b_int:
        raise DomainError(f"mixed operand domains {a.domain.value} and {b.domain.value}")

    if not a_int:
        if acc_domain not in (None, Domain.REAL):
            raise DomainError("real operands accumulate in the real domain")
        if shift:
            raise DomainError("shift only applies to integer accumulation")
        acc = np.zeros((a.rows, b.cols))
        for k in range(a.cols):
            acc += a.data[:, k : k + 1] * b.data[k : k + 1, :]
        if bias is not None:
            acc += np.asarray(bias, dtype=np.float64).reshape(1, -1)
        return _store(acc, Domain.REAL, out)

    if acc_domain is None:
        acc_domain = Domain.INT16
    if acc_domain != Domain.INT16:
        raise DomainError("integer products accumulate into int16 outputs")
    acc = a.data.astype(np.int64) @ b.data.astype(np.int64)
    if bias is not None:
        acc += np.asarray(bias, dtype=np.int64).reshape(1, -1)
    if shift:
        acc >>= shift
    return _store(saturate(acc, acc_domain), acc_domain, out)


def compute_mean_and_variance(x) -> tuple[float, float]:
    """Mean and population variance of a vector."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise ValueError("mean/variance of an empty vector")
    mean = float(x.sum() / x.size)
    var = float(((x - mean) ** 2).sum() / x.size)
    return mean, var


def layer_norm(
    x: Tensor2D,
    gamma,
    beta,
    epsilon: float = 1e-5,
    *,
    out: Tensor2D | None = None,
) -> Tensor2D:
    gamma = np.asarray(gamma, dtype=np.float64).reshape(-1)
    beta = np.asarray(beta, dtype=np.float64).reshape(-1)
    if gamma.size != x.cols or beta.size != x.cols:
        raise ShapeError(f"gamma/beta length {gamma.size}/{beta.size} != cols {x.cols}")
    if x.domain != Domain.REAL:
        raise DomainError("layer_norm runs on real values; dequantize first")
    src = x.data
    mean = src.sum(axis=1, keepdims=True) / x.cols
    var = ((src - mean) ** 2).sum(axis=1, keepdims=True) / x.cols
    normed = (src - mean) / np.sqrt(var + epsilon)
    return _store(normed * gamma + beta, Domain.REAL, out)


def split_into_qkv(
    x_flat: Tensor2D,
    wq: Tensor2D,
    wk: Tensor2D,
    wv: Tensor2D,
    *,
    shift: int = 0,
    out: Tensor2D | None = None,
) -> tuple[Tensor2D, Tensor2D, Tensor2D]:
    """Project X to Q, K and V.

    With ``out`` (rows x 3*cols) the three products are written side by side
    into the slot and returned as views of it.
    """
    for name, w in (("wq", wq), ("wk", wk), ("wv", wv)):
        if w.rows != x_flat.cols:
            raise ShapeError(f"{name} has {w.rows} rows, input has {x_flat.cols} cols")
    if not (wq.cols == wk.cols == wv.cols):
        raise ShapeError("wq, wk and wv must share a head width")
    width = wq.cols
    acc = None if x_flat.domain == Domain.REAL else Domain.INT16
    if out is None:
        return tuple(matrix_multiply(x_flat, w, acc, shift=shift) for w in (wq, wk, wv))
    if out.shape != (x_flat.rows, 3 * width):
        raise ShapeError(f"qkv slot {out.shape} != {(x_flat.rows, 3 * width)}")
    parts = []
    for i, w in enumerate((wq, wk, wv)):
        view = Tensor2D(out.data[:, i * width : (i + 1) * width], out.domain)
        parts.append(matrix_multiply(x_flat, w, acc, shift=shift, out=view))
    return tuple(parts)


@dataclass
class ArenaBank:
    """Fixed-capacity buffer holding at most one live tensor."""

    capacity: int
    name: str = "bank"
    high_water: int = 0
    in_use: bool = False
    _storage: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.capacity < 1:
            raise ArenaError("bank capacity must be positive")

    def _buffer(self, domain: Domain) -> np.ndarray:
        buf = self._storage.get(domain)
        if buf is None:
            buf = np.zeros(self.capacity, dtype=_DTYPES[domain])
            self._storage[domain] = buf
        return buf


def arena_acquire(bank: ArenaBank, rows: int, cols: int, elem_domain: Domain = Domain.REAL) -> Tensor2D:
    if bank.in_use:
        raise ArenaError(f"{bank.name} is already holding a tensor")
    n = rows * cols
    if n > bank.capacity:
        raise ArenaError(f"{bank.name}: {rows}x{cols}={n} elements exceeds capacity {bank.capacity}")
    bank.in_use = True
    bank.high_water = max(bank.high_water, n)
    view = bank._buffer(elem_domain)[:n].reshape(rows, cols)
    view[...] = 0
    return Tensor2D(view, elem_domain)


def arena_release(bank: ArenaBank) -> None:
    if not bank.in_use:
        raise ArenaError(f"{bank.name} released while free")
    bank.in_use = False


@dataclass
class Arena:
    """The engine's two banks: A sized seqlen*mlp_dim, B sized seqlen*heads*dim_head*3."""

    a: ArenaBank
    b: ArenaBank

    @classmethod
    def for_config(cls, cfg) -> "Arena":
        return cls(
            ArenaBank(cfg.seqlen * cfg.mlp_dim, "bank A"),
            ArenaBank(cfg.seqlen * cfg.heads * cfg.dim_head * 3, "bank B"),
        )

    @property
    def high_water(self) -> int:
        return max(self.a.high_water, self.b.high_water)
