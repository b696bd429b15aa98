"""Software model of the custom-1 R-type extension that drives the LUT unit.

Word layout (bit ranges inclusive)::

    31..25 func7 | 24..20 rs2 | 19..15 rs1 | 14..12 func3 | 11..7 rd | 6..0 opcode
"""

from __future__ import annotations

import enum
import struct
from collections import Counter
from dataclasses import dataclass

from . import fixed_point as fp

CUSTOM1_OPCODE = 0b0101011


class AluOp(enum.IntEnum):
    ALU_EXP = 0b000
    ALU_INVERT = 0b001
    ALU_GELU = 0b011
    ALU_TO_FIXED = 0b100
    ALU_TO_FLOAT = 0b101


class DecodeError(ValueError):
    pass


class EncodeError(ValueError):
    pass


_VALID_FUNC3 = {op.value for op in AluOp}


@dataclass(frozen=True)
class CustomInstr:
    func3: int
    rd: int
    rs1: int
    rs2: int = 0
    func7: int = 0
    opcode: int = CUSTOM1_OPCODE

    @property
    def op(self) -> AluOp:
        return AluOp(self.func3)

    def __str__(self):
        text = f"{self.op.name} rd=x{self.rd} rs1=x{self.rs1}"
        return text + (f" rs2=x{self.rs2}" if self.rs2 else "")


def encode(instr: CustomInstr) -> int:
    if instr.opcode != CUSTOM1_OPCODE:
        raise EncodeError(f"opcode {instr.opcode:#09b} is not custom-1")
    if instr.func7 != 0:
        raise EncodeError(f"func7 must be 0, got {instr.func7}")
    if instr.func3 not in _VALID_FUNC3:
        raise EncodeError(f"func3 {instr.func3:03b} has no defined behaviour")
    for name in ("rd", "rs1", "rs2"):
        reg = getattr(instr, name)
        if not 0 <= reg < 32:
            raise EncodeError(f"{name}={reg} is not a register index")
    return (
        (instr.func7 << 25)
        | (instr.rs2 << 20)
        | (instr.rs1 << 15)
        | (instr.func3 << 12)
        | (instr.rd << 7)
        | instr.opcode
    )


def decode(word: int) -> CustomInstr:
    if not 0 <= word <= 0xFFFFFFFF:
        raise DecodeError(f"{word:#x} is not a 32-bit word")
    opcode = word & 0x7F
    if opcode != CUSTOM1_OPCODE:
        raise DecodeError(f"foreign opcode {opcode:#09b}")
    func7 = word >> 25
    if func7 != 0:
        raise DecodeError(f"func7 must be 0, got {func7:#09b}")
    func3 = (word >> 12) & 0x7
    if func3 not in _VALID_FUNC3:
        raise DecodeError(f"reserved func3 {func3:03b}")
    return CustomInstr(
        func3=func3,
        rd=(word >> 7) & 0x1F,
        rs1=(word >> 15) & 0x1F,
        rs2=(word >> 20) & 0x1F,
    )


class RegisterFile:
    """32 x 32-bit registers, x0 hard-wired to zero. Values are unsigned words."""

    def __init__(self):
        self._regs = [0] * 32

    def __getitem__(self, idx: int) -> int:
        return self._regs[idx]

    def __setitem__(self, idx: int, value: int):
        if idx != 0:
            self._regs[idx] = value & 0xFFFFFFFF


def _signed(word: int) -> int:
    return word - (1 << 32) if word & 0x80000000 else word


def float_bits(x: float) -> int:
    return struct.unpack("<I", struct.pack("<f", x))[0]


def bits_float(word: int) -> float:
    return struct.unpack("<f", struct.pack("<I", word & 0xFFFFFFFF))[0]


def alu(op: AluOp, operand: int, luts: fp.LutSet) -> int:
    """The modified-ALU datapath: one unsigned word in, one out."""
    if op == AluOp.ALU_TO_FIXED:
        return fp.to_fixed(bits_float(operand)) & 0xFFFFFFFF
    if op == AluOp.ALU_TO_FLOAT:
        return float_bits(fp.to_float(_signed(operand)))
    x = _signed(operand)
    if op == AluOp.ALU_EXP:
        result = fp.approx_exp_neg(x, luts)
    elif op == AluOp.ALU_INVERT:
        result = fp.approx_invert(x, luts)
    else:
        result = fp.approx_gelu(x, luts)
    return result & 0xFFFFFFFF


def execute(instr: CustomInstr, regs: RegisterFile, luts: fp.LutSet | None = None) -> None:
    # rs2 is never read
    regs[instr.rd] = alu(instr.op, regs[instr.rs1], luts or fp.default_luts())


class CustomUnit:
    """Engine-facing stand-in for inline ``asm`` invocations.

    Every call builds an instruction, encodes it, decodes the word and
    executes it on a scratch register file, counting executions per op.
    """

    SRC = 10  # a0
    DST = 11  # a1

    def __init__(self, luts: fp.LutSet | None = None):
        self.luts = luts or fp.default_luts()
        self.regs = RegisterFile()
        self.executed: Counter = Counter()

    def dispatch(self, op: AluOp, x: int) -> int:
        self.regs[self.SRC] = x
        word = encode(CustomInstr(func3=int(op), rd=self.DST, rs1=self.SRC))
        instr = decode(word)
        execute(instr, self.regs, self.luts)
        self.executed[instr.op] += 1
        return self.regs[self.DST]

    # signed Q8.24 conveniences for the pipeline
    def exp_neg(self, z: int) -> int:
        return _signed(self.dispatch(AluOp.ALU_EXP, z))

    def invert(self, z: int) -> int:
        return _signed(self.dispatch(AluOp.ALU_INVERT, z))

    def gelu(self, x: int) -> int:
        return _signed(self.dispatch(AluOp.ALU_GELU, x))

    def to_fixed(self, x: float) -> int:
        return _signed(self.dispatch(AluOp.ALU_TO_FIXED, float_bits(x)))

    def to_float(self, raw: int) -> float:
        return bits_float(self.dispatch(AluOp.ALU_TO_FLOAT, raw))


def dispatch(op: AluOp, x: int, luts: fp.LutSet | None = None) -> int:
    return CustomUnit(luts).dispatch(op, x)


def parse_mnemonic(text: str) -> CustomInstr:
    """Parse ``"ALU_GELU rd=2 rs1=1 [rs2=0]"`` (register values may carry an ``x`` prefix)."""
    tokens = text.replace(",", " ").split()
    if not tokens:
        raise EncodeError("empty instruction")
    try:
        op = AluOp[tokens[0].upper()]
    except KeyError:
        raise EncodeError(f"unknown mnemonic {tokens[0]!r}") from None
    fields = {"rd": 0, "rs1": 0, "rs2": 0}
    for tok in tokens[1:]:
        key, sep, value = tok.partition("=")
        if not sep or key not in fields:
            raise EncodeError(f"bad operand {tok!r}")
        value = value.lower().removeprefix("x")
        if not value.isdigit():
            raise EncodeError(f"bad register {tok!r}")
        fields[key] = int(value)
    return CustomInstr(func3=int(op), **fields)
