"""Command-line entry point: ``kwt-tiny <command> ...``.

Exit codes: 0 success, 1 usage, 2 data/format, 3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import fixed_point as fp
from . import isa
from .fixture import DEFAULT_COUNT, DEFAULT_SEED, write_fixture
from .model import FormatError, QuantParams, load_input, load_weights, save_weights
from .pipeline import Mode, infer
from .profiler import Profiler
from .quantizer import TABLE_V_GRID, quantize_weight_set, sweep_scales
from .tensor_core import ArenaError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

DEFAULT_GRID = ";".join(f"{w},{x}" for w, x in TABLE_V_GRID)


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_grid(spec: str) -> list[QuantParams]:
    """``"8,8;64,32"`` (2^y factors for weights,input) -> exponent pairs."""
    grid = []
    for item in filter(None, (s.strip() for s in spec.split(";"))):
        try:
            w, x = (int(v) for v in item.split(","))
            grid.append(QuantParams.from_factors(w, x))
        except ValueError as exc:
            raise UsageError(f"bad grid entry {item!r}: {exc}") from None
    if not grid:
        raise UsageError("empty grid")
    return grid


def _load_weights(path):
    try:
        return load_weights(path)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None


def cmd_infer(args) -> int:
    ws = _load_weights(args.weights)
    try:
        spec = load_input(args.input, ws.config)
    except OSError as exc:
        raise DataError(f"cannot read {args.input}: {exc.strerror}") from None
    mode = Mode.parse(args.mode)
    if (mode == Mode.FLOAT) != (ws.quant is None):
        raise DataError(f"{mode.value} mode needs {'float' if mode == Mode.FLOAT else 'quantized'} weights, "
                        f"file holds {ws.form} weights")
    profiler = Profiler(mode.value) if args.profile else None
    result = infer(spec, ws, mode, profiler=profiler)
    print(f"class: {result.argmax}")
    print("logits: " + " ".join(f"{v:.6f}" for v in result.logits))
    print(f"arena high water: {result.high_water} (A={result.bank_high_water[0]}, B={result.bank_high_water[1]})")
    record = {
        "mode": mode.value,
        "class": result.argmax,
        "logits": [float(v) for v in result.logits],
        "arena_high_water": result.high_water,
    }
    if result.report is not None:
        print(result.report.to_text())
        record["profile"] = result.report.as_record()
    print(json.dumps(record, sort_keys=True))
    return EXIT_OK


def cmd_quantize(args) -> int:
    try:
        qp = QuantParams(args.weight_exp, args.input_exp)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    ws = _load_weights(args.weights)
    if ws.quant is not None:
        raise DataError(f"{args.weights} is already quantized")
    qws, report = quantize_weight_set(ws, qp)
    try:
        save_weights(qws, args.out)
    except OSError as exc:
        raise DataError(f"cannot write {args.out}: {exc.strerror}") from None
    print(report.to_text())
    print(f"wrote {args.out}")
    return EXIT_OK


def _load_inputs_dir(path, cfg) -> list[np.ndarray]:
    d = Path(path)
    if not d.is_dir():
        raise DataError(f"{path} is not a directory")
    files = sorted(p for p in d.iterdir() if p.is_file())
    if not files:
        raise DataError(f"no input files in {path}")
    return [load_input(p, cfg) for p in files]


def cmd_sweep(args) -> int:
    grid = parse_grid(args.grid)
    ws = _load_weights(args.weights)
    if ws.quant is not None:
        raise DataError("sweep needs float weights")
    inputs = _load_inputs_dir(args.inputs, ws.config)
    if args.limit:
        inputs = inputs[: args.limit]
    report = sweep_scales(ws, inputs, grid)
    print(report.to_text())
    print(report.to_jsonl())
    if args.json:
        Path(args.json).write_text(report.to_jsonl() + "\n")
    return EXIT_OK


def cmd_gen_fixture(args) -> int:
    try:
        weights, inputs = write_fixture(args.out_dir, args.seed, args.count)
    except OSError as exc:
        raise DataError(f"cannot write fixture to {args.out_dir}: {exc.strerror}") from None
    print(f"wrote {weights} and {args.count} inputs under {inputs}")
    return EXIT_OK


def cmd_instr(args) -> int:
    if args.action == "encode":
        try:
            instr = isa.parse_mnemonic(" ".join(args.operands))
            word = isa.encode(instr)
        except isa.EncodeError as exc:
            raise UsageError(str(exc)) from None
        print(f"{word:#010x}  {instr}")
        return EXIT_OK
    if len(args.operands) != 1:
        raise UsageError("decode takes exactly one word")
    try:
        word = int(args.operands[0], 0)
        instr = isa.decode(word)
    except ValueError as exc:  # DecodeError is a ValueError
        print(f"error: {exc}")
        return EXIT_DATA
    print(str(instr))
    return EXIT_OK


def cmd_dump_luts(args) -> int:
    luts = fp.default_luts()
    try:
        fp.dump_luts(luts, args.out)
    except OSError as exc:
        raise DataError(f"cannot write {args.out}: {exc.strerror}") from None
    print(f"wrote {len(luts.as_array())} entries ({luts.payload_bytes} bytes) to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kwt-tiny", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("infer", help="classify one spectrogram")
    s.add_argument("weights")
    s.add_argument("input")
    s.add_argument("--mode", default="float", choices=["float", "quant", "accel", "quantized", "accelerated"])
    s.add_argument("--profile", action="store_true", help="print the operation cost report")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("quantize", help="quantize a float weight file")
    s.add_argument("weights")
    s.add_argument("weight_exp", type=int)
    s.add_argument("input_exp", type=int)
    s.add_argument("out")
    s.set_defaults(func=cmd_quantize)

    s = sub.add_parser("sweep", help="float-vs-quantized agreement over a grid of scale factors")
    s.add_argument("weights")
    s.add_argument("inputs")
    s.add_argument("--grid", default=DEFAULT_GRID, help="'w,x;w,x' pairs of 2^y factors")
    s.add_argument("--limit", type=int, default=0, help="use only the first N inputs")
    s.add_argument("--json", help="also write the per-row records to this file")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("gen-fixture", help="write deterministic synthetic weights and inputs")
    s.add_argument("out_dir")
    s.add_argument("--seed", type=int, default=DEFAULT_SEED)
    s.add_argument("--count", type=int, default=DEFAULT_COUNT)
    s.set_defaults(func=cmd_gen_fixture)

    s = sub.add_parser("instr", help="encode/decode custom-1 instruction words")
    s.add_argument("action", choices=["encode", "decode"])
    s.add_argument("operands", nargs="+")
    s.set_defaults(func=cmd_instr)

    s = sub.add_parser("dump-luts", help="write the lookup tables as little-endian int32")
    s.add_argument("out")
    s.set_defaults(func=cmd_dump_luts)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ArenaError, AssertionError) as exc:
        print(f"internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
