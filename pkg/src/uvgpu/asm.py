"""Assembler: text to Program and the canonical formatter back to text.

Syntax, one instruction per line:

    mnemonic[.type][.mode] dst, src, ...     ; comment

Registers are r0..r255 with 16-bit halves r4.l / r4.h; immediates are
decimal, 0x-hex, or (as sugar for float-typed operands) float literals that
are stored as their 32-bit pattern.  Memory operands are [rN], [rN+imm],
[rN-imm].  Directives: .kernel NAME, .func NAME, .regs N, .scratch N.

parse(format(p)) == p for every valid program; format never emits sugar
(mov, float literals), so formatting is idempotent.  Parsing never raises
on malformed text: every failure is a Diagnostic with a 1-based line and
column.
"""
from __future__ import annotations

import re
import struct
from dataclasses import dataclass

from . import isa
from .isa import (
    Arith, AsyncCopy, Atomic, Bar, Break, Call, Cmp, Cvt, Else, EndIf,
    EndLoop, Fence, Halt, If, Ld, Loop, Mma, Program, ReadSpecial, RegRef,
    Ret, Shfl, St, WaitAsync,
)

U32_MAX = (1 << 32) - 1


@dataclass(frozen=True)
class Diagnostic:
    line: int
    column: int
    message: str
    severity: str = "error"

    def __str__(self):
        return f"{self.line}:{self.column}: {self.severity}: {self.message}"


class _PErr(Exception):
    def __init__(self, column: int, message: str):
        self.column = column
        self.message = message


_REG_RE = re.compile(r"^r(\d+)(?:\.(l|h))?$")
_INT_RE = re.compile(r"^-?(?:0x[0-9a-fA-F]+|\d+)$")
_FLOAT_RE = re.compile(r"^-?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?$")
_MEM_RE = re.compile(
    r"^\[\s*(r\d+(?:\.(?:l|h))?)\s*(?:([+-])\s*(0x[0-9a-fA-F]+|\d+)\s*)?\]$"
)
_IDENT_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_TILE_RE = re.compile(r"^(\d+)x(\d+)x(\d+)$")

_PART = {None: isa.FULL32, "l": isa.LOW16, "h": isa.HIGH16}
_PART_SUFFIX = {isa.FULL32: "", isa.LOW16: ".l", isa.HIGH16: ".h"}


def _parse_reg(tok: str, col: int) -> RegRef:
    m = _REG_RE.match(tok)
    if not m:
        raise _PErr(col, f"expected a register, got '{tok}'")
    idx = int(m.group(1))
    if idx > 255:
        raise _PErr(col, f"register index {idx} out of range")
    return RegRef(idx, _PART[m.group(2)])


def _parse_int(tok: str, col: int) -> int:
    # not int(tok, 0): base 0 rejects leading zeros like '0155'
    base = 16 if tok.lstrip("-").lower().startswith("0x") else 10
    v = int(tok, base)
    if not -(1 << 31) <= v <= U32_MAX:
        raise _PErr(col, f"immediate {tok} does not fit in 32 bits")
    return v & U32_MAX


def _f32_bits(value: float) -> int:
    return struct.unpack("<I", struct.pack("<f", value))[0]


@dataclass
class _Op:
    kind: str  # reg | imm | mem | ident
    value: object
    col: int
    text: str


def _classify(tok: str, col: int) -> _Op:
    if _REG_RE.match(tok):
        return _Op("reg", _parse_reg(tok, col), col, tok)
    if _INT_RE.match(tok):
        return _Op("imm", _parse_int(tok, col), col, tok)
    if tok.startswith("["):
        m = _MEM_RE.match(tok)
        if not m:
            raise _PErr(col, f"malformed memory operand '{tok}'")
        base = _parse_reg(m.group(1), col)
        off = 0
        if m.group(3) is not None:
            g = m.group(3)
            off = int(g, 16 if g.lower().startswith("0x") else 10)
            if m.group(2) == "-":
                off = -off
            if not -(1 << 31) <= off < (1 << 31):
                raise _PErr(col, f"offset in '{tok}' does not fit in 32 bits")
        return _Op("mem", (base, off), col, tok)
    if _FLOAT_RE.match(tok) and ("." in tok or "e" in tok or "E" in tok):
        return _Op("imm", _f32_bits(float(tok)), col, tok)
    if _IDENT_RE.match(tok):
        return _Op("ident", tok, col, tok)
    raise _PErr(col, f"unrecognized operand '{tok}'")


def _split_operands(text: str, base_col: int) -> list[_Op]:
    ops = []
    if not text.strip():
        return ops
    pos = 0
    for chunk in text.split(","):
        col = base_col + pos
        stripped = chunk.strip()
        lead = len(chunk) - len(chunk.lstrip())
        if not stripped:
            raise _PErr(col + lead, "empty operand")
        toks = stripped.split()
        if len(toks) > 1:
            second_at = chunk.index(toks[1], lead + len(toks[0]))
            raise _PErr(base_col + pos + second_at, "expected ','")
        ops.append(_classify(stripped, col + lead))
        pos += len(chunk) + 1
    return ops


def _arity(ops: list[_Op], n: int, line_col: int):
    if len(ops) != n:
        col = ops[n].col if len(ops) > n else line_col
        raise _PErr(col, f"expected {n} operand(s), got {len(ops)}")


def _reg(op: _Op) -> RegRef:
    if op.kind != "reg":
        raise _PErr(op.col, f"expected a register, got '{op.text}'")
    return op.value


def _reg_or_imm(op: _Op):
    if op.kind == "reg":
        return op.value
    if op.kind == "imm":
        return op.value
    raise _PErr(op.col, f"expected a register or immediate, got '{op.text}'")


def _imm(op: _Op) -> int:
    if op.kind != "imm":
        raise _PErr(op.col, f"expected an immediate, got '{op.text}'")
    return op.value


def _mem(op: _Op):
    if op.kind != "mem":
        raise _PErr(op.col, f"expected a memory operand like [r1+4], got '{op.text}'")
    return op.value


_TYPES = set(isa.SCALAR_TYPES)
_WIDTHS = {"8": 8, "16": 16, "32": 32}


def _parse_instruction(mnem: str, mcol: int, ops: list[_Op], line_col: int):
    parts = mnem.split(".")
    head = parts[0]

    def suffixes(n):
        if len(parts) - 1 != n:
            raise _PErr(mcol, f"malformed mnemonic '{mnem}'")
        return parts[1:]

    if head in isa.ARITH_OPS and len(parts) > 1:
        (ty,) = suffixes(1)
        if ty not in _TYPES:
            raise _PErr(mcol, f"unknown type suffix '{ty}'")
        nsrc = 1 if head in isa.UNARY_OPS else 3 if head == "fma" else 2
        _arity(ops, 1 + nsrc, line_col)
        return Arith(head, ty, _reg(ops[0]),
                     tuple(_reg_or_imm(o) for o in ops[1:]))
    if head == "mov":
        # sugar: mov rd, src  ->  or.u32 rd, src, 0
        if parts != ["mov"]:
            raise _PErr(mcol, f"malformed mnemonic '{mnem}'")
        _arity(ops, 2, line_col)
        return Arith("or", isa.U32, _reg(ops[0]), (_reg_or_imm(ops[1]), 0))
    if head == "cvt":
        to_ty, from_ty = suffixes(2)
        for t in (to_ty, from_ty):
            if t not in _TYPES:
                raise _PErr(mcol, f"unknown type suffix '{t}'")
        _arity(ops, 2, line_col)
        return Cvt(to_ty, from_ty, _reg(ops[0]), _reg(ops[1]))
    if head == "cmp":
        rel, ty = suffixes(2)
        if rel not in isa.CMP_RELS:
            raise _PErr(mcol, f"unknown relation '{rel}'")
        if ty not in _TYPES:
            raise _PErr(mcol, f"unknown type suffix '{ty}'")
        _arity(ops, 3, line_col)
        return Cmp(rel, ty, _reg(ops[0]), _reg_or_imm(ops[1]),
                   _reg_or_imm(ops[2]))
    if head in ("ld", "st"):
        space, width = suffixes(2)
        if space not in isa.MEM_SPACES:
            raise _PErr(mcol, f"unknown space '{space}'")
        if width not in _WIDTHS:
            raise _PErr(mcol, f"unsupported width '{width}'")
        _arity(ops, 2, line_col)
        if head == "ld":
            base, off = _mem(ops[1])
            return Ld(space, _WIDTHS[width], _reg(ops[0]), base, off)
        base, off = _mem(ops[0])
        return St(space, _WIDTHS[width], base, off, _reg_or_imm(ops[1]))
    if head == "atom":
        op, space = suffixes(2)
        if op not in isa.ATOMIC_OPS:
            raise _PErr(mcol, f"unknown atomic op '{op}'")
        if space not in isa.ATOMIC_SPACES:
            raise _PErr(mcol, f"unknown space '{space}'")
        if op == "cmpxch":
            _arity(ops, 4, line_col)
            base, off = _mem(ops[1])
            if off:
                raise _PErr(ops[1].col, "atomic addresses take no offset")
            return Atomic(op, space, _reg(ops[0]), base,
                          _reg_or_imm(ops[3]), _reg_or_imm(ops[2]))
        _arity(ops, 3, line_col)
        base, off = _mem(ops[1])
        if off:
            raise _PErr(ops[1].col, "atomic addresses take no offset")
        return Atomic(op, space, _reg(ops[0]), base, _reg_or_imm(ops[2]))
    if head == "shfl":
        mode, b32 = suffixes(2)
        if mode not in isa.SHFL_MODES:
            raise _PErr(mcol, f"unknown shuffle mode '{mode}'")
        if b32 != "b32":
            raise _PErr(mcol, "shuffles operate on .b32 exactly")
        _arity(ops, 3, line_col)
        return Shfl(mode, _reg(ops[0]), _reg(ops[1]), _reg_or_imm(ops[2]))
    if head == "bar":
        suffixes(0)
        if not ops:
            return Bar(0)
        _arity(ops, 1, line_col)
        return Bar(_imm(ops[0]))
    if head == "fence":
        order, scope = suffixes(2)
        if order not in isa.FENCE_ORDERS:
            raise _PErr(mcol, f"unknown fence order '{order}'")
        if scope not in isa.FENCE_SCOPES:
            raise _PErr(mcol, f"unknown fence scope '{scope}'")
        _arity(ops, 0, line_col)
        return Fence(order, scope)
    if head == "cpasync":
        suffixes(0)
        _arity(ops, 3, line_col)
        return AsyncCopy(_reg(ops[0]), _reg(ops[1]), _imm(ops[2]))
    if head == "waitasync":
        suffixes(0)
        _arity(ops, 1, line_col)
        return WaitAsync(_imm(ops[0]))
    if head == "rdspec":
        suffixes(0)
        _arity(ops, 2, line_col)
        if ops[1].kind != "ident" or ops[1].value not in isa.SPECIALS:
            raise _PErr(ops[1].col, f"unknown special value '{ops[1].text}'")
        return ReadSpecial(_reg(ops[0]), ops[1].value)
    if head == "if":
        suffixes(0)
        _arity(ops, 1, line_col)
        return If(_reg(ops[0]))
    if head == "else":
        suffixes(0)
        _arity(ops, 0, line_col)
        return Else()
    if head == "endif":
        suffixes(0)
        _arity(ops, 0, line_col)
        return EndIf()
    if head == "loop":
        suffixes(0)
        _arity(ops, 0, line_col)
        return Loop()
    if head == "break":
        suffixes(0)
        if not ops:
            return Break(None)
        _arity(ops, 1, line_col)
        return Break(_reg(ops[0]))
    if head == "endloop":
        suffixes(0)
        _arity(ops, 0, line_col)
        return EndLoop()
    if head == "call":
        suffixes(0)
        _arity(ops, 1, line_col)
        if ops[0].kind != "ident":
            raise _PErr(ops[0].col, f"expected a function name, got '{ops[0].text}'")
        return Call(ops[0].value)
    if head == "ret":
        suffixes(0)
        _arity(ops, 0, line_col)
        return Ret()
    if head == "halt":
        suffixes(0)
        _arity(ops, 0, line_col)
        return Halt()
    if head == "mma":
        (tile,) = suffixes(1)
        m = _TILE_RE.match(tile)
        if not m:
            raise _PErr(mcol, f"malformed tile '{tile}'")
        _arity(ops, 4, line_col)
        return Mma(tuple(int(g) for g in m.groups()), _reg(ops[0]),
                   _reg(ops[1]), _reg(ops[2]), _reg(ops[3]))
    raise _PErr(mcol, f"unknown mnemonic '{head}'")


def parse_program(source: str):
    """Returns (Program | None, diagnostics); the program is None iff any
    diagnostic is an error."""
    diags: list[Diagnostic] = []
    functions: dict[str, list] = {}
    entry = None
    regs_decl = None
    scratch_decl = None
    current: list | None = None

    def err(lineno, col, msg):
        diags.append(Diagnostic(lineno, col, msg))

    for lineno, raw in enumerate(source.splitlines(), start=1):
        line = raw.split(";", 1)[0].rstrip()
        if not line.strip():
            continue
        col0 = len(line) - len(line.lstrip()) + 1
        text = line.strip()

        if text.startswith("."):
            fields = text.split(None, 1)
            name = fields[0]
            arg = fields[1].strip() if len(fields) > 1 else ""
            argcol = line.index(arg, col0 - 1) + 1 if arg else col0 + len(name)
            if name in (".kernel", ".func"):
                if not _IDENT_RE.match(arg):
                    err(lineno, argcol, f"{name} needs a function name")
                    current = None
                    continue
                if arg in functions:
                    err(lineno, argcol, f"duplicate function '{arg}'")
                    current = None
                    continue
                if name == ".kernel":
                    if entry is not None:
                        err(lineno, argcol, "a program has exactly one kernel")
                        current = None
                        continue
                    entry = arg
                functions[arg] = []
                current = functions[arg]
            elif name in (".regs", ".scratch"):
                if not arg.isdigit():
                    err(lineno, argcol, f"{name} needs a non-negative integer")
                    continue
                if name == ".regs":
                    if regs_decl is not None:
                        err(lineno, col0, "duplicate .regs directive")
                    regs_decl = int(arg)
                else:
                    if scratch_decl is not None:
                        err(lineno, col0, "duplicate .scratch directive")
                    scratch_decl = int(arg)
            else:
                err(lineno, col0, f"unknown directive '{name}'")
            continue

        if current is None:
            err(lineno, col0, "instruction outside .kernel or .func")
            continue
        mnem = text.split(None, 1)[0]
        mcol = line.index(mnem) + 1
        rest_at = mcol - 1 + len(mnem)
        try:
            ops = _split_operands(line[rest_at:], rest_at + 1)
            current.append(_parse_instruction(mnem, mcol, ops, len(line) + 1))
        except _PErr as e:
            err(lineno, e.column, e.message)

    if entry is None:
        err(max(len(source.splitlines()), 1), 1, "no kernel defined")
    if diags:
        return None, diags

    funcs = {name: tuple(body) for name, body in functions.items()}
    if regs_decl is None:
        regs_decl = _infer_regs(funcs)
    prog = Program(functions=funcs, entry=entry, regs_used=regs_decl,
                   scratch_used=scratch_decl or 0)
    return prog, diags


def _infer_regs(functions: dict) -> int:
    top = 0
    for body in functions.values():
        for instr in body:
            for ref, wide in isa._operand_regs(instr):
                top = max(top, ref.index + (2 if wide else 1))
            if isinstance(instr, Mma):
                for base in (instr.dst, instr.a, instr.b, instr.c):
                    top = max(top, base.index + 1)
    return max(top, 1)


# ---------------------------------------------------------------- formatting

def _fmt_reg(r: RegRef) -> str:
    return f"r{r.index}{_PART_SUFFIX[r.part]}"


def _fmt_operand(v) -> str:
    if isinstance(v, RegRef):
        return _fmt_reg(v)
    return str(v)


def _fmt_mem(base: RegRef, off: int) -> str:
    if off == 0:
        return f"[{_fmt_reg(base)}]"
    sign = "+" if off > 0 else "-"
    return f"[{_fmt_reg(base)}{sign}{abs(off)}]"


def format_instruction(instr) -> str:
    m = mnemonic(instr)
    if isinstance(instr, Arith):
        return f"{m} " + ", ".join(
            [_fmt_reg(instr.dst)] + [_fmt_operand(s) for s in instr.srcs])
    if isinstance(instr, Cvt):
        return f"{m} {_fmt_reg(instr.dst)}, {_fmt_reg(instr.src)}"
    if isinstance(instr, Cmp):
        return (f"{m} {_fmt_reg(instr.dst)}, {_fmt_operand(instr.a)}, "
                f"{_fmt_operand(instr.b)}")
    if isinstance(instr, Ld):
        return f"{m} {_fmt_reg(instr.dst)}, {_fmt_mem(instr.addr, instr.offset)}"
    if isinstance(instr, St):
        return (f"{m} {_fmt_mem(instr.addr, instr.offset)}, "
                f"{_fmt_operand(instr.src)}")
    if isinstance(instr, Atomic):
        out = f"{m} {_fmt_reg(instr.dst)}, {_fmt_mem(instr.addr, 0)}"
        if instr.op == "cmpxch":
            out += f", {_fmt_operand(instr.compare)}"
        return out + f", {_fmt_operand(instr.value)}"
    if isinstance(instr, Shfl):
        return (f"{m} {_fmt_reg(instr.dst)}, {_fmt_reg(instr.src)}, "
                f"{_fmt_operand(instr.operand)}")
    if isinstance(instr, Bar):
        return f"bar {instr.id}"
    if isinstance(instr, AsyncCopy):
        return (f"cpasync {_fmt_reg(instr.dst_off)}, "
                f"{_fmt_reg(instr.src_addr)}, {instr.nbytes}")
    if isinstance(instr, WaitAsync):
        return f"waitasync {instr.max_outstanding}"
    if isinstance(instr, ReadSpecial):
        return f"rdspec {_fmt_reg(instr.dst)}, {instr.which}"
    if isinstance(instr, If):
        return f"if {_fmt_reg(instr.cond)}"
    if isinstance(instr, Break):
        return f"break {_fmt_reg(instr.cond)}" if instr.cond else "break"
    if isinstance(instr, Call):
        return f"call {instr.target}"
    if isinstance(instr, Mma):
        return f"{m} " + ", ".join(
            _fmt_reg(r) for r in (instr.dst, instr.a, instr.b, instr.c))
    return m  # fence/else/endif/loop/endloop/ret/halt have no operands


def mnemonic(instr) -> str:
    if isinstance(instr, Arith):
        return f"{instr.op}.{instr.type}"
    if isinstance(instr, Cvt):
        return f"cvt.{instr.to_type}.{instr.from_type}"
    if isinstance(instr, Cmp):
        return f"cmp.{instr.rel}.{instr.type}"
    if isinstance(instr, Ld):
        return f"ld.{instr.space}.{instr.width}"
    if isinstance(instr, St):
        return f"st.{instr.space}.{instr.width}"
    if isinstance(instr, Atomic):
        return f"atom.{instr.op}.{instr.space}"
    if isinstance(instr, Shfl):
        return f"shfl.{instr.mode}.b32"
    if isinstance(instr, Bar):
        return "bar"
    if isinstance(instr, Fence):
        return f"fence.{instr.order}.{instr.scope}"
    if isinstance(instr, AsyncCopy):
        return "cpasync"
    if isinstance(instr, WaitAsync):
        return "waitasync"
    if isinstance(instr, ReadSpecial):
        return "rdspec"
    if isinstance(instr, Mma):
        return "mma." + "x".join(str(d) for d in instr.tile)
    simple = {If: "if", Else: "else", EndIf: "endif", Loop: "loop",
              Break: "break", EndLoop: "endloop", Call: "call", Ret: "ret",
              Halt: "halt"}
    return simple[type(instr)]


def format_program(p: Program) -> str:
    """Canonical text: declarations, then each function with two-space
    indentation per open structured block.  Declarations that match what
    parsing would infer (regs from the highest index used, scratch 0) are
    omitted, so minimal programs stay minimal."""
    lines = []
    if p.regs_used != _infer_regs(p.functions):
        lines.append(f".regs {p.regs_used}")
    if p.scratch_used:
        lines.append(f".scratch {p.scratch_used}")
    for name, body in p.functions.items():
        lines.append(f".{'kernel' if name == p.entry else 'func'} {name}")
        depth = 0
        for instr in body:
            if isinstance(instr, (EndIf, EndLoop)):
                depth = max(depth - 1, 0)
                lines.append("  " * depth + format_instruction(instr))
            elif isinstance(instr, Else):
                lines.append("  " * max(depth - 1, 0) + format_instruction(instr))
            else:
                lines.append("  " * depth + format_instruction(instr))
                if isinstance(instr, (If, Loop)):
                    depth += 1
        lines.append("")
    return "\n".join(lines)
