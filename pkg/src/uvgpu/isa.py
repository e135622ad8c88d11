"""Instruction data model and the machine-aware program validator.

Instructions are plain frozen dataclasses; a program is a dict of named
instruction sequences with one entry kernel.  There is no binary encoding:
the canonical interchange form is the assembly text in asm.py.

Register model: 32-bit registers with independently addressable 16-bit
halves.  Conditions live in general registers (nonzero means true).  F64
values occupy an even/odd-adjacent register pair named by the low register;
F64 arithmetic therefore rejects immediate operands.
"""
from __future__ import annotations

from dataclasses import dataclass

# register parts
FULL32 = "full32"
LOW16 = "low16"
HIGH16 = "high16"

# scalar types
I32, U32, F16, F32, F64, BF16 = "i32", "u32", "f16", "f32", "f64", "bf16"
SCALAR_TYPES = (I32, U32, F16, F32, F64, BF16)
INT_TYPES = (I32, U32)
WIDE_TYPES = (F64,)

ARITH_OPS = (
    "add", "sub", "mul", "div", "min", "max", "fma",
    "and", "or", "xor", "shl", "shr", "not", "neg",
)
BITWISE_OPS = ("and", "or", "xor", "shl", "shr", "not")
UNARY_OPS = ("not", "neg")
CMP_RELS = ("eq", "ne", "lt", "le", "gt", "ge")
MEM_SPACES = ("scratch", "device", "arg")
MEM_WIDTHS = (8, 16, 32)
ATOMIC_OPS = ("add", "sub", "min", "max", "and", "or", "xor", "exch", "cmpxch")
ATOMIC_SPACES = ("scratch", "device")
SHFL_MODES = ("idx", "up", "down", "xor")
FENCE_SCOPES = ("wave", "workgroup", "device", "system")
FENCE_ORDERS = ("acquire", "release", "acqrel")
SPECIALS = (
    "lane_id", "wave_id", "wave_width",
    "tid_x", "tid_y", "tid_z",
    "wgid_x", "wgid_y", "wgid_z",
    "wgdim_x", "wgdim_y", "wgdim_z",
    "griddim_x", "griddim_y", "griddim_z",
)

MAX_DIVERGENCE_DEPTH = 32
MAX_CALL_DEPTH = 64


@dataclass(frozen=True)
class RegRef:
    index: int
    part: str = FULL32


# An operand is a RegRef or a 32-bit immediate stored as its unsigned pattern.


@dataclass(frozen=True)
class Arith:
    op: str
    type: str
    dst: RegRef
    srcs: tuple  # 1 src for not/neg, 3 for fma, else 2


@dataclass(frozen=True)
class Cvt:
    to_type: str
    from_type: str
    dst: RegRef
    src: RegRef


@dataclass(frozen=True)
class Cmp:
    rel: str
    type: str
    dst: RegRef
    a: "RegRef | int"
    b: "RegRef | int"


@dataclass(frozen=True)
class Ld:
    space: str
    width: int
    dst: RegRef
    addr: RegRef
    offset: int = 0  # signed byte offset


@dataclass(frozen=True)
class St:
    space: str
    width: int
    addr: RegRef
    offset: int
    src: RegRef


@dataclass(frozen=True)
class Atomic:
    op: str
    space: str
    dst: RegRef  # receives the pre-image
    addr: RegRef
    value: "RegRef | int"
    compare: "RegRef | int | None" = None  # cmpxch only


@dataclass(frozen=True)
class Shfl:
    mode: str
    dst: RegRef
    src: RegRef
    operand: "RegRef | int"


@dataclass(frozen=True)
class Bar:
    id: int = 0


@dataclass(frozen=True)
class Fence:
    order: str
    scope: str


@dataclass(frozen=True)
class AsyncCopy:
    dst_off: RegRef  # scratch byte offset, read from the first active lane
    src_addr: RegRef  # device byte address, read from the first active lane
    nbytes: int


@dataclass(frozen=True)
class WaitAsync:
    max_outstanding: int = 0


@dataclass(frozen=True)
class ReadSpecial:
    dst: RegRef
    which: str


@dataclass(frozen=True)
class If:
    cond: RegRef


@dataclass(frozen=True)
class Else:
    pass


@dataclass(frozen=True)
class EndIf:
    pass


@dataclass(frozen=True)
class Loop:
    pass


@dataclass(frozen=True)
class Break:
    cond: "RegRef | None" = None  # None: all active lanes leave the loop


@dataclass(frozen=True)
class EndLoop:
    pass


@dataclass(frozen=True)
class Call:
    target: str


@dataclass(frozen=True)
class Ret:
    pass


@dataclass(frozen=True)
class Mma:
    tile: tuple  # (M, N, K), must be advertised by the machine
    dst: RegRef  # start of the D fragment range
    a: RegRef
    b: RegRef
    c: RegRef


@dataclass(frozen=True)
class Halt:
    pass


Instruction = (
    Arith, Cvt, Cmp, Ld, St, Atomic, Shfl, Bar, Fence, AsyncCopy, WaitAsync,
    ReadSpecial, If, Else, EndIf, Loop, Break, EndLoop, Call, Ret, Mma, Halt,
)

CONTROL_MARKERS = (If, Else, EndIf, Loop, Break, EndLoop)


@dataclass(frozen=True)
class Program:
    functions: dict  # name -> tuple[Instruction, ...]
    entry: str
    regs_used: int
    scratch_used: int = 0


@dataclass(frozen=True)
class ValidationIssue:
    function: str
    index: int  # instruction index, -1 for program-level issues
    rule: str
    message: str

    def __str__(self):
        where = f"{self.function}[{self.index}]" if self.index >= 0 else self.function
        return f"{where}: {self.message} ({self.rule})"


def _operand_regs(instr):
    """Every RegRef an instruction reads or writes, with a wide flag for f64."""
    refs = []

    def add(x, wide=False):
        if isinstance(x, RegRef):
            refs.append((x, wide))

    if isinstance(instr, Arith):
        wide = instr.type == F64
        add(instr.dst, wide)
        for s in instr.srcs:
            add(s, wide)
    elif isinstance(instr, Cvt):
        add(instr.dst, instr.to_type == F64)
        add(instr.src, instr.from_type == F64)
    elif isinstance(instr, Cmp):
        wide = instr.type == F64
        add(instr.dst)
        add(instr.a, wide)
        add(instr.b, wide)
    elif isinstance(instr, Ld):
        add(instr.dst)
        add(instr.addr)
    elif isinstance(instr, St):
        add(instr.addr)
        add(instr.src)
    elif isinstance(instr, Atomic):
        add(instr.dst)
        add(instr.addr)
        add(instr.value)
        add(instr.compare)
    elif isinstance(instr, Shfl):
        add(instr.dst)
        add(instr.src)
        add(instr.operand)
    elif isinstance(instr, AsyncCopy):
        add(instr.dst_off)
        add(instr.src_addr)
    elif isinstance(instr, ReadSpecial):
        add(instr.dst)
    elif isinstance(instr, If):
        add(instr.cond)
    elif isinstance(instr, Break):
        add(instr.cond)
    elif isinstance(instr, Mma):
        pass  # handled by the mma-specific range check
    return refs


def _mma_range_len(elems: int, wave_width: int) -> int:
    return -(-elems // wave_width)


def validate_program(p: Program, m) -> list:
    """All rule violations of p against machine m; empty list means valid.

    Monotone in the machine: a program valid on A stays valid on any B whose
    limits dominate A's (wider budgets, superset capabilities, same width).
    """
    issues = []

    def bad(fn, idx, rule, msg):
        issues.append(ValidationIssue(fn, idx, rule, msg))

    if p.entry not in p.functions:
        bad("", -1, "entry", f"entry kernel '{p.entry}' is not defined")
        return issues
    if p.regs_used < 1 or p.regs_used > m.max_regs:
        bad("", -1, "regs-budget",
            f"declared register count {p.regs_used} exceeds machine register "
            f"limit {m.max_regs}")
    if p.scratch_used > m.scratchpad_bytes:
        bad("", -1, "scratch-budget",
            f"declared scratch {p.scratch_used} exceeds machine scratchpad "
            f"{m.scratchpad_bytes}")

    for fname, body in p.functions.items():
        is_kernel = fname == p.entry
        stack = []
        deepest = 0
        for i, instr in enumerate(body):
            # structural nesting
            if isinstance(instr, If):
                stack.append("if")
            elif isinstance(instr, Else):
                if not stack or stack[-1] != "if":
                    bad(fname, i, "nesting", "else without open if")
                else:
                    stack[-1] = "else"
            elif isinstance(instr, EndIf):
                if not stack or stack[-1] not in ("if", "else"):
                    bad(fname, i, "nesting", "endif without open if")
                else:
                    stack.pop()
            elif isinstance(instr, Loop):
                stack.append("loop")
            elif isinstance(instr, Break):
                if "loop" not in stack:
                    bad(fname, i, "nesting", "break outside any loop")
            elif isinstance(instr, EndLoop):
                if not stack or stack[-1] != "loop":
                    bad(fname, i, "nesting", "endloop without open loop")
                else:
                    stack.pop()
            deepest = max(deepest, len(stack))

            # register bounds, declared budget, f64 pairing
            for ref, wide in _operand_regs(instr):
                top = ref.index + (1 if wide else 0)
                if wide and ref.part != FULL32:
                    bad(fname, i, "f64-part", "f64 operands use full registers")
                if top >= m.max_regs:
                    bad(fname, i, "reg-bounds",
                        f"register index {top} exceeds machine register "
                        f"limit {m.max_regs}")
                elif top >= p.regs_used:
                    bad(fname, i, "reg-declared",
                        f"register index {top} outside declared count "
                        f"{p.regs_used}")

            # per-form rules
            if isinstance(instr, Arith):
                if instr.type not in SCALAR_TYPES:
                    bad(fname, i, "bad-type", f"unknown type '{instr.type}'")
                elif instr.op not in ARITH_OPS:
                    bad(fname, i, "bad-op", f"unknown arith op '{instr.op}'")
                else:
                    want = 1 if instr.op in UNARY_OPS else 3 if instr.op == "fma" else 2
                    if len(instr.srcs) != want:
                        bad(fname, i, "arity",
                            f"{instr.op} takes {want} source operand(s)")
                    if instr.op in BITWISE_OPS and instr.type not in INT_TYPES:
                        bad(fname, i, "arith-type",
                            f"{instr.op} requires an integer type")
                    if instr.type == F64 and any(
                            not isinstance(s, RegRef) for s in instr.srcs):
                        bad(fname, i, "f64-imm",
                            "f64 arithmetic cannot take 32-bit immediates")
                _check_float_caps(bad, fname, i, m, instr.type)
            elif isinstance(instr, Cvt):
                for t in (instr.to_type, instr.from_type):
                    if t not in SCALAR_TYPES:
                        bad(fname, i, "bad-type", f"unknown type '{t}'")
                    else:
                        _check_float_caps(bad, fname, i, m, t)
            elif isinstance(instr, Cmp):
                if instr.rel not in CMP_RELS:
                    bad(fname, i, "bad-op", f"unknown relation '{instr.rel}'")
                if instr.type not in SCALAR_TYPES:
                    bad(fname, i, "bad-type", f"unknown type '{instr.type}'")
                else:
                    _check_float_caps(bad, fname, i, m, instr.type)
                    if instr.type == F64 and any(
                            not isinstance(s, RegRef) for s in (instr.a, instr.b)):
                        bad(fname, i, "f64-imm",
                            "f64 compare cannot take 32-bit immediates")
            elif isinstance(instr, (Ld, St)):
                if instr.space not in MEM_SPACES:
                    bad(fname, i, "bad-space", f"unknown space '{instr.space}'")
                if instr.width not in MEM_WIDTHS:
                    bad(fname, i, "bad-width", f"unsupported width {instr.width}")
                if isinstance(instr, St) and instr.space == "arg":
                    bad(fname, i, "arg-readonly", "arg space is read-only")
            elif isinstance(instr, Atomic):
                if instr.op not in ATOMIC_OPS:
                    bad(fname, i, "bad-op", f"unknown atomic op '{instr.op}'")
                if instr.space not in ATOMIC_SPACES:
                    bad(fname, i, "bad-space",
                        f"atomics address scratch or device, not "
                        f"'{instr.space}'")
                if (instr.compare is not None) != (instr.op == "cmpxch"):
                    bad(fname, i, "arity",
                        "compare operand is for cmpxch exactly")
            elif isinstance(instr, Shfl):
                if instr.mode not in SHFL_MODES:
                    bad(fname, i, "bad-op", f"unknown shuffle mode '{instr.mode}'")
                if isinstance(instr.operand, int) and not (
                        0 <= instr.operand < m.wave_width):
                    bad(fname, i, "shfl-range",
                        f"shuffle operand {instr.operand} outside "
                        f"[0,{m.wave_width})")
            elif isinstance(instr, Bar):
                if not 0 <= instr.id < m.named_barriers:
                    bad(fname, i, "barrier-id",
                        f"barrier id {instr.id} outside machine's "
                        f"{m.named_barriers} named barrier(s)")
            elif isinstance(instr, Fence):
                if instr.order not in FENCE_ORDERS:
                    bad(fname, i, "bad-op", f"unknown fence order '{instr.order}'")
                if instr.scope not in FENCE_SCOPES:
                    bad(fname, i, "bad-space", f"unknown fence scope '{instr.scope}'")
            elif isinstance(instr, AsyncCopy):
                if instr.nbytes <= 0 or instr.nbytes % 4:
                    bad(fname, i, "copy-size",
                        "async copy length must be a positive multiple of 4")
            elif isinstance(instr, WaitAsync):
                if instr.max_outstanding < 0:
                    bad(fname, i, "arity", "wait bound must be non-negative")
            elif isinstance(instr, ReadSpecial):
                if instr.which not in SPECIALS:
                    bad(fname, i, "bad-special",
                        f"unknown special value '{instr.which}'")
            elif isinstance(instr, Call):
                if instr.target not in p.functions:
                    bad(fname, i, "call-target",
                        f"call target '{instr.target}' is not defined")
                elif instr.target == p.entry:
                    bad(fname, i, "call-target", "the entry kernel is not callable")
            elif isinstance(instr, Mma):
                if not m.matrix_tiles:
                    bad(fname, i, "matrix-cap", "matrix capability absent")
                elif tuple(instr.tile) not in m.matrix_tiles:
                    bad(fname, i, "matrix-tile",
                        f"tile {instr.tile} not advertised by machine")
                else:
                    mm, nn, kk = instr.tile
                    for base, elems in ((instr.a, mm * kk), (instr.b, kk * nn),
                                        (instr.c, mm * nn), (instr.dst, mm * nn)):
                        top = base.index + _mma_range_len(elems, m.wave_width) - 1
                        if top >= m.max_regs:
                            bad(fname, i, "reg-bounds",
                                f"register index {top} exceeds machine register "
                                f"limit {m.max_regs}")
                        elif top >= p.regs_used:
                            bad(fname, i, "reg-declared",
                                f"register index {top} outside declared count "
                                f"{p.regs_used}")
            elif isinstance(instr, Ret):
                if is_kernel:
                    bad(fname, i, "terminator", "kernels end with halt, not ret")
                elif i != len(body) - 1:
                    bad(fname, i, "terminator", "ret only as the last instruction")
            elif isinstance(instr, Halt):
                if not is_kernel:
                    bad(fname, i, "terminator", "only the kernel may halt the wave")
                elif i != len(body) - 1:
                    bad(fname, i, "terminator", "halt only as the last instruction")

        if stack:
            bad(fname, len(body) - 1, "nesting", "unclosed structured block")
        if deepest > MAX_DIVERGENCE_DEPTH:
            bad(fname, -1, "nest-depth",
                f"static nesting depth {deepest} exceeds {MAX_DIVERGENCE_DEPTH}")
        if is_kernel:
            if not body or not isinstance(body[-1], Halt):
                bad(fname, max(len(body) - 1, 0), "terminator",
                    "kernel must end with halt")
        else:
            if not body or not isinstance(body[-1], Ret):
                bad(fname, max(len(body) - 1, 0), "terminator",
                    "function must end with ret")
    return issues


def _check_float_caps(bad, fname, i, m, t):
    if t == F64 and not m.has_fp64:
        bad(fname, i, "fp64-cap", "f64 capability absent on this machine")
    if t == BF16 and not m.has_bf16:
        bad(fname, i, "bf16-cap", "bf16 capability absent on this machine")


def instruction_category(instr) -> str:
    """Counter bucket for dynamic instruction statistics."""
    if isinstance(instr, Arith):
        return "arith"
    if isinstance(instr, Cvt):
        return "cvt"
    if isinstance(instr, Cmp):
        return "cmp"
    if isinstance(instr, Ld):
        return "load"
    if isinstance(instr, St):
        return "store"
    if isinstance(instr, Atomic):
        return "atomic"
    if isinstance(instr, Shfl):
        return "shuffle"
    if isinstance(instr, Bar):
        return "barrier"
    if isinstance(instr, Fence):
        return "fence"
    if isinstance(instr, AsyncCopy):
        return "async_copy"
    if isinstance(instr, WaitAsync):
        return "wait_async"
    if isinstance(instr, ReadSpecial):
        return "special"
    if isinstance(instr, (Call, Ret)):
        return "call"
    if isinstance(instr, Mma):
        return "mma"
    if isinstance(instr, Halt):
        return "halt"
    return "control"
