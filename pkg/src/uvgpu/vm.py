"""Deterministic functional simulator with hardware-proxy counters.

Execution model: every wave executes one whole instruction per scheduler
step, memory effects apply immediately, and a seeded scheduler picks among
ready waves.  Identical (program, config, seed) triples produce bit-identical
memory, counters, and trace hashes.  Fences never change functional results
under this whole-instruction interleaving; their ordering obligations are
checked by the race detector instead.

Counters are structural proxies, not timings: barrier rendezvous rounds,
shuffle steps, scratch bank-conflict extra cycles, atomic serializations,
bytes moved, and dynamic instruction counts per category.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import isa
from .asm import mnemonic
from .machine import MachineDescriptor, occupancy
from .prng import SplitMix64
from .races import RaceDetector

U32 = np.uint32
DEFAULT_DEVICE_BYTES = 64 << 20
DEFAULT_STEP_LIMIT = 50_000_000

# wave status
_READY, _BARRIER, _HALTED = 0, 1, 2

# trap kinds
TRAP_BARRIER_DIVERGENCE = "barrier-divergence"
TRAP_DEADLOCK = "deadlock"
TRAP_OOB = "oob"
TRAP_MISALIGNED = "misaligned"
TRAP_DIV_ZERO = "div-zero"
TRAP_CALL_OVERFLOW = "call-overflow"
TRAP_DIVERGENCE_OVERFLOW = "divergence-overflow"
TRAP_MMA_DIVERGENCE = "mma-divergence"
TRAP_STEP_LIMIT = "step-limit"


class _TrapSignal(Exception):
    def __init__(self, kind: str, message: str):
        self.kind = kind
        self.message = message


@dataclass(frozen=True)
class Trap:
    kind: str
    workgroup: int
    wave: int
    pc: int
    message: str

    def __str__(self):
        return (f"trap: {self.message} [{self.kind}] "
                f"(workgroup {self.workgroup}, wave {self.wave}, pc {self.pc})")


@dataclass
class ExecStats:
    dynamic_instructions: dict
    barrier_rounds: int = 0
    shuffle_steps: int = 0
    bank_conflict_extra_cycles: int = 0
    atomic_serializations: int = 0
    scratch_bytes: int = 0
    device_bytes: int = 0
    scheduler_steps: int = 0
    trace_hash: int = 0

    @property
    def total_instructions(self) -> int:
        return sum(self.dynamic_instructions.values())

    def to_dict(self) -> dict:
        return {
            "dynamic_instructions": dict(sorted(
                self.dynamic_instructions.items())),
            "total_instructions": self.total_instructions,
            "barrier_rounds": self.barrier_rounds,
            "shuffle_steps": self.shuffle_steps,
            "bank_conflict_extra_cycles": self.bank_conflict_extra_cycles,
            "atomic_serializations": self.atomic_serializations,
            "scratch_bytes": self.scratch_bytes,
            "device_bytes": self.device_bytes,
            "scheduler_steps": self.scheduler_steps,
            "trace_hash": f"{self.trace_hash:016x}",
        }


@dataclass
class LaunchConfig:
    machine: MachineDescriptor
    grid: tuple = (1, 1, 1)
    workgroup_size: tuple = (1, 1, 1)
    args: tuple = ()
    seed: int = 0
    interleave_workgroups: bool = False
    check_races: bool = False
    trace: bool = False
    device_bytes: int = DEFAULT_DEVICE_BYTES
    device_image: "bytes | np.ndarray | None" = None
    step_limit: int = DEFAULT_STEP_LIMIT

    def __post_init__(self):
        if isinstance(self.grid, int):
            self.grid = (self.grid, 1, 1)
        if isinstance(self.workgroup_size, int):
            self.workgroup_size = (self.workgroup_size, 1, 1)
        self.grid = tuple(self.grid) + (1,) * (3 - len(self.grid))
        self.workgroup_size = (tuple(self.workgroup_size)
                               + (1,) * (3 - len(self.workgroup_size)))


@dataclass
class ExecResult:
    trap: "Trap | None"
    stats: ExecStats
    device_memory: np.ndarray
    race_reports: list = field(default_factory=list)
    trace: "list[str] | None" = None

    @property
    def completed(self) -> bool:
        return self.trap is None

    @property
    def outcome(self) -> str:
        return "completed" if self.completed else f"trap({self.trap.kind})"


# ------------------------------------------------------------- public ops

_LANE_CACHE: dict = {}


def _lanes(width: int) -> np.ndarray:
    arr = _LANE_CACHE.get(width)
    if arr is None:
        arr = _LANE_CACHE[width] = np.arange(width, dtype=np.int64)
    return arr


def eval_shuffle(mode: str, values: np.ndarray, operand, wave_width: int):
    """Cross-lane selection; sources are read regardless of lane activity.

    Register operands are masked into [0, wave_width); up/down clamp
    out-of-range lanes to self.
    """
    lane = _lanes(wave_width)
    op = np.asarray(operand).astype(np.int64) & (wave_width - 1)
    if mode == "idx":
        sel = np.broadcast_to(op, (wave_width,)) if op.ndim == 0 else op
    elif mode == "down":
        t = lane + op
        sel = np.where(t < wave_width, t, lane)
    elif mode == "up":
        t = lane - op
        sel = np.where(t >= 0, t, lane)
    elif mode == "xor":
        sel = lane ^ op
    else:
        raise ValueError(f"unknown shuffle mode '{mode}'")
    return values[sel]


def eval_atomic(op: str, old: int, value: int, compare: "int | None" = None):
    """One lane's read-modify-write on a 32-bit cell: (new_cell, returned).

    The return value is always the pre-image.  min/max compare signed.
    """
    M = 0xFFFFFFFF

    def signed(x):
        return x - (1 << 32) if x & 0x80000000 else x

    if op == "add":
        new = (old + value) & M
    elif op == "sub":
        new = (old - value) & M
    elif op == "min":
        new = old if signed(old) <= signed(value) else value
    elif op == "max":
        new = old if signed(old) >= signed(value) else value
    elif op == "and":
        new = old & value
    elif op == "or":
        new = old | value
    elif op == "xor":
        new = old ^ value
    elif op == "exch":
        new = value
    elif op == "cmpxch":
        new = value if old == compare else old
    else:
        raise ValueError(f"unknown atomic op '{op}'")
    return new, old


def count_bank_conflicts(addresses: np.ndarray, active_mask: int,
                         bank_count: int, bank_width: int = 4) -> int:
    """Extra cycles for one scratch access: per bank, distinct words beyond
    the first each cost one cycle.  Lanes reading the same word broadcast."""
    addrs = np.asarray(addresses, dtype=np.uint32)
    width = addrs.shape[0]
    if active_mask != (1 << width) - 1:
        bits = (np.uint64(active_mask) & (np.uint64(1) << _lanes(width).astype(
            np.uint64))) != 0
        addrs = addrs[bits]
    if addrs.size == 0:
        return 0
    return _bank_extra(addrs // np.uint32(bank_width), bank_count)


def _bank_extra(words: np.ndarray, bank_count: int) -> int:
    n = words.size
    if n <= 1:
        return 0
    w0 = words[0]
    if bool((words == w0).all()):
        return 0  # broadcast
    diffs = np.diff(words.astype(np.int64))
    s = diffs[0]
    if s and bool((diffs == s).all()):
        # uniform stride: lanes land on bank_count/gcd distinct banks
        distinct = bank_count // math.gcd(int(abs(s)), bank_count)
        return n - min(n, distinct)
    uw = np.unique(words)
    counts = np.bincount((uw % np.uint32(bank_count)).astype(np.int64),
                         minlength=bank_count)
    return int(uw.size - np.count_nonzero(counts))


# ------------------------------------------------------ operand plumbing

_FULL, _LOW, _HIGH = isa.FULL32, isa.LOW16, isa.HIGH16


def _imm_scalar(imm: int, ty: str):
    if ty == isa.U32:
        return U32(imm)
    if ty == isa.I32:
        return np.int32(imm - (1 << 32)) if imm & 0x80000000 else np.int32(imm)
    if ty == isa.F32:
        return np.array([imm], U32).view(np.float32)[0]
    if ty == isa.F16:
        return np.array([imm & 0xFFFF], np.uint16).view(np.float16)[0]
    if ty == isa.BF16:
        return np.array([(imm & 0xFFFF) << 16], U32).view(np.float32)[0]
    raise ValueError(f"immediate not representable as {ty}")


def _make_read(src, ty: str):
    """Reader closure returning the operand as its canonical numpy dtype
    (bf16 reads expand losslessly to float32; f64 reads join register pairs).
    Reads are not masked: shuffles and stores observe inactive lanes too."""
    if isinstance(src, int):
        k = _imm_scalar(src, ty)
        return lambda w: k
    i, part = src.index, src.part
    if ty in (isa.I32, isa.U32, isa.F32):
        if part == _FULL:
            if ty == isa.U32:
                return lambda w: w.regs[i]
            if ty == isa.I32:
                return lambda w: w.regs_i32[i]
            return lambda w: w.regs_f32[i]
        sel = ((lambda w: w.regs[i] & U32(0xFFFF)) if part == _LOW
               else (lambda w: w.regs[i] >> U32(16)))
        if ty == isa.U32:
            return sel
        view = np.int32 if ty == isa.I32 else np.float32
        return lambda w: sel(w).view(view)
    if ty == isa.F16:
        if part == _HIGH:
            return lambda w: (w.regs[i] >> U32(16)).astype(
                np.uint16).view(np.float16)
        return lambda w: (w.regs[i] & U32(0xFFFF)).astype(
            np.uint16).view(np.float16)
    if ty == isa.BF16:
        if part == _HIGH:
            return lambda w: (w.regs[i] & U32(0xFFFF0000)).view(np.float32)
        return lambda w: ((w.regs[i] & U32(0xFFFF)) << U32(16)).view(
            np.float32)
    if ty == isa.F64:
        return lambda w: (w.regs[i].astype(np.uint64)
                          | (w.regs[i + 1].astype(np.uint64) << np.uint64(32))
                          ).view(np.float64)
    raise ValueError(ty)


def _store32(w, i: int, val):
    if w.full:
        w.regs[i][...] = val
    else:
        np.copyto(w.regs[i], val, where=w.maskv)


def _bf16_bits(v) -> np.ndarray:
    u = np.asarray(v, dtype=np.float32).view(U32).astype(np.uint64)
    return (((u + 0x7FFF + ((u >> np.uint64(16)) & np.uint64(1)))
             >> np.uint64(16)).astype(U32))


def _make_write(dst: isa.RegRef, ty: str):
    """Writer closure taking a typed value; only active lanes change.
    32-bit results narrow to the low 16 bits when the target is a half;
    16-bit results zero-extend when the target is a full register."""
    i, part = dst.index, dst.part

    def to_bits(v):
        a = np.asarray(v)
        if ty == isa.F16:
            return a.view(np.uint16).astype(U32)
        if ty == isa.BF16:
            return _bf16_bits(a)
        return a.view(U32) if a.dtype != np.uint32 else a

    if ty == isa.F64:
        def wr(w, v):
            u = np.asarray(v).view(np.uint64)
            _store32(w, i, (u & np.uint64(0xFFFFFFFF)).astype(U32))
            _store32(w, i + 1, (u >> np.uint64(32)).astype(U32))
        return wr
    if part == _FULL:
        if ty in (isa.F16, isa.BF16):
            return lambda w, v: _store32(w, i, to_bits(v))

        def wr(w, v):
            a = np.asarray(v)
            _store32(w, i, a.view(U32) if a.dtype != np.uint32 else a)
        return wr
    if part == _LOW:
        return lambda w, v: _store32(
            w, i, (w.regs[i] & U32(0xFFFF0000)) | (to_bits(v) & U32(0xFFFF)))
    return lambda w, v: _store32(
        w, i, (w.regs[i] & U32(0xFFFF)) | ((to_bits(v) & U32(0xFFFF)) << U32(16)))


# ------------------------------------------------------ arithmetic tables

def _div_int(signed: bool):
    def div(a, b):
        a64 = np.asarray(a).view(np.int32).astype(np.int64) if signed \
            else np.asarray(a).astype(np.int64)
        b64 = np.asarray(b).view(np.int32).astype(np.int64) if signed \
            else np.asarray(b).astype(np.int64)
        q = np.abs(a64) // np.abs(b64)
        if signed:
            q = np.where((a64 ^ b64) < 0, -q, q)
        return (q & 0xFFFFFFFF).astype(U32)
    return div


def _shift_counts(b):
    return (np.asarray(b).view(U32) if np.asarray(b).dtype != np.uint32
            else np.asarray(b)) & U32(31)


_INT_OPS = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "and": lambda a, b: a & b,
    "or": lambda a, b: a | b,
    "xor": lambda a, b: a ^ b,
    "shl": lambda a, b: np.asarray(a).view(U32) << _shift_counts(b),
}


def _int_op(op: str, ty: str):
    if op in _INT_OPS:
        return _INT_OPS[op]
    signed = ty == isa.I32

    if op == "shr":
        if signed:
            return lambda a, b: (np.asarray(a).view(np.int32)
                                 >> _shift_counts(b).astype(np.int32))
        return lambda a, b: np.asarray(a).view(U32) >> _shift_counts(b)
    if op in ("min", "max"):
        fn = np.minimum if op == "min" else np.maximum
        return lambda a, b: fn(a, b)  # readers already give the signed view
    if op == "div":
        return _div_int(signed)
    if op == "fma":
        return lambda a, b, c: a * b + c
    if op == "neg":
        return lambda a: np.asarray(a).view(U32) * U32(0) - np.asarray(a).view(U32)
    if op == "not":
        return lambda a: ~np.asarray(a).view(U32)
    raise ValueError(op)


def _float_op(op: str, ty: str):
    if op in ("add", "sub", "mul", "div"):
        return {"add": lambda a, b: a + b, "sub": lambda a, b: a - b,
                "mul": lambda a, b: a * b, "div": lambda a, b: a / b}[op]
    if op == "min":
        return np.minimum
    if op == "max":
        return np.maximum
    if op == "neg":
        return lambda a: -np.asarray(a)
    if op == "fma":
        if ty == isa.F64:
            return lambda a, b, c: a * b + c
        # product and sum in f64, one rounding back to the narrow type
        out = np.float16 if ty == isa.F16 else np.float32
        return lambda a, b, c: (np.asarray(a, np.float64) * np.asarray(b, np.float64)
                                + np.asarray(c, np.float64)).astype(out)
    raise ValueError(op)


_CMP_OPS = {
    "eq": lambda a, b: a == b, "ne": lambda a, b: a != b,
    "lt": lambda a, b: a < b, "le": lambda a, b: a <= b,
    "gt": lambda a, b: a > b, "ge": lambda a, b: a >= b,
}

_CANON_DTYPE = {isa.I32: np.int32, isa.U32: np.uint32, isa.F16: np.float16,
                isa.F32: np.float32, isa.F64: np.float64, isa.BF16: np.float32}


def _cvt_fn(to_ty: str, from_ty: str):
    """Value conversion between canonical dtypes.  Float-to-int truncates
    toward zero and saturates; NaN becomes 0.  Int-to-int reinterprets bits."""
    int_from = from_ty in isa.INT_TYPES
    int_to = to_ty in isa.INT_TYPES
    if int_from and int_to:
        tgt = _CANON_DTYPE[to_ty]
        return lambda v: np.asarray(v).view(tgt)
    if int_to:
        lo, hi = ((-(2 ** 31), 2 ** 31 - 1) if to_ty == isa.I32
                  else (0, 2 ** 32 - 1))

        def f2i(v):
            x = np.asarray(v, np.float64)
            x = np.where(np.isnan(x), 0.0, x)
            x = np.clip(np.trunc(x), lo, hi)
            return (x.astype(np.int64) & 0xFFFFFFFF).astype(U32).view(
                _CANON_DTYPE[to_ty])
        return f2i
    tgt = _CANON_DTYPE[to_ty]
    return lambda v: np.asarray(v).astype(tgt)


# ------------------------------------------------------------- wave state

class WaveContext:
    __slots__ = (
        "wid", "index", "wg", "pc", "launch_mask", "mask", "maskv", "full",
        "active_n", "regs", "regs_i32", "regs_f32", "div_stack", "call_stack",
        "async_q", "status", "bar_id", "specials", "lane_bits",
    )

    def __init__(self, wid, index, wg, width, nregs, launch_mask, specials):
        self.wid = wid
        self.index = index
        self.wg = wg
        self.pc = 0
        self.launch_mask = launch_mask
        self.regs = np.zeros((nregs, width), dtype=U32)
        self.regs_i32 = self.regs.view(np.int32)
        self.regs_f32 = self.regs.view(np.float32)
        self.div_stack = []
        self.call_stack = []
        self.async_q = []
        self.status = _READY
        self.bar_id = -1
        self.specials = specials
        self.lane_bits = np.uint64(1) << _lanes(width).astype(np.uint64)
        self.set_mask(launch_mask)

    def set_mask(self, m: int):
        self.mask = m
        self.maskv = (self.lane_bits & np.uint64(m)) != 0
        self.full = m == self.launch_mask
        self.active_n = m.bit_count()

    @property
    def first_active(self) -> int:
        return (self.mask & -self.mask).bit_length() - 1


def _mask_bits(boolv: np.ndarray) -> int:
    return int.from_bytes(
        np.packbits(boolv, bitorder="little").tobytes(), "little")


class _Workgroup:
    __slots__ = ("index", "waves", "scratch", "scratch16", "scratch32", "live")

    def __init__(self, index, scratch_bytes):
        self.index = index
        alloc = max((scratch_bytes + 3) // 4 * 4, 4)
        self.scratch = np.zeros(alloc, dtype=np.uint8)
        self.scratch16 = self.scratch.view(np.uint16)
        self.scratch32 = self.scratch.view(U32)
        self.waves: list[WaveContext] = []
        self.live = 0


class _Run:
    """Mutable per-launch state shared by all compiled closures."""

    def __init__(self, machine, device, args, races, ncats):
        self.machine = machine
        self.device = device
        self.device16 = device.view(np.uint16)
        self.device32 = device.view(U32)
        self.args = args
        self.args8 = args.view(np.uint8)
        self.args16 = args.view(np.uint16)
        self.args32 = args
        self.counts = [0] * ncats
        self.barrier_rounds = 0
        self.shuffle_steps = 0
        self.bank_extra = 0
        self.atomic_serial = 0
        self.scratch_bytes = 0
        self.device_bytes_moved = 0
        self.races = races
        self.ready: list[WaveContext] = []

    def barrier_check(self, wg: _Workgroup, arriving):
        waiting = [x for x in wg.waves if x.status == _BARRIER]
        if not waiting or len(waiting) != wg.live:
            return
        if len({x.bar_id for x in waiting}) > 1:
            raise _TrapSignal(
                TRAP_DEADLOCK,
                "waves of one workgroup wait on different barrier ids")
        for x in waiting:
            x.status = _READY
            if x is not arriving:
                self.ready.append(x)
        self.barrier_rounds += 1
        if self.races:
            self.races.on_barrier([x.wid for x in waiting])


_CATEGORIES = ("arith", "cvt", "cmp", "load", "store", "atomic", "shuffle",
               "barrier", "fence", "async_copy", "wait_async", "special",
               "control", "call", "mma", "halt")
_CAT_INDEX = {c: i for i, c in enumerate(_CATEGORIES)}

_WIDTH_SHIFT = {8: 0, 16: 1, 32: 2}


def _flatten(program: isa.Program):
    names = [program.entry] + sorted(
        n for n in program.functions if n != program.entry)
    flat, starts = [], {}
    for nm in names:
        starts[nm] = len(flat)
        flat.extend(program.functions[nm])
    return flat, starts


def _match_structure(flat, starts, program):
    """For every If/Else record where control lands when its mask empties."""
    bounds = sorted(starts.values()) + [len(flat)]
    if_else: dict = {}
    else_end: dict = {}
    for b0, b1 in zip(bounds, bounds[1:]):
        stack = []
        for j in range(b0, b1):
            ins = flat[j]
            if isinstance(ins, isa.If):
                stack.append([j, None])
            elif isinstance(ins, isa.Else):
                stack[-1][1] = j
            elif isinstance(ins, isa.EndIf):
                ij, ej = stack.pop()
                if_else[ij] = ej if ej is not None else j
                if ej is not None:
                    else_end[ej] = j
            elif isinstance(ins, (isa.Loop,)):
                stack.append(None)
            elif isinstance(ins, isa.EndLoop):
                stack.pop()
    return if_else, else_end


def _compile(program, m, run: _Run, scratch_limit: int):
    """Translate the flattened program into per-instruction closures.

    A closure returns the next pc, or None to fall through.  Blocking and
    halting are signalled through wave.status; traps raise _TrapSignal.
    """
    W = m.wave_width
    flat, starts = _flatten(program)
    if_else, else_end = _match_structure(flat, starts, program)
    races = run.races
    device_limit = run.device.size
    arg_limit = run.args8.size
    bank_count = m.bank_count
    bank_width = U32(m.bank_width)

    def site_of(j, kind):
        from .races import AccessSite

        def make(w):
            return AccessSite(w.wg.index, w.wid, j, mnems[j], kind)
        return make

    def make_arith(ins, j):
        ty = ins.type
        wr = _make_write(ins.dst, ty)
        rds = [_make_read(s, ty) for s in ins.srcs]
        is_int = ty in isa.INT_TYPES
        if ins.op == "div" and is_int:
            ra, rb = rds
            opfn = _int_op("div", ty)

            def fn(w):
                if not w.mask:
                    return
                b = rb(w)
                zeros = np.broadcast_to(np.asarray(b) == 0, (W,))
                if bool((zeros & w.maskv).any()):
                    raise _TrapSignal(TRAP_DIV_ZERO,
                                      "integer division by zero")
                wr(w, opfn(ra(w), b))
            return fn
        opfn = _int_op(ins.op, ty) if is_int else _float_op(ins.op, ty)
        if len(rds) == 1:
            ra, = rds

            def fn(w):
                if w.mask:
                    wr(w, opfn(ra(w)))
        elif len(rds) == 2:
            ra, rb = rds

            def fn(w):
                if w.mask:
                    wr(w, opfn(ra(w), rb(w)))
        else:
            ra, rb, rc = rds

            def fn(w):
                if w.mask:
                    wr(w, opfn(ra(w), rb(w), rc(w)))
        return fn

    def make_cvt(ins, j):
        rd = _make_read(ins.src, ins.from_type)
        conv = _cvt_fn(ins.to_type, ins.from_type)
        wr = _make_write(ins.dst, ins.to_type)

        def fn(w):
            if w.mask:
                wr(w, conv(rd(w)))
        return fn

    def make_cmp(ins, j):
        ra = _make_read(ins.a, ins.type)
        rb = _make_read(ins.b, ins.type)
        rel = _CMP_OPS[ins.rel]
        wr = _make_write(ins.dst, isa.U32)

        def fn(w):
            if w.mask:
                wr(w, np.asarray(rel(ra(w), rb(w))).astype(U32))
        return fn

    def space_bufs(space):
        if space == "device":
            return (lambda w: (run.device, run.device16, run.device32),
                    device_limit, ("device",), False)
        if space == "arg":
            return (lambda w: (run.args8, run.args16, run.args32),
                    arg_limit, None, False)
        return (lambda w: (w.wg.scratch, w.wg.scratch16, w.wg.scratch32),
                scratch_limit, "scratch", True)

    def make_ld(ins, j):
        bufs, limit, skey0, is_scratch = space_bufs(ins.space)
        nbytes = ins.width // 8
        shift = _WIDTH_SHIFT[ins.width]
        amask = U32(nbytes - 1)
        rd_addr = _make_read(ins.addr, isa.U32)
        off = U32(ins.offset & 0xFFFFFFFF)
        dst, part = ins.dst.index, ins.dst.part
        half_wr = _make_write(ins.dst, isa.U32) if part != _FULL else None
        is_device = ins.space == "device"
        track = is_scratch or is_device
        site = site_of(j, "read")

        def fn(w):
            if not w.mask:
                return
            a = rd_addr(w) + off
            full = w.full
            if not full:
                a = a[w.maskv]
            if int(a.max()) + nbytes > limit:
                raise _TrapSignal(
                    TRAP_OOB, f"{ins.space} load of {nbytes} bytes at "
                    f"address {int(a.max())} exceeds {limit} bytes")
            if nbytes > 1 and bool((a & amask).any()):
                raise _TrapSignal(
                    TRAP_MISALIGNED,
                    f"{ins.space} load not {nbytes}-byte aligned")
            b8, b16, b32 = bufs(w)
            if shift == 2:
                vals = b32[a >> U32(2)]
            elif shift == 1:
                vals = b16[a >> U32(1)].astype(U32)
            else:
                vals = b8[a].astype(U32)
            if half_wr is None:
                if full:
                    w.regs[dst][...] = vals
                else:
                    w.regs[dst][w.maskv] = vals
            else:
                if not full:
                    tmp = np.zeros(W, U32)
                    tmp[w.maskv] = vals
                    vals = tmp
                half_wr(w, vals)
            if track:
                n = a.size * nbytes
                if is_scratch:
                    run.scratch_bytes += n
                    run.bank_extra += _bank_extra(a // bank_width, bank_count)
                else:
                    run.device_bytes_moved += n
                if races:
                    key = (skey0, w.wg.index) if is_scratch else skey0
                    races.on_mem(w.wid, w.wg.index, key,
                                 np.unique(a >> U32(2)), "r", site(w))
        return fn

    def make_st(ins, j):
        bufs, limit, skey0, is_scratch = space_bufs(ins.space)
        nbytes = ins.width // 8
        shift = _WIDTH_SHIFT[ins.width]
        amask = U32(nbytes - 1)
        rd_addr = _make_read(ins.addr, isa.U32)
        rd_src = _make_read(ins.src, isa.U32)
        off = U32(ins.offset & 0xFFFFFFFF)
        site = site_of(j, "write")

        def fn(w):
            if not w.mask:
                return
            a = rd_addr(w) + off
            full = w.full
            if not full:
                a = a[w.maskv]
            if int(a.max()) + nbytes > limit:
                raise _TrapSignal(
                    TRAP_OOB, f"{ins.space} store of {nbytes} bytes at "
                    f"address {int(a.max())} exceeds {limit} bytes")
            if nbytes > 1 and bool((a & amask).any()):
                raise _TrapSignal(
                    TRAP_MISALIGNED,
                    f"{ins.space} store not {nbytes}-byte aligned")
            vals = np.asarray(rd_src(w))
            if vals.ndim and not full:
                vals = vals[w.maskv]
            b8, b16, b32 = bufs(w)
            # duplicate addresses: numpy applies fancy assignment in index
            # order, so the highest active lane wins (checked by tests)
            if shift == 2:
                b32[a >> U32(2)] = vals
            elif shift == 1:
                b16[a >> U32(1)] = (vals & U32(0xFFFF)).astype(np.uint16)
            else:
                b8[a] = (vals & U32(0xFF)).astype(np.uint8)
            n = a.size * nbytes
            if is_scratch:
                run.scratch_bytes += n
                run.bank_extra += _bank_extra(a // bank_width, bank_count)
            else:
                run.device_bytes_moved += n
            if races:
                key = (skey0, w.wg.index) if is_scratch else skey0
                races.on_mem(w.wid, w.wg.index, key,
                             np.unique(a >> U32(2)), "w", site(w))
        return fn

    def make_atomic(ins, j):
        bufs, limit, skey0, is_scratch = space_bufs(ins.space)
        rd_addr = _make_read(ins.addr, isa.U32)
        rd_val = _make_read(ins.value, isa.U32)
        rd_cmp = (_make_read(ins.compare, isa.U32)
                  if ins.compare is not None else None)
        wr = _make_write(ins.dst, isa.U32)
        op = ins.op
        site = site_of(j, "atomic")

        def fn(w):
            if not w.mask:
                return
            a = rd_addr(w)
            act = np.nonzero(w.maskv)[0]
            a_act = a[w.maskv]
            if int(a_act.max()) + 4 > limit:
                raise _TrapSignal(
                    TRAP_OOB, f"{ins.space} atomic at address "
                    f"{int(a_act.max())} exceeds {limit} bytes")
            if bool((a_act & U32(3)).any()):
                raise _TrapSignal(TRAP_MISALIGNED,
                                  f"{ins.space} atomic not 4-byte aligned")
            vals = np.broadcast_to(np.asarray(rd_val(w)), (W,))
            cmps = (np.broadcast_to(np.asarray(rd_cmp(w)), (W,))
                    if rd_cmp is not None else None)
            _, _, b32 = bufs(w)
            out = np.zeros(W, U32)
            seen = set()
            for lane in act:
                word = int(a[lane]) >> 2
                new, ret = eval_atomic(
                    op, int(b32[word]), int(vals[lane]),
                    int(cmps[lane]) if cmps is not None else None)
                b32[word] = new
                out[lane] = ret
                seen.add(word)
            run.atomic_serial += len(act) - len(seen)
            if is_scratch:
                run.scratch_bytes += len(act) * 4
            else:
                run.device_bytes_moved += len(act) * 4
            wr(w, out)
            if races:
                key = (skey0, w.wg.index) if is_scratch else skey0
                races.on_mem(w.wid, w.wg.index, key, sorted(seen), "a",
                             site(w))
        return fn

    def make_shfl(ins, j):
        rd_src = _make_read(ins.src, isa.U32)
        rd_op = _make_read(ins.operand, isa.U32)
        wr = _make_write(ins.dst, isa.U32)
        mode = ins.mode

        def fn(w):
            if not w.mask:
                return
            wr(w, eval_shuffle(mode, rd_src(w), rd_op(w), W))
            run.shuffle_steps += 1
        return fn

    def make_async_copy(ins, j):
        rd_dst = _make_read(ins.dst_off, isa.U32)
        rd_src = _make_read(ins.src_addr, isa.U32)
        n = ins.nbytes
        site = site_of(j, "async")

        def fn(w):
            if not w.mask:
                return
            lane = w.first_active
            d = int(np.asarray(rd_dst(w)).reshape(-1)[lane])
            s = int(np.asarray(rd_src(w)).reshape(-1)[lane])
            if d & 3 or s & 3:
                raise _TrapSignal(TRAP_MISALIGNED,
                                  "async copy addresses must be 4-byte aligned")
            if d + n > scratch_limit:
                raise _TrapSignal(
                    TRAP_OOB, f"async copy writes {d + n} bytes past "
                    f"scratch limit {scratch_limit}")
            if s + n > device_limit:
                raise _TrapSignal(
                    TRAP_OOB, f"async copy reads past device limit "
                    f"{device_limit}")
            token = None
            if races:
                token = races.on_async_issue(
                    w.wid, w.wg.index, ("scratch", w.wg.index),
                    range(d >> 2, (d + n) >> 2), range(s >> 2, (s + n) >> 2),
                    site(w))
            w.async_q.append((d, s, n, token))
        return fn

    def make_wait_async(ins, j):
        keep = ins.max_outstanding

        def fn(w):
            q = w.async_q
            while len(q) > keep:
                d, s, n, token = q.pop(0)
                w.wg.scratch[d:d + n] = run.device[s:s + n]
                run.scratch_bytes += n
                run.device_bytes_moved += n
                if races:
                    races.on_async_complete(w.wid, token)
        return fn

    def make_bar(ins, j):
        bid = ins.id

        def fn(w):
            if w.mask != w.launch_mask:
                raise _TrapSignal(
                    TRAP_BARRIER_DIVERGENCE,
                    "barrier reached with some lanes inactive")
            w.status = _BARRIER
            w.bar_id = bid
            run.barrier_check(w.wg, w)
        return fn

    def make_fence(ins, j):
        order, scope = ins.order, ins.scope

        def fn(w):
            if races:
                races.on_fence(w.wid, order, scope, w.wg.index)
        return fn

    def make_special(ins, j):
        wr = _make_write(ins.dst, isa.U32)
        which = ins.which

        def fn(w):
            if w.mask:
                wr(w, w.specials[which])
        return fn

    def make_if(ins, j):
        rd = _make_read(ins.cond, isa.U32)
        target = if_else[j]

        def fn(w):
            if len(w.div_stack) >= isa.MAX_DIVERGENCE_DEPTH:
                raise _TrapSignal(
                    TRAP_DIVERGENCE_OVERFLOW,
                    f"divergence depth exceeds {isa.MAX_DIVERGENCE_DEPTH}")
            taken = _mask_bits(np.asarray(rd(w)) != 0) & w.mask
            w.div_stack.append(["if", w.mask, w.mask & ~taken])
            w.set_mask(taken)
            if not taken:
                return target
        return fn

    def make_else(ins, j):
        target = else_end[j]

        def fn(w):
            e = w.div_stack[-1]
            w.set_mask(e[2])
            if not w.mask:
                return target
        return fn

    def make_endif(ins, j):
        def fn(w):
            e = w.div_stack.pop()
            w.set_mask(e[1])
        return fn

    def make_loop(ins, j):
        def fn(w):
            if len(w.div_stack) >= isa.MAX_DIVERGENCE_DEPTH:
                raise _TrapSignal(
                    TRAP_DIVERGENCE_OVERFLOW,
                    f"divergence depth exceeds {isa.MAX_DIVERGENCE_DEPTH}")
            w.div_stack.append(["loop", w.mask, j + 1])
        return fn

    def make_break(ins, j):
        rd = (_make_read(ins.cond, isa.U32) if ins.cond is not None else None)

        def fn(w):
            if rd is None:
                lanes = w.mask
            else:
                lanes = _mask_bits(np.asarray(rd(w)) != 0) & w.mask
            if lanes:
                # leaving lanes must stay off through any enclosing if arms
                # up to the loop; the loop entry itself keeps them for exit
                for e in reversed(w.div_stack):
                    if e[0] == "loop":
                        break
                    e[1] &= ~lanes
                    e[2] &= ~lanes
                w.set_mask(w.mask & ~lanes)
        return fn

    def make_endloop(ins, j):
        def fn(w):
            e = w.div_stack[-1]
            if w.mask:
                return e[2]
            w.div_stack.pop()
            w.set_mask(e[1])
        return fn

    def make_call(ins, j):
        target = starts[ins.target]

        def fn(w):
            if len(w.call_stack) >= isa.MAX_CALL_DEPTH:
                raise _TrapSignal(
                    TRAP_CALL_OVERFLOW,
                    f"call depth exceeds {isa.MAX_CALL_DEPTH}")
            w.call_stack.append(j + 1)
            return target
        return fn

    def make_ret(ins, j):
        def fn(w):
            return w.call_stack.pop()
        return fn

    def make_halt(ins, j):
        def fn(w):
            w.status = _HALTED
            w.wg.live -= 1
            if w.wg.live:
                run.barrier_check(w.wg, None)
            return w.pc
        return fn

    def make_mma(ins, j):
        tm, tn, tk = ins.tile
        ra, rb, rc, rd = (ins.a.index, ins.b.index, ins.c.index,
                          ins.dst.index)
        na, nb, nc = tm * tk, tk * tn, tm * tn
        rows = [(n + W - 1) // W for n in (na, nb, nc)]

        def fn(w):
            if w.mask != w.launch_mask:
                raise _TrapSignal(TRAP_MMA_DIVERGENCE,
                                  "matrix op reached with some lanes inactive")
            A = w.regs_f32[ra:ra + rows[0]].reshape(-1)[:na].reshape(
                tm, tk).astype(np.float64)
            B = w.regs_f32[rb:rb + rows[1]].reshape(-1)[:nb].reshape(
                tk, tn).astype(np.float64)
            C = w.regs_f32[rc:rc + rows[2]].reshape(-1)[:nc].reshape(
                tm, tn).astype(np.float64)
            D = (C + A @ B).astype(np.float32)
            buf = np.zeros(rows[2] * W, np.float32)
            buf[:nc] = D.reshape(-1)
            w.regs_f32[rd:rd + rows[2]] = buf.reshape(rows[2], W)
        return fn

    builders = {
        isa.Arith: make_arith, isa.Cvt: make_cvt, isa.Cmp: make_cmp,
        isa.Ld: make_ld, isa.St: make_st, isa.Atomic: make_atomic,
        isa.Shfl: make_shfl, isa.AsyncCopy: make_async_copy,
        isa.WaitAsync: make_wait_async, isa.Bar: make_bar,
        isa.Fence: make_fence, isa.ReadSpecial: make_special,
        isa.If: make_if, isa.Else: make_else, isa.EndIf: make_endif,
        isa.Loop: make_loop, isa.Break: make_break,
        isa.EndLoop: make_endloop, isa.Call: make_call, isa.Ret: make_ret,
        isa.Halt: make_halt, isa.Mma: make_mma,
    }

    mnems = [mnemonic(ins) for ins in flat]
    ops = []
    for j, ins in enumerate(flat):
        fn = builders[type(ins)](ins, j)
        ops.append((fn, _CAT_INDEX[isa.instruction_category(ins)]))
    return ops, mnems


def launch(program: isa.Program, cfg: LaunchConfig) -> ExecResult:
    """Run a validated program to completion (or first trap)."""
    m = cfg.machine
    issues = isa.validate_program(program, m)
    if issues:
        raise ValueError(f"program does not validate: {issues[0].message}")

    W = m.wave_width
    gx, gy, gz = cfg.grid
    wx, wy, wz = cfg.workgroup_size
    if min(gx, gy, gz) < 1 or min(wx, wy, wz) < 1:
        raise ValueError("grid and workgroup dimensions must be positive")
    wg_threads = wx * wy * wz
    if wg_threads > m.max_workgroup:
        raise ValueError(f"workgroup of {wg_threads} threads exceeds "
                         f"machine limit {m.max_workgroup}")
    waves_per_wg = (wg_threads + W - 1) // W
    occ = occupancy(m, program.regs_used, program.scratch_used, wg_threads)
    if occ.resident_waves < waves_per_wg:
        raise ValueError(
            f"workgroup cannot become resident: needs {waves_per_wg} waves, "
            f"occupancy allows {occ.resident_waves} "
            f"(limited by {occ.limiting_resource})")
    window = (occ.resident_waves // waves_per_wg
              if cfg.interleave_workgroups else 1)

    device_bytes = max(4, (int(cfg.device_bytes) + 3) // 4 * 4)
    device = np.zeros(device_bytes, dtype=np.uint8)
    if cfg.device_image is not None:
        img = np.frombuffer(bytes(cfg.device_image), dtype=np.uint8) \
            if not isinstance(cfg.device_image, np.ndarray) \
            else cfg.device_image.view(np.uint8).reshape(-1)
        if img.size > device_bytes:
            raise ValueError(f"device image of {img.size} bytes exceeds "
                             f"device size {device_bytes}")
        device[:img.size] = img

    args = np.asarray(cfg.args, dtype=U32).reshape(-1)
    races = RaceDetector() if cfg.check_races else None
    run = _Run(m, device, args, races, len(_CATEGORIES))
    ops, mnems = _compile(program, m, run, program.scratch_used)

    total_wgs = gx * gy * gz
    lane_u32 = np.arange(W, dtype=U32)
    wgdim = (U32(wx), U32(wy), U32(wz))
    griddim = (U32(gx), U32(gy), U32(gz))
    wwidth = U32(W)
    lanes64 = _lanes(W)
    nregs = program.regs_used

    base_specials = {
        "lane_id": lane_u32, "wave_width": wwidth,
        "wgdim_x": wgdim[0], "wgdim_y": wgdim[1], "wgdim_z": wgdim[2],
        "griddim_x": griddim[0], "griddim_y": griddim[1],
        "griddim_z": griddim[2],
    }

    def admit(linear: int) -> _Workgroup:
        wg = _Workgroup(linear, program.scratch_used)
        wz_i, rem = divmod(linear, gx * gy)
        wy_i, wx_i = divmod(rem, gx)
        for k in range(waves_per_wg):
            t = k * W + lanes64
            specials = dict(base_specials)
            specials["wave_id"] = U32(k)
            specials["wgid_x"] = U32(wx_i)
            specials["wgid_y"] = U32(wy_i)
            specials["wgid_z"] = U32(wz_i)
            specials["tid_x"] = (t % wx).astype(U32)
            specials["tid_y"] = ((t // wx) % wy).astype(U32)
            specials["tid_z"] = (t // (wx * wy) % wz).astype(U32)
            active = min(W, wg_threads - k * W)
            wave = WaveContext(linear * waves_per_wg + k, k, wg, W, nregs,
                               (1 << active) - 1, specials)
            wg.waves.append(wave)
        wg.live = waves_per_wg
        run.ready.extend(wg.waves)
        return wg

    next_wg = 0
    in_flight = 0
    for _ in range(min(window, total_wgs)):
        admit(next_wg)
        next_wg += 1
        in_flight += 1

    counts = run.counts
    ready = run.ready
    rng = SplitMix64(cfg.seed)
    trace_lines: "list[str] | None" = [] if cfg.trace else None
    maskw = max(W // 4, 1)
    h = 0xCBF29CE484222325
    FNV = 0x100000001B3
    M64 = (1 << 64) - 1
    steps = 0
    limit = cfg.step_limit
    trap = None
    w = None
    pc = 0

    try:
        with np.errstate(all="ignore"):
            while ready:
                n = len(ready)
                k = rng.next_below(n) if n > 1 else 0
                w = ready[k]
                pc = w.pc
                fn, cat = ops[pc]
                counts[cat] += 1
                h = ((h ^ w.wid) * FNV) & M64
                h = ((h ^ pc) * FNV) & M64
                if trace_lines is not None:
                    trace_lines.append(
                        f"{steps},{w.wg.index},{w.index},{pc},{mnems[pc]},"
                        f"{w.mask:0{maskw}x}")
                steps += 1
                if steps > limit:
                    raise _TrapSignal(
                        TRAP_STEP_LIMIT,
                        f"step limit of {limit} instructions exceeded")
                npc = fn(w)
                w.pc = pc + 1 if npc is None else npc
                if w.status != _READY:
                    ready[k] = ready[-1]
                    ready.pop()
                    if w.status == _HALTED and w.wg.live == 0:
                        in_flight -= 1
                        if next_wg < total_wgs:
                            admit(next_wg)
                            next_wg += 1
                            in_flight += 1
            if next_wg < total_wgs or in_flight:
                raise _TrapSignal(TRAP_DEADLOCK,
                                  "no runnable wave but work remains")
    except _TrapSignal as t:
        trap = Trap(t.kind, w.wg.index if w else 0, w.wid if w else 0,
                    pc, t.message)

    stats = ExecStats(
        dynamic_instructions={c: counts[i] for i, c in enumerate(_CATEGORIES)
                              if counts[i]},
        barrier_rounds=run.barrier_rounds,
        shuffle_steps=run.shuffle_steps,
        bank_conflict_extra_cycles=run.bank_extra,
        atomic_serializations=run.atomic_serial,
        scratch_bytes=run.scratch_bytes,
        device_bytes=run.device_bytes_moved,
        scheduler_steps=steps,
        trace_hash=h,
    )
    return ExecResult(trap=trap, stats=stats, device_memory=device,
                      race_reports=races.reports if races else [],
                      trace=trace_lines)
