"""Seeded random program generators for the test suite.

Two generators with different jobs:

random_program      full instruction surface, structurally valid and clean
                    under the nvidia preset; used for assembler round-trip
                    and validator testing.  Never executed.

control_flow_program  integer arithmetic plus arbitrarily nested if/else and
                    counted loops with data-dependent breaks; every lane
                    dumps its registers to a private device slot at the end.
                    Executed and compared against scalarref lane by lane.
                    Termination is by construction: each loop owns a fresh
                    counter register, decremented once per iteration with a
                    guaranteed break at zero.
"""
from __future__ import annotations

import random

from uvgpu import isa
from uvgpu.isa import (
    Arith, AsyncCopy, Atomic, Bar, Break, Call, Cmp, Cvt, Else, EndIf,
    EndLoop, Fence, Halt, If, Ld, Loop, Mma, Program, ReadSpecial, RegRef,
    Ret, Shfl, St, WaitAsync,
)

M32 = 0xFFFFFFFF


# ------------------------------------------------------------- full surface

def _reg(rng, top, parts=False):
    part = isa.FULL32
    if parts and rng.random() < 0.15:
        part = rng.choice((isa.LOW16, isa.HIGH16))
    return RegRef(rng.randrange(top), part)


def _imm(rng):
    return rng.choice((
        0, 1, rng.randrange(256), rng.randrange(1 << 32),
        (1 << 32) - 1, 0x80000000,
    ))


def _reg_or_imm(rng, top, parts=False):
    return _imm(rng) if rng.random() < 0.4 else _reg(rng, top, parts)


def _gen_arith(rng, top):
    op = rng.choice(isa.ARITH_OPS)
    if op in isa.BITWISE_OPS:
        ty = rng.choice(isa.INT_TYPES)
    else:
        ty = rng.choice(isa.SCALAR_TYPES)
    nsrc = 1 if op in isa.UNARY_OPS else 3 if op == "fma" else 2
    if ty == isa.F64:
        lim = top - 1
        return Arith(op, ty, _reg(rng, lim),
                     tuple(_reg(rng, lim) for _ in range(nsrc)))
    parts = ty in isa.INT_TYPES
    return Arith(op, ty, _reg(rng, top, parts),
                 tuple(_reg_or_imm(rng, top, parts) for _ in range(nsrc)))


def _gen_cvt(rng, top):
    to_ty = rng.choice(isa.SCALAR_TYPES)
    from_ty = rng.choice(isa.SCALAR_TYPES)
    lim = top - 1 if isa.F64 in (to_ty, from_ty) else top
    return Cvt(to_ty, from_ty, _reg(rng, lim), _reg(rng, lim))


def _gen_cmp(rng, top):
    ty = rng.choice(isa.SCALAR_TYPES)
    if ty == isa.F64:
        return Cmp(rng.choice(isa.CMP_RELS), ty, _reg(rng, top),
                   _reg(rng, top - 1), _reg(rng, top - 1))
    return Cmp(rng.choice(isa.CMP_RELS), ty, _reg(rng, top),
               _reg_or_imm(rng, top), _reg_or_imm(rng, top))


def _gen_mem(rng, top):
    space = rng.choice(isa.MEM_SPACES)
    width = rng.choice(isa.MEM_WIDTHS)
    off = rng.choice((0, 0, 4, -4, rng.randrange(4096)))
    if space != "arg" and rng.random() < 0.5:
        return St(space, width, _reg(rng, top), off, _reg_or_imm(rng, top))
    return Ld(space, width, _reg(rng, top, parts=True), _reg(rng, top), off)


def _gen_atomic(rng, top):
    op = rng.choice(isa.ATOMIC_OPS)
    compare = _reg_or_imm(rng, top) if op == "cmpxch" else None
    return Atomic(op, rng.choice(isa.ATOMIC_SPACES), _reg(rng, top),
                  _reg(rng, top), _reg_or_imm(rng, top), compare)


def _gen_shfl(rng, top):
    operand = rng.randrange(16) if rng.random() < 0.5 else _reg(rng, top)
    return Shfl(rng.choice(isa.SHFL_MODES), _reg(rng, top), _reg(rng, top),
                operand)


def _gen_misc(rng, top):
    return rng.choice((
        Bar(rng.randrange(16)),
        Fence(rng.choice(isa.FENCE_ORDERS), rng.choice(isa.FENCE_SCOPES)),
        AsyncCopy(_reg(rng, top), _reg(rng, top), 4 * rng.randrange(1, 65)),
        WaitAsync(rng.randrange(4)),
        ReadSpecial(_reg(rng, top), rng.choice(isa.SPECIALS)),
        Mma((8, 8, 8), _reg(rng, top - 1), _reg(rng, top - 1),
            _reg(rng, top - 1), _reg(rng, top - 1)),
    ))


_LEAF_GENS = (_gen_arith, _gen_arith, _gen_cvt, _gen_cmp, _gen_mem,
              _gen_mem, _gen_atomic, _gen_shfl, _gen_misc)


def _gen_body(rng, top, depth, callees):
    out = []
    for _ in range(rng.randrange(2, 9)):
        r = rng.random()
        if r < 0.12 and depth < 5:
            out.append(If(_reg(rng, top)))
            out.extend(_gen_body(rng, top, depth + 1, callees))
            if rng.random() < 0.5:
                out.append(Else())
                out.extend(_gen_body(rng, top, depth + 1, callees))
            out.append(EndIf())
        elif r < 0.2 and depth < 5:
            out.append(Loop())
            out.extend(_gen_body(rng, top, depth + 1, callees))
            if rng.random() < 0.7:
                out.append(Break(_reg(rng, top) if rng.random() < 0.8
                                 else None))
            out.append(EndLoop())
        elif r < 0.25 and callees:
            out.append(Call(rng.choice(callees)))
        else:
            out.append(_LEAF_GENS[rng.randrange(len(_LEAF_GENS))](rng, top))
    return out


def random_program(seed: int) -> Program:
    """Structurally valid program exercising the whole instruction set.

    validate_program(random_program(s), preset("nvidia")) is empty for
    every seed; the nvidia preset has the superset of capabilities.
    """
    rng = random.Random(seed)
    top = rng.randrange(24, 250)
    entry = "k" + "".join(rng.choice("abcdefgh") for _ in range(4))
    callees = [f"fn{i}" for i in range(rng.randrange(3))]
    functions = {entry: tuple(_gen_body(rng, top, 0, callees) + [Halt()])}
    for name in callees:
        functions[name] = tuple(_gen_body(rng, top, 0, []) + [Ret()])
    return Program(functions=functions, entry=entry, regs_used=top,
                   scratch_used=rng.choice((0, 0, 256, 1024, 2048)))


# ------------------------------------------------- executable control flow

# register plan for control_flow_program
_LANE = 0          # lane id, read once, never written
_DATA = (1, 2, 3, 4, 5, 6)
_COND = 7
_CTR0 = 8          # one counter per loop nesting level
_ADDR = 15
_NREGS = 16
DUMP_REGS = 8      # r0..r7 inclusive
DUMP_STRIDE = 4 * DUMP_REGS


def _r(i):
    return RegRef(i)


def _rand_const(rng):
    return rng.randrange(1 << 32)


def _gen_data_op(rng):
    ty = rng.choice(isa.INT_TYPES)
    op = rng.choice(("add", "sub", "mul", "and", "or", "xor", "shl", "shr",
                     "min", "max", "fma", "not", "neg", "div", "cmp"))
    dst = _r(rng.choice(_DATA))
    if op == "cmp":
        return Cmp(rng.choice(isa.CMP_RELS), ty, dst,
                   _r(rng.choice(_DATA)),
                   _rand_const(rng) if rng.random() < 0.5
                   else _r(rng.choice(_DATA)))
    if op == "div":
        divisor = rng.choice((1, 2, 3, 5, 7, (-3) & M32))
        return Arith(op, ty, dst, (_r(rng.choice(_DATA)), divisor))
    if op in isa.UNARY_OPS:
        return Arith(op, ty, dst, (_r(rng.choice(_DATA)),))
    nsrc = 3 if op == "fma" else 2
    srcs = tuple(
        _rand_const(rng) if rng.random() < 0.3 else _r(rng.choice(_DATA))
        for _ in range(nsrc))
    return Arith(op, ty, dst, srcs)


def _gen_cond(rng):
    return Cmp(rng.choice(isa.CMP_RELS), rng.choice(isa.INT_TYPES),
               _r(_COND), _r(rng.choice(_DATA + (_LANE,))),
               rng.randrange(64) if rng.random() < 0.6
               else _r(rng.choice(_DATA)))


def _gen_cf_body(rng, depth, loop_depth):
    out = []
    for _ in range(rng.randrange(2, 7)):
        r = rng.random()
        if r < 0.18 and depth < 3:
            out.append(_gen_cond(rng))
            out.append(If(_r(_COND)))
            out.extend(_gen_cf_body(rng, depth + 1, loop_depth))
            if rng.random() < 0.5:
                out.append(Else())
                out.extend(_gen_cf_body(rng, depth + 1, loop_depth))
            out.append(EndIf())
        elif r < 0.34 and loop_depth < 3:
            ctr = _r(_CTR0 + loop_depth)
            out.append(Arith("or", isa.U32, ctr, (rng.randrange(1, 4), 0)))
            out.append(Loop())
            out.extend(_gen_cf_body(rng, depth + 1, loop_depth + 1))
            out.append(Arith("sub", isa.U32, ctr, (ctr, 1)))
            out.append(Cmp("eq", isa.U32, _r(_COND), ctr, 0))
            out.append(Break(_r(_COND)))
            out.append(EndLoop())
        elif r < 0.42 and loop_depth > 0:
            out.append(_gen_cond(rng))
            out.append(Break(_r(_COND)))
        else:
            out.append(_gen_data_op(rng))
    return out


def control_flow_program(seed: int) -> Program:
    """Terminating single-wave kernel for differential testing.

    Lane-dependent data drives divergence; the epilogue stores r0..r7 to
    device bytes [lane*32, lane*32+32), so a full dump from every lane also
    proves the mask was restored to full after every structured block.
    """
    rng = random.Random(seed)
    body = [ReadSpecial(_r(_LANE), "lane_id")]
    for k in _DATA:
        body.append(Arith("mul", isa.U32, _r(k),
                          (_r(_LANE), _rand_const(rng) | 1)))
        body.append(Arith("xor", isa.U32, _r(k), (_r(k), _rand_const(rng))))
    body.append(Cmp("eq", isa.U32, _r(_COND), _r(_LANE), 0))
    body.extend(_gen_cf_body(rng, 0, 0))
    body.append(Arith("shl", isa.U32, _r(_ADDR), (_r(_LANE), 5)))
    for k in range(DUMP_REGS):
        body.append(St("device", 32, _r(_ADDR), 4 * k, _r(k)))
    body.append(Halt())
    return Program(functions={"diffk": tuple(body)}, entry="diffk",
                   regs_used=_NREGS)
