"""Assembler: syntax, diagnostics, sugar, and round-trip fidelity."""
import random

import pytest

from proggen import random_program
from uvgpu import isa
from uvgpu.asm import format_program, parse_program
from uvgpu.isa import Arith, Atomic, Bar, Break, Ld, RegRef, Shfl, St


def parse_ok(text):
    prog, diags = parse_program(text)
    assert prog is not None, diags
    assert diags == []
    return prog


def first_error(text):
    prog, diags = parse_program(text)
    assert prog is None and diags
    d = diags[0]
    return f"{d.line}:{d.column}", d.message


def test_minimal_kernel():
    p = parse_ok(".kernel k\nhalt\n")
    assert p.entry == "k"
    assert p.regs_used == 1  # inferred floor
    assert p.scratch_used == 0


def test_operand_forms():
    p = parse_ok(
        ".kernel k\n"
        ".regs 32\n"
        ".scratch 64\n"
        "add.u32 r1, r2.l, r3.h\n"
        "add.i32 r4, r5, -1\n"
        "add.u32 r6, r7, 0xFF\n"
        "ld.device.32 r8, [r9+4]\n"
        "ld.scratch.16 r10.l, [r11-8]\n"
        "st.scratch.32 [r12], 0\n"
        "atom.cmpxch.device r13, [r14], 0, r15\n"
        "shfl.xor.b32 r16, r17, 1\n"
        "halt\n")
    body = p.functions["k"]
    assert body[0] == Arith("add", "u32", RegRef(1),
                            (RegRef(2, isa.LOW16), RegRef(3, isa.HIGH16)))
    assert body[1].srcs[1] == 0xFFFFFFFF  # -1 stored as its bit pattern
    assert body[3] == Ld("device", 32, RegRef(8), RegRef(9), 4)
    assert body[4].offset == -8
    assert body[5] == St("scratch", 32, RegRef(12), 0, 0)
    assert body[6] == Atomic("cmpxch", "device", RegRef(13), RegRef(14),
                             RegRef(15), 0)
    assert body[7] == Shfl("xor", RegRef(16), RegRef(17), 1)
    assert (p.regs_used, p.scratch_used) == (32, 64)


def test_mov_and_float_sugar():
    p = parse_ok(".kernel k\nmov r1, 7\nmov r2, r3\nadd.f32 r4, r5, 1.5\n"
                 "mov r6, -2.0\nhalt\n")
    body = p.functions["k"]
    assert body[0] == Arith("or", "u32", RegRef(1), (7, 0))
    assert body[1] == Arith("or", "u32", RegRef(2), (RegRef(3), 0))
    assert body[2].srcs[1] == 0x3FC00000
    assert body[3].srcs[0] == 0xC0000000


def test_comments_and_blank_lines():
    p = parse_ok("; leading comment\n.kernel k ; trailing\n\n"
                 "  halt  ; done\n")
    assert len(p.functions["k"]) == 1


def test_bar_defaults_to_zero():
    p = parse_ok(".kernel k\nbar\nbar 3\nhalt\n")
    assert p.functions["k"][:2] == (Bar(0), Bar(3))


def test_break_without_condition():
    p = parse_ok(".kernel k\nloop\nbreak\nendloop\nhalt\n")
    assert p.functions["k"][1] == Break(None)


def test_diagnostic_positions():
    assert first_error(".kernel k\nfrob r1, r2\nhalt\n") == (
        "2:1", "unknown mnemonic 'frob'")
    assert first_error(".kernel k\n  add.u32 r1 r2, r3\nhalt\n")[0] == "2:14"
    assert first_error(".kernel k\nadd.u32 r1, r299, r3\nhalt\n") == (
        "2:13", "register index 299 out of range")
    assert first_error(".kernel k\nld.device.32 r1, [r2+r3]\nhalt\n")[1] \
        == "malformed memory operand '[r2+r3]'"
    assert first_error(".kernel k\nadd.u32 r1, , r3\nhalt\n")[1] \
        == "empty operand"
    assert first_error(".kernel k\nrdspec r1, warp\nhalt\n")[1] \
        == "unknown special value 'warp'"
    assert first_error("halt\n")[1] == "instruction outside .kernel or .func"
    assert first_error(".kernel k\nhalt\n.kernel j\nhalt\n")[1] \
        == "a program has exactly one kernel"
    assert first_error(".kernel k\n.regs 4\n.regs 8\nhalt\n")[1] \
        == "duplicate .regs directive"
    assert first_error(".blort 3\n.kernel k\nhalt\n")[1] \
        == "unknown directive '.blort'"
    assert first_error(".func f\nret\n")[1] == "no kernel defined"
    assert first_error(".kernel k\natom.add.device r1, [r2+4], r3\nhalt\n")[1] \
        == "atomic addresses take no offset"
    assert first_error(".kernel k\nshfl.idx.b64 r1, r2, 0\nhalt\n")[1] \
        == "shuffles operate on .b32 exactly"


def test_all_diagnostics_collected():
    _, diags = parse_program(".kernel k\nfrob r1\nblee r2\nhalt\n")
    assert [d.line for d in diags] == [2, 3]


def test_immediate_width_checks():
    assert "does not fit" in first_error(
        ".kernel k\nmov r1, 0x100000000\nhalt\n")[1]
    assert "does not fit" in first_error(
        ".kernel k\nmov r1, -2147483649\nhalt\n")[1]
    parse_ok(".kernel k\nmov r1, 4294967295\nmov r2, -2147483648\nhalt\n")


def test_format_round_trip_generated():
    for seed in range(400):
        p = random_program(seed)
        text = format_program(p)
        p2, diags = parse_program(text)
        assert diags == []
        assert p2 == p


def test_format_is_idempotent():
    for seed in range(50):
        text = format_program(random_program(seed))
        p2, _ = parse_program(text)
        assert format_program(p2) == text


def test_format_indents_blocks():
    text = format_program(parse_ok(
        ".kernel k\nloop\nif r1\nbreak\nelse\nadd.u32 r0, r0, 1\nendif\n"
        "endloop\nhalt\n"))
    lines = text.splitlines()
    assert "  if r1" in lines
    assert "    break" in lines
    assert "  else" in lines
    assert "halt" in lines


def test_format_omits_inferable_declarations():
    text = format_program(parse_ok(".kernel k\nadd.u32 r3, r3, 1\nhalt\n"))
    assert ".regs" not in text and ".scratch" not in text
    assert ".regs 99" in format_program(
        parse_ok(".regs 99\n.kernel k\nhalt\n"))


def test_fuzzed_text_never_raises():
    rng = random.Random(0)
    corpus = [format_program(random_program(s)) for s in range(10)]
    printable = ("abcdefghij rst.,[]+-;0123456789\n")
    for trial in range(500):
        if rng.random() < 0.5:
            text = "".join(rng.choice(printable)
                           for _ in range(rng.randrange(200)))
        else:
            text = list(rng.choice(corpus))
            for _ in range(rng.randrange(1, 8)):
                k = rng.randrange(len(text))
                text[k] = rng.choice(printable)
            text = "".join(text)
        prog, diags = parse_program(text)  # must not raise
        if prog is None:
            assert diags
            assert all(d.line >= 1 and d.column >= 1 for d in diags)
