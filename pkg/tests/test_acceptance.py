"""Acceptance gate: one test per shipping criterion, C1 through C9.

`pytest -v tests/test_acceptance.py` prints one pass/fail line per
criterion.  Each test also prints its measured numbers and elapsed time,
which pytest shows on failure (or under -s).
"""
import json
import os
import pathlib
import random
import subprocess
import sys
import time

import numpy as np

import proggen
import scalarref
from test_machine import occupancy_oracle
from uvgpu import kernels as kn
from uvgpu import vm
from uvgpu.asm import format_program, parse_program
from uvgpu.machine import (MachineDescriptor, custom_wave_machine, occupancy,
                           preset, preset_names)
from uvgpu.vm import LaunchConfig, count_bank_conflicts, launch

ROOT = pathlib.Path(__file__).resolve().parents[1]
NV = preset("nvidia")

ALL_MACHINES = ([(n, preset(n)) for n in preset_names()]
                + [(f"wave{w}", custom_wave_machine(w))
                   for w in (8, 16, 32, 64)])


def _line(tag, detail, t0):
    print(f"{tag} PASS ({time.monotonic() - t0:.1f}s): {detail}")


def _cli(*args):
    env = os.environ.copy()
    env.pop("UVGPU_MACHINE", None)
    env["PYTHONPATH"] = str(ROOT / "src") + os.pathsep + env.get(
        "PYTHONPATH", "")
    return subprocess.run([sys.executable, "-m", "uvgpu.cli", *args],
                          capture_output=True, text=True, env=env)


def test_c1_occupancy_arithmetic():
    t0 = time.monotonic()
    r = occupancy(NV, 255, 0, 128)
    assert (r.resident_waves, r.limiting_resource) == (8, "registers")
    r = occupancy(preset("apple"), 128, 0, 256)
    assert (r.resident_waves, r.limiting_resource) == (13, "registers")

    rng = random.Random(10)
    pad = 64 * 1024
    for _ in range(1000):
        W = rng.choice((8, 16, 32, 64))
        F = rng.randrange(1 << 10, 1 << 21)
        m = MachineDescriptor(name="rand", wave_width=W, max_regs=256,
                              scratchpad_bytes=pad, regfile_bytes=F)
        regs = rng.randrange(1, 257)
        scratch = rng.choice((0, rng.randrange(1, pad + 1)))
        wg = rng.randrange(1, 1025)
        want = occupancy_oracle(F, pad, regs, scratch, W, wg)
        got = occupancy(m, regs, scratch, wg).resident_waves
        assert got == want, (F, regs, scratch, W, wg, got, want)
    _line("C1", "occupancy exact on frozen pairs and 1000 random machines",
          t0)


def test_c2_barrier_shuffle_tradeoff():
    t0 = time.monotonic()
    for W, delta in ((16, 4), (32, 5), (64, 6)):
        m = custom_wave_machine(W)
        per_wg = {}
        for variant in kn.VARIANTS:
            inst = kn.build_kernel("reduction", variant, m, 8192)
            run = kn.run_kernel(inst)
            assert run.passed, (W, variant)
            s = run.result.stats
            per_wg[variant] = (s.barrier_rounds / inst.workgroups,
                               s.shuffle_steps / inst.workgroups)
        assert per_wg["abstract"][1] == 0
        assert per_wg["abstract"][0] - per_wg["native"][0] == delta, (
            W, per_wg)
        assert per_wg["native"][1] == delta, (W, per_wg)
    _line("C2", "reduction trades exactly log2(W) barrier rounds for "
          "log2(W) shuffle steps at W=16/32/64", t0)


def test_c3_portability_invariance():
    t0 = time.monotonic()
    gemm_imgs, red_vals, hist_imgs = set(), set(), set()
    worst = 0.0
    for name, m in ALL_MACHINES:
        for variant in kn.VARIANTS:
            g = kn.run_kernel(kn.build_kernel("gemm", variant, m, 128))
            assert g.passed and g.max_rel_err <= 1e-4, (name, variant,
                                                        g.max_rel_err)
            worst = max(worst, g.max_rel_err)
            gemm_imgs.add(g.output.astype(np.float32).tobytes())

            r = kn.run_kernel(kn.build_kernel("reduction", variant, m,
                                              65536))
            assert r.passed, (name, variant)
            red_vals.add(int(r.output))

            h = kn.run_kernel(kn.build_kernel("histogram", variant, m,
                                              65536))
            assert h.passed, (name, variant)
            hist_imgs.add(h.output.tobytes())
    assert red_vals == {1072096796}
    assert len(hist_imgs) == 1
    assert len(gemm_imgs) == 1
    _line("C3", f"bit-identical outputs across {len(ALL_MACHINES)} machines "
          f"x 2 variants (gemm max rel err {worst:.2e})", t0)


def test_c4_oracle_equivalence():
    t0 = time.monotonic()
    sizes = {"gemm": 64, "reduction": 4096, "histogram": 4096}
    hist_by_seed = {}
    runs = 0
    for name in preset_names():
        m = preset(name)
        for kernel in kn.KERNELS:
            for variant in kn.VARIANTS:
                for seed in (0, 1, 2):
                    inst = kn.build_kernel(kernel, variant, m,
                                           sizes[kernel], seed)
                    run = kn.run_kernel(inst)
                    runs += 1
                    assert run.passed, (name, kernel, variant, seed,
                                        run.max_rel_err)
                    if kernel == "histogram":
                        assert int(run.output.sum()) == sizes[kernel]
                        key = (name, seed)
                        prev = hist_by_seed.setdefault(
                            key, run.output.tobytes())
                        # shared vs privatized bins are byte-identical
                        assert run.output.tobytes() == prev, key
    _line("C4", f"{runs} kernel runs match their oracles across 3 seeds; "
          "histogram variants byte-identical", t0)


def test_c5_bank_conflict_proxy():
    t0 = time.monotonic()
    lanes = np.arange(32, dtype=np.uint32)
    full = (1 << 32) - 1
    # column reads of a flat 32x32 f32 tile: stride 32 words
    assert count_bank_conflicts(lanes * 128, full, 32) == 31
    # the classic pad to 33 words per row
    assert count_bank_conflicts(lanes * 132, full, 32) == 0
    totals = {}
    for variant in kn.VARIANTS:
        inst = kn.build_kernel("gemm", variant, NV, 64)
        run = kn.run_kernel(inst)
        assert run.passed
        totals[variant] = run.result.stats.bank_conflict_extra_cycles
    assert totals["native"] < totals["abstract"], totals
    _line("C5", f"31/0 extra cycles on flat/padded tiles; gemm totals "
          f"native {totals['native']} < abstract {totals['abstract']}", t0)


def _diff_against_scalar_reference(seed, W):
    prog = proggen.control_flow_program(seed)
    dev_bytes = W * proggen.DUMP_STRIDE
    res = launch(prog, LaunchConfig(machine=custom_wave_machine(W),
                                    workgroup_size=W,
                                    device_bytes=dev_bytes))
    assert res.trap is None, (seed, W, str(res.trap))
    want = scalarref.run_wave(prog, W, dev_bytes)
    got = res.device_memory.tobytes()
    assert got == bytes(want), (seed, W)


def test_c6_divergence_vs_scalar_reference():
    # every program dumps all its data registers per lane, so a mask left
    # unrestored at any endif/endloop shows up as a wrong or missing slot
    t0 = time.monotonic()
    cases = 0
    for W, start, count in ((8, 0, 9700), (16, 20000, 200), (32, 30000, 100)):
        for seed in range(start, start + count):
            _diff_against_scalar_reference(seed, W)
            cases += 1
    assert cases >= 10000
    _line("C6", f"{cases} random structured-divergence programs agree with "
          "the per-lane reference", t0)


def test_c7_determinism_and_schedule_robustness():
    t0 = time.monotonic()
    distinct_schedules = 0
    for kernel, n in (("gemm", 32), ("reduction", 4096), ("histogram", 4096)):
        for variant in kn.VARIANTS:
            inst = kn.build_kernel(kernel, variant, NV, n)
            a = kn.run_kernel(inst, seed=7, interleave=True)
            b = kn.run_kernel(inst, seed=7, interleave=True)
            assert a.result.stats.trace_hash == b.result.stats.trace_hash
            assert (a.result.device_memory == b.result.device_memory).all()

            mems, hashes = set(), set()
            for seed in range(100):
                r = kn.run_kernel(inst, seed=seed, interleave=True)
                assert r.passed, (kernel, variant, seed)
                mems.add(r.result.device_memory.tobytes())
                hashes.add(r.result.stats.trace_hash)
            assert len(mems) == 1, (kernel, variant)
            if len(hashes) > 1:
                distinct_schedules += 1
    assert distinct_schedules > 0  # seeds really do move the schedule
    _line("C7", "same seed replays exactly; 100 seeds leave identical "
          "memory for every kernel and variant", t0)


def test_c8_litmus_and_trap_contract(tmp_path):
    t0 = time.monotonic()
    unfenced = kn.run_litmus(NV, fenced=False, seeds=1000)
    assert unfenced.flagged >= 1, unfenced
    fenced = kn.run_litmus(NV, fenced=True, seeds=1000)
    assert fenced.flagged == 0, fenced

    div = (".kernel k\n  rdspec r0, lane_id\n  cmp.eq.u32 r1, r0, 0\n"
           "  if r1\n    bar\n  endif\n  halt\n")
    prog, diags = parse_program(div)
    assert prog is not None, diags
    res = launch(prog, LaunchConfig(machine=NV, workgroup_size=32))
    assert res.trap is not None
    assert res.trap.kind == vm.TRAP_BARRIER_DIVERGENCE

    oob = ".kernel k\n  mov r0, 4096\n  st.device.32 [r0], r0\n  halt\n"
    prog, diags = parse_program(oob)
    assert prog is not None, diags
    res = launch(prog, LaunchConfig(machine=NV, device_bytes=64))
    assert res.trap is not None and res.trap.kind == vm.TRAP_OOB

    for name, text in (("div.uva", div), ("oob.uva", oob)):
        path = tmp_path / name
        path.write_text(text)
        args = ["run", str(path), "--device-bytes", "64"]
        if name == "div.uva":
            args += ["--wg", "32"]
        proc = _cli(*args)
        assert proc.returncode == 2, (name, proc.stderr)
        assert proc.stderr.startswith("trap:")
    _line("C8", f"unfenced litmus flagged {unfenced.flagged}/1000, fenced "
          "0/1000; divergent barrier and OOB trap with exit code 2", t0)


def test_c9_assembler_round_trip():
    t0 = time.monotonic()
    for seed in range(10000):
        p = proggen.random_program(seed)
        text = format_program(p)
        q, diags = parse_program(text)
        assert diags == [], (seed, diags[:3])
        assert q == p, seed
    elapsed = time.monotonic() - t0
    assert elapsed < 30.0, f"{elapsed:.1f}s for 10000 round trips"

    rng = random.Random(99)
    glyphs = " \t.,;[]+-rkabcxyz0123456789\n"
    for trial in range(300):
        if trial % 2:
            text = "".join(rng.choice(glyphs)
                           for _ in range(rng.randrange(1, 400)))
        else:
            lines = format_program(
                proggen.random_program(rng.randrange(10000))).split("\n")
            k = rng.randrange(len(lines))
            lines[k] = "".join(rng.choice(glyphs)
                               for _ in range(rng.randrange(0, 40)))
            text = "\n".join(lines)
        prog, diags = parse_program(text)  # must never raise
        if prog is None:
            assert diags
        assert all(d.line >= 1 and d.column >= 1 for d in diags)
    _line("C9", f"10000 programs round-trip in {elapsed:.1f}s; corrupted "
          "inputs yield positioned diagnostics", t0)
