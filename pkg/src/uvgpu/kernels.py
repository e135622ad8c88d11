"""Benchmark kernels: three problems, two authoring styles each.

Every kernel exists in an "abstract" form (portable primitives only:
workgroup barriers, shared scratch, plain loads and stores) and a "native"
form (the tuning a vendor guide would suggest: async tile fills, in-wave
shuffle tails, wave-private scratch regions).  Both forms of one kernel
compute bit-identical results on every machine; what changes is the counter
profile.  That is the point: the structural cost of portability is visible
in counters, not in answers.

  gemm       C = A @ B, f32, 32x32 workgroup tiles, k-tiles of 32 in scratch.
             Abstract stages A transposed at flat stride (the textbook bank
             conflict); native fills tiles with async copies and reads
             row-major, so no scratch access ever splits a bank.
  reduction  Sum of n values, 4 per thread, 256-thread workgroups.
             Abstract runs the full 8-level scratch tree with one barrier
             per level; native stops the tree at wave width and finishes
             with shfl.down, trading log2(W) barrier rounds for log2(W)
             shuffle steps.  The combining tree is the same shape either
             way, so f32 results match bit for bit.
  histogram  256-bin byte histogram.  Abstract shares one scratch table per
             workgroup (two barriers); native gives each wave a private
             region and merges after a single barrier.

The message-passing litmus pair lives here too: a producer/consumer handoff
through device memory, with and without release/acquire fences, for
exercising the race detector.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import asm, vm
from .machine import MachineDescriptor
from .prng import stream_u64

KERNELS = ("gemm", "reduction", "histogram")
VARIANTS = ("abstract", "native")

_GEMM_TILE = 32
_RED_WG = 256
_RED_PER_THREAD = 4
_HIST_WG = 256


@dataclass
class KernelInstance:
    kernel: str
    variant: str
    machine: MachineDescriptor
    source: str
    grid: tuple
    workgroup_size: tuple
    args: tuple
    device_bytes: int
    device_image: np.ndarray
    workgroups: int
    tolerance: float
    expected: np.ndarray
    extract: "callable" = field(repr=False)

    def program(self):
        prog, diags = asm.parse_program(self.source)
        if prog is None:
            raise AssertionError(
                f"generated {self.kernel}/{self.variant} does not parse: "
                f"{diags[0]}")
        return prog


@dataclass
class KernelRun:
    instance: KernelInstance
    result: vm.ExecResult
    output: np.ndarray
    max_rel_err: float
    passed: bool


# --------------------------------------------------------------- inputs

def gen_f32_pm1(seed: int, n: int) -> np.ndarray:
    """Exactly representable f32 values in [-1, 1)."""
    z = stream_u64(seed, n)
    return ((z >> np.uint64(40)).astype(np.float64) / 2.0 ** 23
            - 1.0).astype(np.float32)


def gen_f32_unit(seed: int, n: int) -> np.ndarray:
    z = stream_u64(seed, n)
    return ((z >> np.uint64(40)).astype(np.float64) / 2.0 ** 24).astype(
        np.float32)


def gen_i32_small(seed: int, n: int) -> np.ndarray:
    # [0, 2^15): a 64Ki-element sum stays far from the 2^31 boundary
    z = stream_u64(seed, n)
    return (z >> np.uint64(49)).astype(np.uint32)


def gen_bytes(seed: int, n: int) -> np.ndarray:
    return (stream_u64(seed, n) & np.uint64(0xFF)).astype(np.uint8)


# --------------------------------------------------------------- oracles

def gemm_reference(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """k-ascending fma chain: acc = f32(f64(a)*f64(b) + f64(acc))."""
    n = A.shape[0]
    A64 = A.astype(np.float64)
    B64 = B.astype(np.float64)
    acc = np.zeros((n, n), np.float32)
    for k in range(n):
        acc = (A64[:, k:k + 1] * B64[k:k + 1, :]
               + acc.astype(np.float64)).astype(np.float32)
    return acc


def reduction_reference_i32(vals: np.ndarray) -> np.uint32:
    return np.uint32(int(vals.astype(np.uint64).sum()) & 0xFFFFFFFF)


def reduction_reference_f32(vals: np.ndarray, workgroups: int) -> np.float32:
    """Mirror of the kernel's combining order: per-thread 4-element chain,
    the 256-leaf binary tree, then a left fold over workgroup partials."""
    x = vals.reshape(workgroups, _RED_PER_THREAD, _RED_WG)
    acc = x[:, 0, :].copy()
    for j in range(1, _RED_PER_THREAD):
        acc = acc + x[:, j, :]
    s = _RED_WG // 2
    while s >= 1:
        acc[:, :s] = acc[:, :s] + acc[:, s:2 * s]
        s //= 2
    total = np.float32(0.0)
    for p in acc[:, 0]:
        total = total + p
    return total


def histogram_reference(data: np.ndarray) -> np.ndarray:
    return np.bincount(data, minlength=256).astype(np.uint32)


def combine_partials(partials: np.ndarray) -> np.float32:
    total = np.float32(0.0)
    for p in partials:
        total = total + p
    return total


# ------------------------------------------------------------ gemm source

def _gemm_prologue(n: int) -> list:
    return [
        ".kernel main",
        ".scratch 8192",
        "rdspec r0, tid_x",
        "rdspec r1, tid_y",
        "mov r12, 0",
        "ld.arg.32 r2, [r12]",       # n
        "ld.arg.32 r3, [r12+4]",     # A
        "ld.arg.32 r4, [r12+8]",     # B
        "ld.arg.32 r5, [r12+12]",    # C
        "rdspec r6, wgid_x",
        "shl.u32 r6, r6, 5",         # col0
        "rdspec r7, wgid_y",
        "shl.u32 r7, r7, 5",         # row0
        "add.u32 r8, r7, r1",        # row = row0 + ty
        "add.u32 r9, r6, r0",        # col = col0 + tx
        "mov r10, 0.0",
    ]


def _gemm_epilogue() -> list:
    return [
        "mul.u32 r12, r8, r2",
        "add.u32 r12, r12, r9",
        "shl.u32 r12, r12, 2",
        "add.u32 r12, r12, r5",
        "st.device.32 [r12], r10",
        "halt",
    ]


def _gemm_compute(a_step: int) -> list:
    # a addr = r14 + a_step*kk, b addr = r15 + 128*kk
    lines = []
    for kk in range(_GEMM_TILE):
        lines.append(f"ld.scratch.32 r16, [r14+{a_step * kk}]")
        lines.append(f"ld.scratch.32 r17, [r15+{128 * kk}]")
        lines.append("fma.f32 r10, r16, r17, r10")
    return lines


def _gemm_abstract(n: int) -> str:
    ktiles = n // _GEMM_TILE
    lines = _gemm_prologue(n)
    lines += [
        # fill cursors: A element (row, tx), B element (ty, col)
        "mul.u32 r18, r8, r2",
        "add.u32 r18, r18, r0",
        "shl.u32 r18, r18, 2",
        "add.u32 r18, r18, r3",
        "mul.u32 r19, r1, r2",
        "add.u32 r19, r19, r9",
        "shl.u32 r19, r19, 2",
        "add.u32 r19, r19, r4",
        # staging addresses: A lands transposed at flat stride, B row-major
        "shl.u32 r13, r0, 7",
        "shl.u32 r12, r1, 2",
        "add.u32 r13, r13, r12",     # AsT[tx*32+ty]
        "shl.u32 r20, r1, 7",
        "shl.u32 r12, r0, 2",
        "add.u32 r20, r20, r12",
        "add.u32 r20, r20, 4096",    # Bs[ty*32+tx]
        # compute-side read bases
        "shl.u32 r14, r1, 2",        # AsT column ty
        "shl.u32 r15, r0, 2",
        "add.u32 r15, r15, 4096",    # Bs column tx
        "mov r11, 0",
        "loop",
        "ld.device.32 r16, [r18]",
        "st.scratch.32 [r13], r16",
        "ld.device.32 r17, [r19]",
        "st.scratch.32 [r20], r17",
        "bar",
    ]
    lines += _gemm_compute(a_step=128)
    lines += [
        "bar",
        "shl.u32 r12, r2, 7",
        "add.u32 r19, r19, r12",     # B cursor: down 32 rows
        "add.u32 r18, r18, 128",     # A cursor: right 32 columns
        "add.u32 r11, r11, 1",
        f"cmp.ge.u32 r12, r11, {ktiles}",
        "break r12",
        "endloop",
    ]
    lines += _gemm_epilogue()
    return "\n".join(lines) + "\n"


def _gemm_native(n: int) -> str:
    ktiles = n // _GEMM_TILE
    lines = _gemm_prologue(n)
    lines += [
        "shl.u32 r14, r1, 7",        # As row ty
        "shl.u32 r15, r0, 2",
        "add.u32 r15, r15, 4096",    # Bs column tx
        # per-tile copy bases: A rows at (row0, kt), B rows at (kt, col0)
        "mul.u32 r24, r7, r2",
        "shl.u32 r24, r24, 2",
        "add.u32 r24, r24, r3",
        "shl.u32 r25, r6, 2",
        "add.u32 r25, r25, r4",
        "mov r11, 0",
        "loop",
        "rdspec r12, wave_id",
        "cmp.eq.u32 r12, r12, 0",
        "if r12",
        "mov r18, r24",
        "mov r19, 0",
        "mov r21, r25",
        "mov r22, 4096",
        "shl.u32 r23, r2, 2",        # device row stride
        "mov r20, 0",
        "loop",
        "cpasync r19, r18, 128",
        "cpasync r22, r21, 128",
        "add.u32 r18, r18, r23",
        "add.u32 r21, r21, r23",
        "add.u32 r19, r19, 128",
        "add.u32 r22, r22, 128",
        "add.u32 r20, r20, 1",
        f"cmp.ge.u32 r12, r20, {_GEMM_TILE}",
        "break r12",
        "endloop",
        "waitasync 0",
        "endif",
        "bar",
    ]
    lines += _gemm_compute(a_step=4)
    lines += [
        "bar",
        "add.u32 r24, r24, 128",
        "shl.u32 r12, r2, 7",
        "add.u32 r25, r25, r12",
        "add.u32 r11, r11, 1",
        f"cmp.ge.u32 r12, r11, {ktiles}",
        "break r12",
        "endloop",
    ]
    lines += _gemm_epilogue()
    return "\n".join(lines) + "\n"


def build_gemm(machine: MachineDescriptor, variant: str, n: int,
               seed: int = 0) -> KernelInstance:
    if n % _GEMM_TILE:
        raise ValueError(f"gemm size must be a multiple of {_GEMM_TILE}")
    A = gen_f32_pm1(seed, n * n).reshape(n, n)
    B = gen_f32_pm1(seed + 1, n * n).reshape(n, n)
    words = n * n
    image = np.zeros(3 * words * 4, np.uint8)
    image[:words * 4] = A.reshape(-1).view(np.uint8)
    image[words * 4:2 * words * 4] = B.reshape(-1).view(np.uint8)
    source = _gemm_abstract(n) if variant == "abstract" else _gemm_native(n)
    wgs = (n // _GEMM_TILE) ** 2

    def extract(mem):
        return mem.view(np.float32)[2 * words:3 * words].reshape(n, n)

    return KernelInstance(
        kernel="gemm", variant=variant, machine=machine, source=source,
        grid=(n // _GEMM_TILE, n // _GEMM_TILE, 1),
        workgroup_size=(_GEMM_TILE, _GEMM_TILE, 1),
        args=(n, 0, words * 4, 2 * words * 4),
        device_bytes=image.size, device_image=image, workgroups=wgs,
        tolerance=1e-4, expected=gemm_reference(A, B), extract=extract)


# ------------------------------------------------------- reduction source

def _red_prologue(op: str) -> list:
    stride = _RED_WG * 4
    return [
        ".kernel main",
        f".scratch {_RED_WG * 4}",
        "rdspec r0, tid_x",
        "mov r8, 0",
        "ld.arg.32 r2, [r8]",        # n (elements)
        "ld.arg.32 r3, [r8+4]",      # input
        "ld.arg.32 r4, [r8+8]",      # output
        "rdspec r5, wgid_x",
        "shl.u32 r6, r5, 10",
        "add.u32 r6, r6, r0",
        "shl.u32 r6, r6, 2",
        "add.u32 r6, r6, r3",
        "ld.device.32 r7, [r6]",
        f"ld.device.32 r9, [r6+{stride}]",
        f"{op} r7, r7, r9",
        f"ld.device.32 r9, [r6+{2 * stride}]",
        f"{op} r7, r7, r9",
        f"ld.device.32 r9, [r6+{3 * stride}]",
        f"{op} r7, r7, r9",
        "shl.u32 r8, r0, 2",
        "st.scratch.32 [r8], r7",
    ]


def _red_tree_levels(op: str, down_to: int) -> list:
    lines = []
    s = _RED_WG // 2
    while s >= down_to:
        lines += [
            "bar",
            f"cmp.lt.u32 r10, r0, {s}",
            "if r10",
            f"ld.scratch.32 r9, [r8+{4 * s}]",
            "ld.scratch.32 r7, [r8]",
            f"{op} r7, r7, r9",
            "st.scratch.32 [r8], r7",
            "endif",
        ]
        s //= 2
    return lines


def _red_publish(dtype: str) -> list:
    if dtype == "i32":
        return [
            "atom.add.device r9, [r4], r19",
        ]
    return [
        "shl.u32 r9, r5, 2",
        "add.u32 r9, r9, r4",
        "st.device.32 [r9], r19",
    ]


def _reduction_abstract(dtype: str) -> str:
    op = "add.i32" if dtype == "i32" else "add.f32"
    lines = _red_prologue(op)
    lines += _red_tree_levels(op, down_to=1)
    lines += [
        "cmp.eq.u32 r10, r0, 0",
        "if r10",
        "ld.scratch.32 r19, [r8]",
    ]
    lines += _red_publish(dtype)
    lines += ["endif", "halt"]
    return "\n".join(lines) + "\n"


def _reduction_native(dtype: str, wave_width: int) -> str:
    op = "add.i32" if dtype == "i32" else "add.f32"
    lines = _red_prologue(op)
    lines += _red_tree_levels(op, down_to=wave_width)
    lines += [
        "rdspec r20, wave_id",
        "cmp.eq.u32 r10, r20, 0",
        "if r10",
        "rdspec r21, lane_id",
        "shl.u32 r22, r21, 2",
        "ld.scratch.32 r19, [r22]",
        "rdspec r23, wave_width",
        "shr.u32 r23, r23, 1",
        "loop",
        "shfl.down.b32 r9, r19, r23",
        f"{op} r19, r19, r9",
        "shr.u32 r23, r23, 1",
        "cmp.eq.u32 r10, r23, 0",
        "break r10",
        "endloop",
        "cmp.eq.u32 r10, r21, 0",
        "if r10",
    ]
    lines += _red_publish(dtype)
    lines += ["endif", "endif", "halt"]
    return "\n".join(lines) + "\n"


def build_reduction(machine: MachineDescriptor, variant: str, n: int,
                    seed: int = 0, dtype: str = "i32") -> KernelInstance:
    per_wg = _RED_WG * _RED_PER_THREAD
    if n % per_wg:
        raise ValueError(f"reduction size must be a multiple of {per_wg}")
    wgs = n // per_wg
    if dtype == "i32":
        vals = gen_i32_small(seed, n)
        raw = vals
        expected = reduction_reference_i32(vals)
        out_words = 1
    else:
        vals = gen_f32_unit(seed, n)
        raw = vals.view(np.uint32)
        expected = reduction_reference_f32(vals, wgs)
        out_words = wgs
    image = np.zeros((n + out_words) * 4, np.uint8)
    image[:n * 4] = raw.view(np.uint8)
    source = (_reduction_abstract(dtype) if variant == "abstract"
              else _reduction_native(dtype, machine.wave_width))

    if dtype == "i32":
        def extract(mem):
            return mem.view(np.uint32)[n:n + 1][0]
    else:
        def extract(mem):
            return combine_partials(mem.view(np.float32)[n:n + wgs])

    return KernelInstance(
        kernel="reduction", variant=variant, machine=machine, source=source,
        grid=(wgs, 1, 1), workgroup_size=(_RED_WG, 1, 1),
        args=(n, 0, n * 4), device_bytes=image.size, device_image=image,
        workgroups=wgs, tolerance=0.0, expected=expected, extract=extract)


# ------------------------------------------------------- histogram source

def _hist_load_and_count(target: str) -> list:
    # r6 holds the word address; bins go to scratch at `target` base reg
    lines = [
        "ld.device.32 r7, [r6]",
        "mov r10, 1",
    ]
    for byte in range(4):
        if byte:
            lines.append(f"shr.u32 r9, r7, {8 * byte}")
            lines.append("and.u32 r9, r9, 255")
        else:
            lines.append("and.u32 r9, r7, 255")
        lines.append("shl.u32 r9, r9, 2")
        if target:
            lines.append(f"add.u32 r9, r9, {target}")
        lines.append("atom.add.scratch r11, [r9], r10")
    return lines


def _hist_prologue() -> list:
    return [
        "rdspec r0, tid_x",
        "mov r8, 0",
        "ld.arg.32 r2, [r8]",        # n bytes
        "ld.arg.32 r3, [r8+4]",      # input
        "ld.arg.32 r4, [r8+8]",      # bins
        "rdspec r5, wgid_x",
        "shl.u32 r6, r5, 8",
        "add.u32 r6, r6, r0",
        "shl.u32 r6, r6, 2",
        "add.u32 r6, r6, r3",
    ]


def _histogram_abstract() -> str:
    lines = [".kernel main", ".scratch 1024"]
    lines += _hist_prologue()
    lines += [
        "shl.u32 r8, r0, 2",
        "st.scratch.32 [r8], 0",
        "bar",
    ]
    lines += _hist_load_and_count(target="")
    lines += [
        "bar",
        "ld.scratch.32 r9, [r8]",
        "shl.u32 r12, r0, 2",
        "add.u32 r12, r12, r4",
        "atom.add.device r11, [r12], r9",
        "halt",
    ]
    return "\n".join(lines) + "\n"


def _histogram_native(wave_width: int) -> str:
    regions = _HIST_WG // wave_width
    lines = [".kernel main", f".scratch {regions * 1024}"]
    lines += _hist_prologue()
    lines += [
        "rdspec r13, wave_id",
        "shl.u32 r14, r13, 10",      # private region base
        "rdspec r15, lane_id",
        "shl.u32 r8, r15, 2",
        "add.u32 r8, r8, r14",
    ]
    # each lane clears its share of the wave's 256 bins
    for k in range(256 // wave_width):
        lines.append(f"st.scratch.32 [r8+{4 * wave_width * k}], 0")
    lines += _hist_load_and_count(target="r14")
    lines += ["bar"]
    # thread t folds bin t across every wave's region
    lines += [
        "shl.u32 r8, r0, 2",
        "mov r9, 0",
    ]
    for r in range(regions):
        lines.append(f"ld.scratch.32 r10, [r8+{1024 * r}]")
        lines.append("add.u32 r9, r9, r10")
    lines += [
        "shl.u32 r12, r0, 2",
        "add.u32 r12, r12, r4",
        "atom.add.device r11, [r12], r9",
        "halt",
    ]
    return "\n".join(lines) + "\n"


def build_histogram(machine: MachineDescriptor, variant: str, n: int,
                    seed: int = 0) -> KernelInstance:
    per_wg = _HIST_WG * 4
    if n % per_wg:
        raise ValueError(f"histogram size must be a multiple of {per_wg}")
    wgs = n // per_wg
    data = gen_bytes(seed, n)
    image = np.zeros(n + 256 * 4, np.uint8)
    image[:n] = data
    source = (_histogram_abstract() if variant == "abstract"
              else _histogram_native(machine.wave_width))

    def extract(mem):
        return mem.view(np.uint32)[n // 4:n // 4 + 256]

    return KernelInstance(
        kernel="histogram", variant=variant, machine=machine, source=source,
        grid=(wgs, 1, 1), workgroup_size=(_HIST_WG, 1, 1), args=(n, 0, n),
        device_bytes=image.size, device_image=image, workgroups=wgs,
        tolerance=0.0, expected=histogram_reference(data), extract=extract)


def build_kernel(kernel: str, variant: str, machine: MachineDescriptor,
                 n: int, seed: int = 0, dtype: str = "i32") -> KernelInstance:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant '{variant}'")
    if kernel == "gemm":
        return build_gemm(machine, variant, n, seed)
    if kernel == "reduction":
        return build_reduction(machine, variant, n, seed, dtype)
    if kernel == "histogram":
        return build_histogram(machine, variant, n, seed)
    raise ValueError(f"unknown kernel '{kernel}'")


# ----------------------------------------------------------------- runner

def run_kernel(inst: KernelInstance, seed: int = 0,
               interleave: bool = False, check_races: bool = False,
               trace: bool = False) -> KernelRun:
    cfg = vm.LaunchConfig(
        machine=inst.machine, grid=inst.grid,
        workgroup_size=inst.workgroup_size, args=inst.args,
        device_bytes=inst.device_bytes, device_image=inst.device_image,
        seed=seed, interleave_workgroups=interleave,
        check_races=check_races, trace=trace)
    res = vm.launch(inst.program(), cfg)
    if res.trap is not None:
        return KernelRun(inst, res, np.zeros(0), math.inf, False)
    out = inst.extract(res.device_memory)
    err = max_rel_err(out, inst.expected)
    return KernelRun(inst, res, out, err, err <= inst.tolerance)


def max_rel_err(got, want) -> float:
    g = np.asarray(got, np.float64).reshape(-1)
    w = np.asarray(want, np.float64).reshape(-1)
    if g.shape != w.shape:
        return math.inf
    denom = np.maximum(np.abs(w), 1e-6)
    return float(np.max(np.abs(g - w) / denom)) if g.size else 0.0


# ----------------------------------------------------------------- litmus

def litmus_source(fenced: bool) -> str:
    rel = ["fence.release.device"] if fenced else []
    acq = ["fence.acquire.device"] if fenced else []
    lines = [
        ".kernel main",
        "rdspec r0, wgid_x",
        "cmp.eq.u32 r1, r0, 0",
        "mov r3, 0",                 # data cell
        "mov r6, 4",                 # flag cell
        "mov r9, 8",                 # observer's result cell
        "if r1",
        "mov r2, 42",
        "st.device.32 [r3], r2",
        *rel,
        "mov r4, 1",
        "atom.exch.device r5, [r6], r4",
        "else",
        "loop",
        "atom.or.device r7, [r6], 0",
        "break r7",
        "endloop",
        *acq,
        "ld.device.32 r8, [r3]",
        "st.device.32 [r9], r8",
        "endif",
        "halt",
    ]
    return "\n".join(lines) + "\n"


@dataclass
class LitmusOutcome:
    fenced: bool
    seeds: int
    flagged: int
    values_seen: set

    @property
    def expectation_met(self) -> bool:
        return self.flagged == 0 if self.fenced else self.flagged > 0


def run_litmus(machine: MachineDescriptor, fenced: bool,
               seeds: int = 100) -> LitmusOutcome:
    prog, diags = asm.parse_program(litmus_source(fenced))
    assert prog is not None, diags
    flagged = 0
    values = set()
    for seed in range(seeds):
        cfg = vm.LaunchConfig(
            machine=machine, grid=(2, 1, 1), workgroup_size=(1, 1, 1),
            device_bytes=64, seed=seed, interleave_workgroups=True,
            check_races=True)
        res = vm.launch(prog, cfg)
        if res.trap is not None:
            raise AssertionError(f"litmus trapped: {res.trap}")
        if res.race_reports:
            flagged += 1
        values.add(int(res.device_memory.view(np.uint32)[2]))
    return LitmusOutcome(fenced=fenced, seeds=seeds, flagged=flagged,
                         values_seen=values)


# -------------------------------------------------------------- benchmark

_BENCH_SIZES = {"gemm": 64, "reduction": 16384, "histogram": 16384}

_CSV_HEADER = ("kernel,variant,preset,pass,max_rel_err,barriers,shuffles,"
               "bank_conflicts,atomics,instructions")


@dataclass
class BenchRow:
    kernel: str
    variant: str
    preset: str
    passed: bool
    max_rel_err: float
    barriers: float
    shuffles: float
    bank_conflicts: float
    atomics: float
    instructions: float

    def csv(self) -> str:
        def num(x):
            return str(int(x)) if float(x).is_integer() else f"{x:.3f}"
        return ",".join([
            self.kernel, self.variant, self.preset,
            "1" if self.passed else "0", f"{self.max_rel_err:.3e}",
            num(self.barriers), num(self.shuffles),
            num(self.bank_conflicts), num(self.atomics),
            num(self.instructions)])


@dataclass
class BenchReport:
    rows: list

    def to_csv(self) -> str:
        return "\n".join([_CSV_HEADER] + [r.csv() for r in self.rows]) + "\n"

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def identity_lines(self) -> list:
        """Cross-checks of the structural counter identities."""
        lines = []
        by = {}
        for r in self.rows:
            by.setdefault((r.kernel, r.preset, r.variant), []).append(r)

        presets = sorted({r.preset for r in self.rows})
        for preset in presets:
            red_a = by.get(("reduction", preset, "abstract"))
            red_n = by.get(("reduction", preset, "native"))
            if red_a and red_n:
                delta = red_a[0].barriers - red_n[0].barriers
                shfl = red_n[0].shuffles
                lines.append(
                    f"{preset}: reduction barrier delta {delta:g} per "
                    f"workgroup, native shuffle steps {shfl:g} per workgroup")
            gem_a = by.get(("gemm", preset, "abstract"))
            gem_n = by.get(("gemm", preset, "native"))
            if gem_a and gem_n:
                lines.append(
                    f"{preset}: gemm scratch conflicts per workgroup "
                    f"abstract {gem_a[0].bank_conflicts:g} vs native "
                    f"{gem_n[0].bank_conflicts:g}")
        return lines


def run_benchmark(machines, kernels=KERNELS, variants=VARIANTS,
                  seeds=(0,), sizes=None) -> BenchReport:
    sizes = dict(_BENCH_SIZES, **(sizes or {}))
    rows = []
    for name, machine in machines:
        for kernel in kernels:
            for variant in variants:
                for seed in seeds:
                    inst = build_kernel(kernel, variant, machine,
                                        sizes[kernel], seed)
                    run = run_kernel(inst, seed=seed)
                    s = run.result.stats
                    wgs = inst.workgroups
                    rows.append(BenchRow(
                        kernel=kernel, variant=variant, preset=name,
                        passed=run.passed, max_rel_err=run.max_rel_err,
                        barriers=s.barrier_rounds / wgs,
                        shuffles=s.shuffle_steps / wgs,
                        bank_conflicts=s.bank_conflict_extra_cycles / wgs,
                        atomics=s.atomic_serializations / wgs,
                        instructions=s.total_instructions / wgs))
    return BenchReport(rows=rows)
