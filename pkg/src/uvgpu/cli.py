"""Command line front end.

Subcommands:
  run        assemble, validate, and execute a kernel file
  validate   assemble and validate only, reporting diagnostics
  fmt        print a program back in canonical form
  occupancy  resident-wave arithmetic for a register/scratch footprint
  bench      kernel suite across machines, CSV or JSON rows
  litmus     message-passing handoff under the race detector

Exit codes: 0 success, 1 usage or validation failure, 2 runtime trap.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import asm, isa, kernels, vm
from .machine import (MachineDescriptor, occupancy, preset, preset_names,
                      resolve_machine, custom_wave_machine)


def _default_machine() -> str:
    return os.environ.get("UVGPU_MACHINE", "nvidia")


def _machine_arg(p: argparse.ArgumentParser):
    p.add_argument("--machine", default=_default_machine(),
                   help="preset name or .mcfg descriptor path "
                        "(default: $UVGPU_MACHINE or 'nvidia')")


def _load(path: str):
    try:
        with open(path) as f:
            return f.read()
    except OSError as e:
        print(f"error: cannot read {path}: {e.strerror}", file=sys.stderr)
        return None


def _dims(text: str, what: str) -> tuple:
    parts = text.split(",")
    if not 1 <= len(parts) <= 3:
        raise argparse.ArgumentTypeError(
            f"{what} takes 1 to 3 comma-separated sizes")
    try:
        dims = tuple(int(p, 0) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad {what} '{text}'")
    return dims + (1,) * (3 - len(dims))


def _parse_and_validate(path: str, machine: MachineDescriptor):
    text = _load(path)
    if text is None:
        return None
    prog, diags = asm.parse_program(text)
    for d in diags:
        print(f"{path}:{d}", file=sys.stderr)
    if prog is None:
        return None
    issues = isa.validate_program(prog, machine)
    for issue in issues:
        print(f"{path}: {issue.function}+{issue.index}: {issue.rule}: "
              f"{issue.message}", file=sys.stderr)
    if issues:
        return None
    return prog


def _cmd_run(args) -> int:
    try:
        machine = resolve_machine(args.machine)
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    prog = _parse_and_validate(args.file, machine)
    if prog is None:
        return 1

    image = None
    if args.device_image:
        try:
            with open(args.device_image, "rb") as f:
                image = f.read()
        except OSError as e:
            print(f"error: cannot read {args.device_image}: {e.strerror}",
                  file=sys.stderr)
            return 1
    cfg = vm.LaunchConfig(
        machine=machine, grid=args.grid, workgroup_size=args.wg,
        args=tuple(args.arg), seed=args.seed,
        interleave_workgroups=args.interleave, check_races=args.races,
        trace=args.trace is not None, device_bytes=args.device_bytes,
        device_image=image)
    try:
        res = vm.launch(prog, cfg)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1

    if args.trace is not None:
        with open(args.trace, "w") as f:
            f.write("\n".join(res.trace) + ("\n" if res.trace else ""))
    if args.stats is not None:
        payload = {"outcome": res.outcome, **res.stats.to_dict()}
        with open(args.stats, "w") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")
    if args.dump is not None:
        nbytes = args.dump_bytes or res.device_memory.size
        with open(args.dump, "wb") as f:
            f.write(res.device_memory[:nbytes].tobytes())
    for rep in res.race_reports:
        print(f"race: {rep}", file=sys.stderr)
    if res.trap is not None:
        print(str(res.trap), file=sys.stderr)
        return 2
    print(f"completed: {res.stats.scheduler_steps} steps, "
          f"{res.stats.total_instructions} instructions, "
          f"trace hash {res.stats.trace_hash:016x}")
    return 0


def _cmd_validate(args) -> int:
    try:
        machine = resolve_machine(args.machine)
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    prog = _parse_and_validate(args.file, machine)
    if prog is None:
        return 1
    print(f"ok: {sum(len(b) for b in prog.functions.values())} instructions, "
          f"{prog.regs_used} registers, {prog.scratch_used} scratch bytes")
    return 0


def _cmd_fmt(args) -> int:
    text = _load(args.file)
    if text is None:
        return 1
    prog, diags = asm.parse_program(text)
    for d in diags:
        print(f"{args.file}:{d}", file=sys.stderr)
    if prog is None:
        return 1
    sys.stdout.write(asm.format_program(prog))
    return 0


def _cmd_occupancy(args) -> int:
    try:
        machine = resolve_machine(args.machine)
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    if args.sweep:
        print("regs,resident_waves,limiting_resource")
        step = max(machine.max_regs // 32, 1)
        for regs in range(step, machine.max_regs + 1, step):
            r = occupancy(machine, regs, args.scratch, args.wg)
            print(f"{regs},{r.resident_waves},{r.limiting_resource}")
        return 0
    try:
        r = occupancy(machine, args.regs, args.scratch, args.wg)
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(f"machine {machine.name}: {r.resident_waves} resident waves "
          f"(limited by {r.limiting_resource}) for {args.regs} regs, "
          f"{args.scratch} scratch bytes, workgroups of {args.wg}")
    return 0


def _bench_machines(spec: str):
    if spec == "all":
        names = list(preset_names())
    else:
        names = [s.strip() for s in spec.split(",") if s.strip()]
    out = []
    for name in names:
        if name.startswith("wave"):
            out.append((name, custom_wave_machine(int(name[4:]))))
        else:
            out.append((name, resolve_machine(name)))
    return out


def _cmd_bench(args) -> int:
    try:
        machines = _bench_machines(args.machines)
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    kernel_names = tuple(args.kernels.split(","))
    for k in kernel_names:
        if k not in kernels.KERNELS:
            print(f"error: unknown kernel '{k}'", file=sys.stderr)
            return 1
    seeds = tuple(int(s, 0) for s in args.seeds.split(","))
    report = kernels.run_benchmark(machines, kernels=kernel_names,
                                   seeds=seeds)
    if args.format == "json":
        rows = [vars(r) for r in report.rows]
        print(json.dumps(rows, indent=2))
    else:
        sys.stdout.write(report.to_csv())
    for line in report.identity_lines():
        print(line, file=sys.stderr)
    return 0 if report.all_passed else 1


def _cmd_litmus(args) -> int:
    try:
        machine = resolve_machine(args.machine)
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    fenced = not args.unfenced
    out = kernels.run_litmus(machine, fenced=fenced, seeds=args.seeds)
    kind = "fenced" if fenced else "unfenced"
    print(f"{kind} handoff: {out.flagged} of {out.seeds} seeds flagged, "
          f"observed values {sorted(out.values_seen)}")
    if out.expectation_met:
        print("expectation met" if fenced else
              "expectation met: the missing fence is visible")
        return 0
    print("expectation NOT met", file=sys.stderr)
    return 1


class _Parser(argparse.ArgumentParser):
    # usage problems exit 1; exit 2 is reserved for runtime traps
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def main(argv=None) -> int:
    ap = _Parser(
        prog="uvgpu",
        description="portable wave-level kernel simulator and benchmarks")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute a kernel file")
    p.add_argument("file")
    _machine_arg(p)
    p.add_argument("--wg", type=lambda s: _dims(s, "--wg"), default=(1, 1, 1),
                   help="workgroup size, e.g. 256 or 32,8")
    p.add_argument("--grid", type=lambda s: _dims(s, "--grid"),
                   default=(1, 1, 1), help="grid size in workgroups")
    p.add_argument("--arg", action="append", default=[],
                   type=lambda s: int(s, 0),
                   help="append one 32-bit kernel argument (repeatable)")
    p.add_argument("--seed", type=lambda s: int(s, 0), default=0)
    p.add_argument("--device-bytes", type=lambda s: int(s, 0),
                   default=vm.DEFAULT_DEVICE_BYTES)
    p.add_argument("--device-image", default=None,
                   help="file whose bytes initialize device memory")
    p.add_argument("--trace", default=None, metavar="PATH",
                   help="write a step,wg,wave,pc,mnemonic,mask trace")
    p.add_argument("--stats", default=None, metavar="PATH",
                   help="write counters as JSON")
    p.add_argument("--dump", default=None, metavar="PATH",
                   help="write device memory to a file")
    p.add_argument("--dump-bytes", type=lambda s: int(s, 0), default=0)
    p.add_argument("--interleave", action="store_true",
                   help="co-schedule as many workgroups as occupancy allows")
    p.add_argument("--races", action="store_true",
                   help="enable the happens-before race detector")
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("validate", help="assemble and validate only")
    p.add_argument("file")
    _machine_arg(p)
    p.set_defaults(fn=_cmd_validate)

    p = sub.add_parser("fmt", help="canonical formatting to stdout")
    p.add_argument("file")
    p.set_defaults(fn=_cmd_fmt)

    p = sub.add_parser("occupancy", help="resident-wave arithmetic")
    _machine_arg(p)
    p.add_argument("--regs", type=int, default=32)
    p.add_argument("--scratch", type=lambda s: int(s, 0), default=0)
    p.add_argument("--wg", type=int, default=256,
                   help="threads per workgroup")
    p.add_argument("--sweep", action="store_true",
                   help="CSV sweep over register counts")
    p.set_defaults(fn=_cmd_occupancy)

    p = sub.add_parser("bench", help="run the kernel suite")
    p.add_argument("--machines", default="all",
                   help="'all', or comma list of presets / waveN customs")
    p.add_argument("--kernels", default=",".join(kernels.KERNELS))
    p.add_argument("--seeds", default="0")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(fn=_cmd_bench)

    p = sub.add_parser("litmus", help="message-passing handoff check")
    _machine_arg(p)
    p.add_argument("--unfenced", action="store_true",
                   help="drop the release/acquire fences")
    p.add_argument("--seeds", type=int, default=100)
    p.set_defaults(fn=_cmd_litmus)

    args = ap.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
