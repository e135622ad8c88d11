"""Portable wave-level kernel simulator.

A small textual instruction set, an assembler with positioned diagnostics,
a deterministic functional simulator with structural cost counters, and a
benchmark suite that runs the same kernels across machine descriptors with
different wave widths.
"""
from .machine import (MachineDescriptor, OccupancyResult, occupancy, preset,
                      preset_names, load_descriptor, descriptor_to_text,
                      custom_wave_machine, resolve_machine)
from .isa import Program, ValidationIssue, validate_program
from .asm import parse_program, format_program, Diagnostic
from .vm import (LaunchConfig, ExecResult, ExecStats, Trap, launch,
                 eval_shuffle, eval_atomic, count_bank_conflicts)
from .kernels import (KERNELS, VARIANTS, build_kernel, run_kernel,
                      run_benchmark, run_litmus)

__version__ = "0.1.0"

__all__ = [
    "MachineDescriptor", "OccupancyResult", "occupancy", "preset",
    "preset_names", "load_descriptor", "descriptor_to_text",
    "custom_wave_machine", "resolve_machine",
    "Program", "ValidationIssue", "validate_program",
    "parse_program", "format_program", "Diagnostic",
    "LaunchConfig", "ExecResult", "ExecStats", "Trap", "launch",
    "eval_shuffle", "eval_atomic", "count_bank_conflicts",
    "KERNELS", "VARIANTS", "build_kernel", "run_kernel", "run_benchmark",
    "run_litmus",
    "__version__",
]
