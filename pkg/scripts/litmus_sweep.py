#!/usr/bin/env python3
"""Fenced vs unfenced message-passing handoff, swept over every preset.

The fenced version must never be flagged by the race detector; the
unfenced version must always be.  Exits nonzero if either expectation
breaks anywhere.
"""
import argparse
import pathlib
import sys

try:
    from uvgpu.kernels import run_litmus
    from uvgpu.machine import preset, preset_names
except ImportError:
    sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1]
                           / "src"))
    from uvgpu.kernels import run_litmus
    from uvgpu.machine import preset, preset_names


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=200,
                    help="scheduler seeds per configuration")
    args = ap.parse_args()

    failures = 0
    for name in preset_names():
        m = preset(name)
        for fenced in (True, False):
            out = run_litmus(m, fenced=fenced, seeds=args.seeds)
            kind = "fenced" if fenced else "unfenced"
            verdict = "ok" if out.expectation_met else "UNEXPECTED"
            failures += not out.expectation_met
            print(f"{name:12s} {kind:9s} flagged {out.flagged:4d}/{out.seeds}"
                  f"  values {sorted(out.values_seen)}  {verdict}")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
