"""Machine descriptors: the per-vendor knobs a portable kernel may depend on.

A descriptor is a flat record of the execution parameters that survive across
GPU vendors: lockstep width, register budget, scratchpad and register file
sizes, barrier count, and optional capabilities.  Six presets cover the
shipping architectures; arbitrary descriptors load from key=value text files.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

WAVE_WIDTHS = (8, 16, 32, 64)


class MachineError(ValueError):
    pass


@dataclass(frozen=True)
class MachineDescriptor:
    name: str
    wave_width: int  # threads per lockstep group
    max_regs: int  # per-thread 32-bit register cap
    scratchpad_bytes: int  # workgroup-shared scratch memory
    regfile_bytes: int  # register file backing all resident waves
    reg_width: int = 4  # bytes per register; fixed at 4
    max_workgroup: int = 1024
    named_barriers: int = 1
    has_fp64: bool = False
    has_bf16: bool = False
    has_cluster: bool = False
    matrix_tiles: tuple[tuple[int, int, int], ...] = ()
    bank_count: int = 0  # 0 means "default to wave_width"
    bank_width: int = 0  # 0 means "default to reg_width"

    def __post_init__(self):
        if self.bank_count == 0:
            object.__setattr__(self, "bank_count", self.wave_width)
        if self.bank_width == 0:
            object.__setattr__(self, "bank_width", self.reg_width)
        if self.wave_width not in WAVE_WIDTHS:
            raise MachineError("wave width must be a power of two in [8,64]")
        if self.reg_width != 4:
            raise MachineError("register width must be 4 bytes")
        if not 1 <= self.max_regs <= 256:
            raise MachineError("register cap must be in [1,256]")
        if self.scratchpad_bytes < 0 or self.regfile_bytes <= 0:
            raise MachineError("memory sizes must be positive")
        if not self.wave_width <= self.max_workgroup <= 1024:
            raise MachineError("max workgroup must be in [wave_width,1024]")
        if self.named_barriers < 1:
            raise MachineError("at least one named barrier is required")
        if self.bank_count != self.wave_width:
            raise MachineError("bank count must equal wave width")
        if self.bank_width != self.reg_width:
            raise MachineError("bank width must equal register width")
        for tile in self.matrix_tiles:
            if len(tile) != 3 or any(d < 1 for d in tile):
                raise MachineError(f"malformed matrix tile {tile!r}")


@dataclass(frozen=True)
class OccupancyResult:
    resident_waves: int
    limiting_resource: str  # "registers" | "scratchpad" | "none"


def occupancy(
    m: MachineDescriptor,
    regs_used: int,
    scratch_used: int = 0,
    workgroup_size: int = 256,
) -> OccupancyResult:
    """Resident waves per core for a kernel with the given resource usage.

    The register file bound is regfile // (regs_used * wave_width * reg_width);
    when the kernel uses scratchpad, workgroups additionally compete for it and
    the final count is the smaller bound.  "none" is reserved for a hardware
    wave cap, which no current descriptor models.
    """
    if regs_used < 1:
        raise MachineError("register usage must be at least 1")
    if regs_used > m.max_regs:
        raise MachineError(
            f"kernel exceeds register budget: {regs_used} > {m.max_regs}"
        )
    if scratch_used < 0 or workgroup_size < 1:
        raise MachineError("scratch and workgroup size must be non-negative")
    per_wave = regs_used * m.wave_width * m.reg_width
    reg_bound = m.regfile_bytes // per_wave
    if scratch_used == 0:
        return OccupancyResult(reg_bound, "registers")
    if scratch_used > m.scratchpad_bytes:
        raise MachineError(
            f"kernel exceeds scratchpad: {scratch_used} > {m.scratchpad_bytes}"
        )
    waves_per_wg = -(-workgroup_size // m.wave_width)
    scratch_bound = (m.scratchpad_bytes // scratch_used) * waves_per_wg
    if scratch_bound < reg_bound:
        return OccupancyResult(scratch_bound, "scratchpad")
    return OccupancyResult(reg_bound, "registers")


# Presets.  Sizes follow vendor documentation at the granularity of one core:
# one SM (nvidia), one WGP/CU SIMD (amd), one Xe-core (intel), one GPU core
# (apple).  Matrix-capable machines expose a single opaque 8x8x8 tile shape.
_PRESETS = {
    "nvidia": MachineDescriptor(
        name="nvidia",
        wave_width=32,
        max_regs=255,
        scratchpad_bytes=228 * 1024,
        regfile_bytes=256 * 1024,
        named_barriers=16,
        has_fp64=True,
        has_bf16=True,
        has_cluster=True,
        matrix_tiles=((8, 8, 8),),
    ),
    "amd-rdna": MachineDescriptor(
        name="amd-rdna",
        wave_width=32,
        max_regs=256,
        scratchpad_bytes=128 * 1024,
        regfile_bytes=128 * 1024,
        named_barriers=1,
        has_fp64=True,
        has_bf16=True,
        matrix_tiles=((8, 8, 8),),
    ),
    "amd-cdna": MachineDescriptor(
        name="amd-cdna",
        wave_width=64,
        max_regs=256,
        scratchpad_bytes=128 * 1024,
        regfile_bytes=128 * 1024,
        named_barriers=32,
        has_fp64=True,
        has_bf16=True,
        matrix_tiles=((8, 8, 8),),
    ),
    "intel-xehpg": MachineDescriptor(
        name="intel-xehpg",
        wave_width=16,
        max_regs=128,
        scratchpad_bytes=512 * 1024,
        regfile_bytes=128 * 1024,
        named_barriers=1,
        has_fp64=False,
        has_bf16=True,
        matrix_tiles=((8, 8, 8),),
    ),
    "intel-xehpc": MachineDescriptor(
        name="intel-xehpc",
        wave_width=16,
        max_regs=256,
        scratchpad_bytes=512 * 1024,
        regfile_bytes=256 * 1024,
        named_barriers=1,
        has_fp64=True,
        has_bf16=True,
        matrix_tiles=((8, 8, 8),),
    ),
    "apple": MachineDescriptor(
        name="apple",
        wave_width=32,
        max_regs=128,
        scratchpad_bytes=60 * 1024,
        regfile_bytes=208 * 1024,
        named_barriers=1,
        has_fp64=False,
        has_bf16=False,
        matrix_tiles=(),
    ),
}


def preset_names() -> list[str]:
    return sorted(_PRESETS)


def preset(name: str) -> MachineDescriptor:
    try:
        return _PRESETS[name]
    except KeyError:
        raise MachineError(
            f"unknown preset '{name}'; valid presets: {', '.join(preset_names())}"
        ) from None


_REQUIRED = ("wave_width", "max_regs", "scratchpad_bytes", "regfile_bytes")
_BOOL_FIELDS = ("has_fp64", "has_bf16", "has_cluster")
_INT_FIELDS = (
    "wave_width",
    "max_regs",
    "scratchpad_bytes",
    "regfile_bytes",
    "reg_width",
    "max_workgroup",
    "named_barriers",
    "bank_count",
    "bank_width",
)


def _parse_tiles(text: str) -> tuple[tuple[int, int, int], ...]:
    if not text:
        return ()
    tiles = []
    for part in text.split(","):
        dims = part.strip().split("x")
        if len(dims) != 3 or not all(d.isdigit() for d in dims):
            raise MachineError(f"malformed matrix tile '{part.strip()}'")
        tiles.append(tuple(int(d) for d in dims))
    return tuple(tiles)


def load_descriptor(text: str) -> MachineDescriptor:
    """Parse a descriptor from key=value lines; '#' starts a comment.

    Keys match the MachineDescriptor field names.  Omitted bank_count and
    bank_width default to wave_width and reg_width.
    """
    known = {f.name for f in fields(MachineDescriptor)}
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise MachineError(f"line {lineno}: expected key=value, got '{line}'")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in known:
            raise MachineError(f"line {lineno}: unknown key '{key}'")
        if key in values:
            raise MachineError(f"line {lineno}: duplicate key '{key}'")
        if key in _INT_FIELDS:
            try:
                values[key] = int(val, 0)
            except ValueError:
                raise MachineError(
                    f"line {lineno}: '{key}' needs an integer, got '{val}'"
                ) from None
        elif key in _BOOL_FIELDS:
            if val not in ("true", "false"):
                raise MachineError(f"line {lineno}: '{key}' must be true or false")
            values[key] = val == "true"
        elif key == "matrix_tiles":
            values[key] = _parse_tiles(val)
        else:
            values[key] = val
    for key in _REQUIRED:
        if key not in values:
            raise MachineError(f"missing required key '{key}'")
    values.setdefault("name", "custom")
    return MachineDescriptor(**values)


def descriptor_to_text(m: MachineDescriptor) -> str:
    """Serialize so that load_descriptor(descriptor_to_text(m)) == m."""
    lines = []
    for f in fields(m):
        v = getattr(m, f.name)
        if f.name == "matrix_tiles":
            v = ",".join("x".join(str(d) for d in t) for t in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{f.name}={v}")
    return "\n".join(lines) + "\n"


def custom_wave_machine(wave_width: int) -> MachineDescriptor:
    """A generous descriptor used to study wave-width sensitivity alone."""
    return MachineDescriptor(
        name=f"custom-w{wave_width}",
        wave_width=wave_width,
        max_regs=256,
        scratchpad_bytes=128 * 1024,
        regfile_bytes=256 * 1024,
        named_barriers=16,
        has_fp64=True,
        has_bf16=True,
        matrix_tiles=((8, 8, 8),),
    )


def resolve_machine(spec: str) -> MachineDescriptor:
    """Preset name, or a path to a descriptor file when not a preset."""
    if spec in _PRESETS:
        return _PRESETS[spec]
    if spec.endswith(".mcfg"):
        with open(spec, "r", encoding="utf-8") as fh:
            return load_descriptor(fh.read())
    return preset(spec)  # raises with the list of valid names
