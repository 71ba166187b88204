"""Machine model: peak rates, bandwidths and cache sizes read from a key-value file."""

from __future__ import annotations

from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

DEFAULT_MACHINE = "icelake-8360y.machine"
VARIANTS = ("scalar", "batched", "batched_fma")


class MachineError(ValueError):
    pass


@dataclass(frozen=True)
class MachineModel:
    peak_scalar_flops: float
    peak_batched_flops: float
    peak_batched_fma_flops: float
    mem_bandwidth: float
    l2_bandwidth: float
    l1_bytes: int
    l2_bytes: int
    l3_bytes: int
    cores: int
    clock_hz: float
    bytes_per_statement: float = 8.0
    name: str = "machine"

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name != "name" and not v > 0:
                raise MachineError(f"{f.name} must be positive, got {v}")
        if self.peak_batched_flops < self.peak_scalar_flops:
            raise MachineError("batched peak must not be below the scalar peak")
        if self.peak_batched_fma_flops < self.peak_batched_flops:
            raise MachineError("batched FMA peak must not be below the batched peak")

    def peak(self, variant: str) -> float:
        if variant not in VARIANTS:
            raise MachineError(f"unknown peak variant {variant!r}; expected one of {VARIANTS}")
        return getattr(self, f"peak_{variant}_flops")

    @property
    def l3_per_core(self) -> int:
        """L3 share of one core: the capacity of an "L3-sized" single-core cache."""
        return self.l3_bytes // self.cores


_INT_KEYS = {"l1_bytes", "l2_bytes", "l3_bytes", "cores"}


def parse_machine(text: str, name: str = "machine") -> MachineModel:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    known = {f.name for f in fields(MachineModel)} - {"name"}
    vals: dict[str, float] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise MachineError(f"{name}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise MachineError(f"{name}:{lineno}: unknown key {key!r}")
        try:
            num = float(val)
        except ValueError:
            raise MachineError(f"{name}:{lineno}: {key} is not a number: {val!r}") from None
        vals[key] = int(num) if key in _INT_KEYS else num
    missing = known - set(vals) - {"bytes_per_statement"}
    if missing:
        raise MachineError(f"{name}: missing keys {sorted(missing)}")
    return MachineModel(name=name, **vals)


def load_machine(path: str | Path | None = None) -> MachineModel:
    if path is None:
        text = resources.files("mfgen.data").joinpath(DEFAULT_MACHINE).read_text()
        return parse_machine(text, DEFAULT_MACHINE)
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise MachineError(f"cannot read machine file {p}: {e}") from None
    return parse_machine(text, p.name)


__all__ = ["DEFAULT_MACHINE", "MachineError", "MachineModel", "VARIANTS", "load_machine", "parse_machine"]
