"""Memory-traffic bounds, layer conditions, cache simulation and roofline model."""

from .machine import DEFAULT_MACHINE, MachineError, MachineModel, load_machine, parse_machine
from .memory import (
    INF,
    LayerConditionResult,
    MemoryReport,
    ReuseGroup,
    cached_fraction,
    layer_condition_estimate,
    memory_bounds,
    simulate_cache,
    simulate_kernel,
)
from .roofline import PerfEstimate, default_variant, dof_throughput, executed_statements, roofline
from .trace import iter_trace, trace_plan

__all__ = [
    "DEFAULT_MACHINE",
    "INF",
    "LayerConditionResult",
    "MachineError",
    "MachineModel",
    "MemoryReport",
    "PerfEstimate",
    "ReuseGroup",
    "cached_fraction",
    "default_variant",
    "dof_throughput",
    "executed_statements",
    "iter_trace",
    "layer_condition_estimate",
    "load_machine",
    "memory_bounds",
    "parse_machine",
    "roofline",
    "simulate_cache",
    "simulate_kernel",
    "trace_plan",
]
