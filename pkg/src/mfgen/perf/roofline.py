"""Roofline prediction and DoF throughput."""

from __future__ import annotations

from dataclasses import dataclass

from ..ir.count import count_statements, innermost_element_loops
from ..ir.kernel import BatchBlock, Kernel, Loop, OptimizationSet, Scope
from ..loops import Affine
from .machine import MachineModel


@dataclass(frozen=True)
class PerfEstimate:
    flops: float
    bytes: float
    intensity: float
    peak: float
    bandwidth: float
    predicted_flops: float
    bound: str  # "memory" or "compute"
    variant: str
    mode: str  # "memory" or "l2"

    @property
    def time(self) -> float:
        return self.flops / self.predicted_flops if self.predicted_flops else 0.0


def default_variant(opts: OptimizationSet | str) -> str:
    """Peak used for a kernel: batched FMA when vectorized, scalar otherwise."""
    opts = OptimizationSet.parse(opts) if isinstance(opts, str) else opts
    return "batched_fma" if opts.V else "scalar"


def roofline(machine: MachineModel, flops: float, bytes_: float, variant: str = "scalar",
             mode: str = "memory", statements: float = 0.0) -> PerfEstimate:
    """min(peak, I * bandwidth) with I = flops / bytes.

    In "l2" mode the L2 bandwidth is used and ``statements`` times the
    machine's bytes-per-statement is added to the data bytes as the
    instruction volume.
    """
    if mode == "memory":
        bw = machine.mem_bandwidth
    elif mode == "l2":
        bw = machine.l2_bandwidth
        bytes_ = bytes_ + statements * machine.bytes_per_statement
    else:
        raise ValueError(f"unknown roofline mode {mode!r}")
    if not bytes_ > 0:
        raise ValueError("byte volume must be positive")
    peak = machine.peak(variant)
    ai = flops / bytes_
    mem = ai * bw
    return PerfEstimate(flops, bytes_, ai, peak, bw, min(peak, mem), "memory" if mem < peak else "compute",
                        variant, mode)


def dof_throughput(est: PerfEstimate, flops_per_dof: float) -> float:
    """Updated DoFs per second."""
    if not flops_per_dof > 0:
        raise ValueError("FLOPs per DoF must be positive")
    return est.predicted_flops / flops_per_dof


def executed_statements(k: Kernel, level: int, n_macros: int = 1) -> int:
    """Instruction-volume proxy: statements of each innermost element loop times its trips."""
    n = 2**level
    total = 0
    for chain in _element_chains(k.body, []):
        loop = chain[-1]
        total += count_statements(k.clone(body=list(loop.body))) * _trips(chain, n, {})
    return total * n_macros


def _element_chains(body: list, outer: list) -> list[list[Loop]]:
    out = []
    for s in body:
        if isinstance(s, Loop) and s.role == "element":
            if innermost_element_loops([s]) == [s]:
                out.append(outer + [s])
            else:
                out += _element_chains(s.body, outer + [s])
        elif isinstance(s, (Scope, BatchBlock)):
            out += _element_chains(s.body, outer)
    return out


def _bound(b, n: int, env: dict) -> int:
    return b.eval(n, env) if isinstance(b, Affine) else int(b)


def _trips(chain: list[Loop], n: int, env: dict) -> int:
    l = chain[0]
    lo, hi = max(_bound(l.lo, n, env), 0), _bound(l.hi, n, env)
    if len(chain) == 1:
        return max(hi - lo, 0)
    return sum(_trips(chain[1:], n, {**env, l.counter: v}) for v in range(lo, hi))


__all__ = ["PerfEstimate", "default_variant", "dof_throughput", "executed_statements", "roofline"]
