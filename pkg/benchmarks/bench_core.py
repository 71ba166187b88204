"""Compare the compiled core with the pure-Python fallback on a kernel trace.

Run: python3 benchmarks/bench_core.py [--form P1] [--level 3]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from mfgen import _pycore
from mfgen.forms import get_form
from mfgen.ir.passes import generate
from mfgen.mesh import cube6
from mfgen.perf.memory import ItemStream
from mfgen.perf.trace import full_trace, trace_plan

try:
    from mfgen import _core
except ImportError:
    _core = None


def _lru(mod, lines, writes, n_lines, cap):
    c = mod.LRUCache(n_lines, cap)
    t = time.perf_counter()
    c.access(lines, writes)
    c.flush()
    return time.perf_counter() - t, (c.misses, c.writebacks)


def _tails(mod, st, items, iters, caps):
    r = mod.ReuseTails(st.n_items, st.n_iters, st.occ, st.traffic, caps)
    t = time.perf_counter()
    r.feed(items, iters)
    return time.perf_counter() - t, tuple(np.asarray(r.charges).tolist())


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--form", default="P1")
    ap.add_argument("--level", type=int, default=3)
    ap.add_argument("--opts", default="SVI")
    args = ap.parse_args()
    form, mesh = get_form(args.form), cube6()
    plan = trace_plan(generate(form, args.opts), mesh, args.level)
    addr, w = full_trace(plan)
    lines = np.ascontiguousarray(addr // 64)
    writes = np.ascontiguousarray(w, np.uint8)
    cap = 8192 // 64
    st = ItemStream(plan.kernel.strategy, form, mesh, args.level)
    parts = list(st.chunks())
    items = np.ascontiguousarray(np.concatenate([p[0] for p in parts]), np.int64)
    iters = np.ascontiguousarray(np.concatenate([p[1] for p in parts]), np.int64)
    caps = np.array([0.0, 4096.0, 65536.0, np.inf])
    print(f"{args.form} {args.opts} level {args.level}: {len(lines)} line accesses, {len(items)} item accesses")
    print(f"{'kernel':<12}{'backend':<10}{'seconds':>10}{'speedup':>10}  result")
    for name, fn, data in (("lru", _lru, (lines, writes, plan.n_lines, cap)),
                           ("reuse-tails", _tails, (st, items, iters, caps))):
        tp, rp = fn(_pycore, *data)
        print(f"{name:<12}{'python':<10}{tp:>10.4f}{1.0:>10.1f}  {rp}")
        if _core is not None:
            tc, rc = fn(_core, *data)
            tag = "match" if rc == rp else "MISMATCH"
            print(f"{name:<12}{'compiled':<10}{tc:>10.4f}{tp / tc:>10.1f}  {rc} {tag}")
        else:
            print(f"{name:<12}{'compiled':<10}{'n/a':>10}  extension not built")


if __name__ == "__main__":
    main()
