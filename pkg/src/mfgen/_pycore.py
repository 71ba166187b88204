"""Pure-Python fallback of the compiled core (same classes and semantics, much slower)."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np


class LRUCache:
    """Fully associative LRU over integer line ids, write-allocate and write-back."""

    def __init__(self, n_lines: int, capacity_lines: int):
        if capacity_lines < 1:
            raise ValueError("capacity must hold at least one line")
        self.capacity = int(capacity_lines)
        self.lines: OrderedDict[int, bool] = OrderedDict()  # line -> dirty, most recent last
        self.misses = 0
        self.writebacks = 0
        self.accesses = 0

    def access(self, lines, writes) -> None:
        cache = self.lines
        for l, w in zip(np.asarray(lines).tolist(), np.asarray(writes).tolist()):
            if l in cache:
                cache.move_to_end(l)
            else:
                self.misses += 1
                if len(cache) >= self.capacity:
                    _, d = cache.popitem(last=False)
                    if d:
                        self.writebacks += 1
                cache[l] = False
            if w:
                cache[l] = True
        self.accesses += len(lines)

    def flush(self) -> int:
        c = 0
        for l, d in self.lines.items():
            if d:
                c += 1
                self.lines[l] = False
        self.writebacks += c
        return c


class ReuseTails:
    """Per-access reuse tails at iteration granularity (see the compiled version)."""

    def __init__(self, n_items: int, n_iters: int, occ, traffic, capacities):
        self.last = np.full(n_items, -1, dtype=np.int64)
        self.stamp = np.full(n_items, -1, dtype=np.int64)
        self.tree = np.zeros(n_iters + 1)
        self.occ = np.asarray(occ, dtype=float)
        self.traffic = np.asarray(traffic, dtype=float)
        self.caps = np.asarray(capacities, dtype=float)
        self.charges = np.zeros(len(self.caps))

    def _add(self, pos: int, v: float) -> None:
        i = pos + 1
        n = len(self.tree)
        while i < n:
            self.tree[i] += v
            i += i & (-i)

    def _prefix(self, pos: int) -> float:
        i = pos + 1
        s = 0.0
        while i > 0:
            s += self.tree[i]
            i -= i & (-i)
        return s

    def feed(self, items, iters, out_tails=None) -> None:
        items = np.asarray(items).tolist()
        iters = np.asarray(iters).tolist()
        n = len(items)
        a = 0
        while a < n:
            it = iters[a]
            b = a
            while b < n and iters[b] == it:
                b += 1
            for k in range(a, b):
                item = items[k]
                if self.stamp[item] == it:
                    t = 0.0
                else:
                    self.stamp[item] = it
                    j = self.last[item]
                    t = -1.0 if j < 0 else self._prefix(it - 1) - self._prefix(j)
                if out_tails is not None:
                    out_tails[k] = t
                hit = (t < 0) | (t >= self.caps)
                self.charges[hit] += self.traffic[item]
            for k in range(a, b):
                item = items[k]
                j = self.last[item]
                if j != it:
                    if j >= 0:
                        self._add(j, -self.occ[item])
                    self._add(it, self.occ[item])
                    self.last[item] = it
            a = b
