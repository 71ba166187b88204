# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: fully associative LRU cache and reuse-tail accounting."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport int64_t, uint8_t

cnp.import_array()


cdef class LRUCache:
    """Fully associative LRU over integer line ids, write-allocate and write-back."""

    cdef int64_t[:] prev
    cdef int64_t[:] nxt
    cdef uint8_t[:] present
    cdef uint8_t[:] dirty
    cdef int64_t head, tail, size
    cdef public int64_t capacity
    cdef public int64_t misses
    cdef public int64_t writebacks
    cdef public int64_t accesses

    def __init__(self, int64_t n_lines, int64_t capacity_lines):
        if capacity_lines < 1:
            raise ValueError("capacity must hold at least one line")
        self.prev = np.full(n_lines, -1, dtype=np.int64)
        self.nxt = np.full(n_lines, -1, dtype=np.int64)
        self.present = np.zeros(n_lines, dtype=np.uint8)
        self.dirty = np.zeros(n_lines, dtype=np.uint8)
        self.head = -1
        self.tail = -1
        self.size = 0
        self.capacity = capacity_lines
        self.misses = 0
        self.writebacks = 0
        self.accesses = 0

    cdef inline void _unlink(self, int64_t l):
        cdef int64_t p = self.prev[l], q = self.nxt[l]
        if p >= 0:
            self.nxt[p] = q
        else:
            self.head = q
        if q >= 0:
            self.prev[q] = p
        else:
            self.tail = p
        self.prev[l] = -1
        self.nxt[l] = -1

    cdef inline void _push_front(self, int64_t l):
        self.prev[l] = -1
        self.nxt[l] = self.head
        if self.head >= 0:
            self.prev[self.head] = l
        self.head = l
        if self.tail < 0:
            self.tail = l

    def access(self, const int64_t[:] lines, const uint8_t[:] writes):
        cdef Py_ssize_t i, n = lines.shape[0]
        cdef int64_t l, v
        for i in range(n):
            l = lines[i]
            if self.present[l]:
                if self.head != l:
                    self._unlink(l)
                    self._push_front(l)
            else:
                self.misses += 1
                if self.size >= self.capacity:
                    v = self.tail
                    self._unlink(v)
                    self.present[v] = 0
                    if self.dirty[v]:
                        self.writebacks += 1
                        self.dirty[v] = 0
                    self.size -= 1
                self._push_front(l)
                self.present[l] = 1
                self.size += 1
            if writes[i]:
                self.dirty[l] = 1
        self.accesses += n

    def flush(self):
        """Write back every dirty resident line; returns the number written."""
        cdef int64_t l = self.head, c = 0
        while l >= 0:
            if self.dirty[l]:
                c += 1
                self.dirty[l] = 0
            l = self.nxt[l]
        self.writebacks += c
        return c


cdef class ReuseTails:
    """Per-access reuse tails at iteration granularity.

    The tail of an access in iteration i to an item last touched in
    iteration j < i is the occupancy of all distinct items touched in
    iterations strictly between j and i. An access is charged its traffic
    bytes for every capacity not exceeding its tail; first touches are
    always charged, repeats within one iteration have tail 0.
    """

    cdef int64_t[:] last
    cdef int64_t[:] stamp
    cdef double[:] tree
    cdef double[:] occ
    cdef double[:] traffic
    cdef double[:] caps
    cdef public object charges
    cdef double[:] ch
    cdef int64_t n_tree

    def __init__(self, int64_t n_items, int64_t n_iters, occ, traffic, capacities):
        self.last = np.full(n_items, -1, dtype=np.int64)
        self.stamp = np.full(n_items, -1, dtype=np.int64)
        self.tree = np.zeros(n_iters + 1, dtype=np.float64)
        self.n_tree = n_iters + 1
        self.occ = np.ascontiguousarray(occ, dtype=np.float64)
        self.traffic = np.ascontiguousarray(traffic, dtype=np.float64)
        self.caps = np.ascontiguousarray(capacities, dtype=np.float64)
        self.charges = np.zeros(len(capacities), dtype=np.float64)
        self.ch = self.charges

    cdef inline void _add(self, int64_t pos, double v):
        cdef int64_t i = pos + 1
        while i < self.n_tree:
            self.tree[i] += v
            i += i & (-i)

    cdef inline double _prefix(self, int64_t pos):
        # sum over positions 0..pos inclusive
        cdef int64_t i = pos + 1
        cdef double s = 0.0
        while i > 0:
            s += self.tree[i]
            i -= i & (-i)
        return s

    def feed(self, const int64_t[:] items, const int64_t[:] iters, double[:] out_tails=None):
        """Process accesses grouped by nondecreasing iteration index."""
        cdef Py_ssize_t n = items.shape[0], a = 0, b, k, c
        cdef Py_ssize_t nc = self.caps.shape[0]
        cdef int64_t it, item, j
        cdef double t, w
        cdef bint rec = out_tails is not None
        while a < n:
            it = iters[a]
            b = a
            while b < n and iters[b] == it:
                b += 1
            # queries first, so updates of this iteration do not shorten other tails
            for k in range(a, b):
                item = items[k]
                w = self.traffic[item]
                if self.stamp[item] == it:
                    t = 0.0
                else:
                    self.stamp[item] = it
                    j = self.last[item]
                    if j < 0:
                        t = -1.0
                    else:
                        t = self._prefix(it - 1) - self._prefix(j)
                if rec:
                    out_tails[k] = t
                for c in range(nc):
                    if t < 0.0 or t >= self.caps[c]:
                        self.ch[c] += w
            for k in range(a, b):
                item = items[k]
                j = self.last[item]
                if j != it:
                    if j >= 0:
                        self._add(j, -self.occ[item])
                    self._add(it, self.occ[item])
                    self.last[item] = it
            a = b
