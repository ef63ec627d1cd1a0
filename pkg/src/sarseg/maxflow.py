"""Boykov-Kolmogorov augmenting-path max-flow on an explicit s-t network.

Non-terminal nodes are ``0..n-1``. Terminal capacities are stored per node
(source->node and node->sink); pairwise arcs are stored in sister pairs
``(2e, 2e+1)`` so that ``arc ^ 1`` is the reverse arc.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

_FREE, _SRC, _SNK = 0, 1, 2
_NONE, _TERMINAL, _ORPHAN = -1, -2, -3
_INF_DIST = 1 << 30


@numba.njit(cache=True)
def _bk_solve(n, first, adj, head, rcap, tr_cap):
    """Run BK on a residual graph; mutates ``rcap`` and ``tr_cap``.

    ``tr_cap[i] > 0`` is residual source->i capacity, ``< 0`` residual i->sink.
    Returns (flow added, tree labels).
    """
    tree = np.zeros(n, np.int8)
    parent = np.full(n, _NONE, np.int64)
    ts = np.zeros(n, np.int64)
    dist = np.zeros(n, np.int64)
    queue = np.empty(n + 1, np.int64)
    in_queue = np.zeros(n, np.bool_)
    qhead = 0
    qtail = 0
    qsize = n + 1
    orphans = np.empty(2 * n + 2, np.int64)
    time = 0
    flow = 0.0

    for i in range(n):
        if tr_cap[i] > 0:
            tree[i] = _SRC
        elif tr_cap[i] < 0:
            tree[i] = _SNK
        else:
            continue
        parent[i] = _TERMINAL
        dist[i] = 1
        queue[qtail] = i
        qtail = (qtail + 1) % qsize
        in_queue[i] = True

    current = -1
    while True:
        # pick an active node
        i = current
        if i < 0:
            while qhead != qtail:
                k = queue[qhead]
                qhead = (qhead + 1) % qsize
                if parent[k] != _NONE:
                    i = k
                    break
                in_queue[k] = False
            if i < 0:
                break
        current = -1

        # grow
        meet = -1
        if tree[i] == _SRC:
            for t in range(first[i], first[i + 1]):
                a = adj[t]
                if rcap[a] > 0:
                    j = head[a]
                    if parent[j] == _NONE:
                        tree[j] = _SRC
                        parent[j] = a ^ 1
                        ts[j] = ts[i]
                        dist[j] = dist[i] + 1
                        if not in_queue[j]:
                            queue[qtail] = j
                            qtail = (qtail + 1) % qsize
                            in_queue[j] = True
                    elif tree[j] == _SNK:
                        meet = a
                        break
                    elif ts[j] <= ts[i] and dist[j] > dist[i]:
                        parent[j] = a ^ 1
                        ts[j] = ts[i]
                        dist[j] = dist[i] + 1
        else:
            for t in range(first[i], first[i + 1]):
                a = adj[t]
                if rcap[a ^ 1] > 0:
                    j = head[a]
                    if parent[j] == _NONE:
                        tree[j] = _SNK
                        parent[j] = a ^ 1
                        ts[j] = ts[i]
                        dist[j] = dist[i] + 1
                        if not in_queue[j]:
                            queue[qtail] = j
                            qtail = (qtail + 1) % qsize
                            in_queue[j] = True
                    elif tree[j] == _SRC:
                        meet = a ^ 1
                        break
                    elif ts[j] <= ts[i] and dist[j] > dist[i]:
                        parent[j] = a ^ 1
                        ts[j] = ts[i]
                        dist[j] = dist[i] + 1

        time += 1
        if meet < 0:
            in_queue[i] = False
            continue
        current = i

        # augment along source-tree path, meet arc, sink-tree path
        s_node = head[meet ^ 1]
        t_node = head[meet]
        bottleneck = rcap[meet]
        k = s_node
        while parent[k] != _TERMINAL:
            p = parent[k]
            if rcap[p ^ 1] < bottleneck:
                bottleneck = rcap[p ^ 1]
            k = head[p]
        if tr_cap[k] < bottleneck:
            bottleneck = tr_cap[k]
        k = t_node
        while parent[k] != _TERMINAL:
            p = parent[k]
            if rcap[p] < bottleneck:
                bottleneck = rcap[p]
            k = head[p]
        if -tr_cap[k] < bottleneck:
            bottleneck = -tr_cap[k]

        rcap[meet ^ 1] += bottleneck
        rcap[meet] -= bottleneck
        n_orphans = 0
        k = s_node
        while parent[k] != _TERMINAL:
            p = parent[k]
            rcap[p] += bottleneck
            rcap[p ^ 1] -= bottleneck
            nxt = head[p]
            if rcap[p ^ 1] <= 0:
                parent[k] = _ORPHAN
                orphans[n_orphans] = k
                n_orphans += 1
            k = nxt
        tr_cap[k] -= bottleneck
        if tr_cap[k] <= 0:
            parent[k] = _ORPHAN
            orphans[n_orphans] = k
            n_orphans += 1
        k = t_node
        while parent[k] != _TERMINAL:
            p = parent[k]
            rcap[p ^ 1] += bottleneck
            rcap[p] -= bottleneck
            nxt = head[p]
            if rcap[p] <= 0:
                parent[k] = _ORPHAN
                orphans[n_orphans] = k
                n_orphans += 1
            k = nxt
        tr_cap[k] += bottleneck
        if tr_cap[k] >= 0:
            parent[k] = _ORPHAN
            orphans[n_orphans] = k
            n_orphans += 1
        flow += bottleneck

        # adoption (orphans processed FIFO; new orphans appended)
        o = 0
        while o < n_orphans:
            i2 = orphans[o]
            o += 1
            is_snk = tree[i2] == _SNK
            best_arc = _NONE
            best_d = _INF_DIST
            for t in range(first[i2], first[i2 + 1]):
                a0 = adj[t]
                residual = rcap[a0] if is_snk else rcap[a0 ^ 1]
                if residual <= 0:
                    continue
                j = head[a0]
                if tree[j] != tree[i2] or parent[j] == _NONE:
                    continue
                # walk to a terminal to validate origin
                d = 0
                k = j
                while True:
                    if ts[k] == time:
                        d += dist[k]
                        break
                    pa = parent[k]
                    d += 1
                    if pa == _TERMINAL:
                        ts[k] = time
                        dist[k] = 1
                        break
                    if pa == _ORPHAN:
                        d = _INF_DIST
                        break
                    k = head[pa]
                if d < _INF_DIST:
                    if d < best_d:
                        best_arc = a0
                        best_d = d
                    k = j
                    while ts[k] != time:
                        ts[k] = time
                        dist[k] = d
                        d -= 1
                        k = head[parent[k]]
            if best_arc != _NONE:
                parent[i2] = best_arc
                ts[i2] = time
                dist[i2] = best_d + 1
                continue
            for t in range(first[i2], first[i2 + 1]):
                a0 = adj[t]
                j = head[a0]
                if tree[j] != tree[i2] or parent[j] == _NONE:
                    continue
                residual = rcap[a0] if is_snk else rcap[a0 ^ 1]
                if residual > 0 and not in_queue[j]:
                    queue[qtail] = j
                    qtail = (qtail + 1) % qsize
                    in_queue[j] = True
                pa = parent[j]
                if pa != _TERMINAL and pa != _ORPHAN and head[pa] == i2:
                    parent[j] = _ORPHAN
                    orphans[n_orphans] = j
                    n_orphans += 1
            tree[i2] = _FREE
            parent[i2] = _NONE
            if i2 == current:
                in_queue[i2] = False
                current = -1
    return flow, tree


@dataclass
class MinCutResult:
    flow: float
    source_side: np.ndarray  # bool per non-terminal node

    def source_set(self) -> set:
        """Source-side node ids; the source itself is ``n``, the sink ``n + 1``."""
        n = len(self.source_side)
        return {int(k) for k in np.flatnonzero(self.source_side)} | {n}


class FlowNetwork:
    """s-t network over ``n`` nodes; source is ``n`` and sink is ``n + 1``."""

    def __init__(self, n: int):
        if n < 1:
            raise ValueError("network needs at least one node")
        self.n = n
        self.cap_source = np.zeros(n)
        self.cap_sink = np.zeros(n)
        self._u: list[np.ndarray] = []
        self._v: list[np.ndarray] = []
        self._cuv: list[np.ndarray] = []
        self._cvu: list[np.ndarray] = []

    @property
    def source(self) -> int:
        return self.n

    @property
    def sink(self) -> int:
        return self.n + 1

    def add_tedge(self, i, cap_source, cap_sink):
        """Add source->i and i->sink capacities (scalars or arrays)."""
        cs = np.asarray(cap_source, dtype=np.float64)
        ct = np.asarray(cap_sink, dtype=np.float64)
        if np.any(cs < 0) or np.any(ct < 0):
            raise ValueError("capacities must be nonnegative")
        np.add.at(self.cap_source, i, cs)
        np.add.at(self.cap_sink, i, ct)

    def add_edge(self, u, v, cap, rev_cap=0.0):
        """Add arcs u->v (``cap``) and v->u (``rev_cap``) between non-terminals."""
        u = np.atleast_1d(np.asarray(u, dtype=np.int64))
        v = np.atleast_1d(np.asarray(v, dtype=np.int64))
        cap = np.broadcast_to(np.asarray(cap, dtype=np.float64), u.shape)
        rev = np.broadcast_to(np.asarray(rev_cap, dtype=np.float64), u.shape)
        if np.any(cap < 0) or np.any(rev < 0):
            raise ValueError("capacities must be nonnegative")
        if np.any(u == v) or np.any((u < 0) | (u >= self.n) | (v < 0) | (v >= self.n)):
            raise ValueError("invalid arc endpoints")
        self._u.append(u)
        self._v.append(v)
        self._cuv.append(cap.copy())
        self._cvu.append(rev.copy())

    def add_arc(self, u: int, v: int, cap: float):
        """Add a single arc; either endpoint may be the source or the sink."""
        if u == self.source and v < self.n:
            self.add_tedge(v, cap, 0.0)
        elif v == self.sink and u < self.n:
            self.add_tedge(u, 0.0, cap)
        elif u < self.n and v < self.n:
            self.add_edge(u, v, cap, 0.0)
        elif u == self.source and v == self.sink:
            raise ValueError("direct source->sink arcs are not supported")
        else:
            raise ValueError("arcs into the source or out of the sink are not allowed")

    def _arrays(self):
        if self._u:
            u = np.concatenate(self._u)
            v = np.concatenate(self._v)
            cuv = np.concatenate(self._cuv)
            cvu = np.concatenate(self._cvu)
        else:
            u = v = np.zeros(0, np.int64)
            cuv = cvu = np.zeros(0)
        m = len(u)
        head = np.empty(2 * m, np.int64)
        head[0::2] = v
        head[1::2] = u
        rcap = np.empty(2 * m)
        rcap[0::2] = cuv
        rcap[1::2] = cvu
        tail = np.empty(2 * m, np.int64)
        tail[0::2] = u
        tail[1::2] = v
        order = np.argsort(tail, kind="stable")
        first = np.zeros(self.n + 1, np.int64)
        np.cumsum(np.bincount(tail, minlength=self.n), out=first[1:])
        return first, order.astype(np.int64), head, rcap

    def cut_capacity(self, source_side: np.ndarray) -> float:
        """Capacity of the cut whose source side is ``source_side`` (plus the source)."""
        s = np.asarray(source_side, dtype=bool)
        total = float(self.cap_source[~s].sum() + self.cap_sink[s].sum())
        for u, v, cuv, cvu in zip(self._u, self._v, self._cuv, self._cvu):
            total += float(cuv[s[u] & ~s[v]].sum() + cvu[s[v] & ~s[u]].sum())
        return total


def max_flow_min_cut(net: FlowNetwork) -> MinCutResult:
    first, adj, head, rcap = net._arrays()
    base = np.minimum(net.cap_source, net.cap_sink)
    tr_cap = net.cap_source - net.cap_sink
    flow, tree = _bk_solve(net.n, first, adj, head, rcap, tr_cap)
    return MinCutResult(float(base.sum() + flow), tree == _SRC)
