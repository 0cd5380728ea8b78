"""
Leiden community detection on directed, weighted graphs with a size cap.

Two quality functions are supported, both written as an unnormalised sum
over communities ``c``:

* directed modularity: ``H = sum_c [w_in(c) - gamma * K_out(c) * K_in(c) / m]``,
  reported as ``H / m``;
* directed CPM: ``H = sum_c [w_in(c) - gamma * n_c * (n_c - 1)]``, where
  ``n_c * (n_c - 1)`` counts ordered node pairs.

``w_in(c)`` is the total weight of edges with both ends in ``c`` (self-loops
of aggregated nodes included), ``K_out``/``K_in`` are summed out/in
strengths, ``n_c`` counts original nodes and ``m`` is the total edge weight.

The gain of moving a node ``v`` (strengths ``ko``, ``ki``, size ``s``) into a
community ``C`` that does not contain it is::

    link(v, C) - gamma/m * (ko * K_in(C) + ki * K_out(C))     # modularity
    link(v, C) - 2 * gamma * s * n_C                          # CPM

where ``link`` sums edge weights in both directions.  Everything below is
written against that single expression.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field

import numpy as np

MODULARITY = "modularity"
CPM = "cpm"
DEFAULT_RESTARTS = 2


class WeightedDigraph:
    """Integer-indexed directed graph; parallel edges are summed on construction."""

    def __init__(
        self,
        n: int,
        src: np.ndarray,
        dst: np.ndarray,
        weight: np.ndarray,
        size: np.ndarray | None = None,
    ):
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        weight = np.asarray(weight, dtype=np.float64)
        self.n = int(n)
        if len(src):
            key = src * self.n + dst
            uniq, inv = np.unique(key, return_inverse=True)
            w = np.bincount(inv, weights=weight)
            src, dst = uniq // self.n, uniq % self.n
            weight = w
        self.src, self.dst, self.weight = src, dst, weight
        self.size = np.ones(self.n, dtype=np.int64) if size is None else np.asarray(size, dtype=np.int64)
        self.total = float(weight.sum())
        self.k_out = np.bincount(src, weights=weight, minlength=self.n)
        self.k_in = np.bincount(dst, weights=weight, minlength=self.n)
        loop = src == dst
        self.self_loop = np.bincount(src[loop], weights=weight[loop], minlength=self.n)

        # symmetric neighbour lists: w(u->v) + w(v->u), no self-loops
        nbrs: list[list[tuple[int, float]]] = [[] for _ in range(self.n)]
        off = ~loop
        if off.any():
            a, b, w = src[off], dst[off], weight[off]
            lo, hi = np.minimum(a, b), np.maximum(a, b)
            key = lo * self.n + hi
            uniq, inv = np.unique(key, return_inverse=True)
            ws = np.bincount(inv, weights=w)
            for k, wv in zip(uniq.tolist(), ws.tolist()):
                u, v = divmod(k, self.n)
                nbrs[u].append((v, wv))
                nbrs[v].append((u, wv))
        self.nbrs = nbrs

    @property
    def n_edges(self) -> int:
        return len(self.src)

    def aggregate(self, membership: np.ndarray) -> "WeightedDigraph":
        """Collapse each community into one node; ids must already be 0..k-1."""
        k = int(membership.max()) + 1 if self.n else 0
        size = np.bincount(membership, weights=self.size, minlength=k).astype(np.int64)
        return WeightedDigraph(k, membership[self.src], membership[self.dst], self.weight, size)


@dataclass
class _Coefficients:
    a: float  # multiplies ko*K_in + ki*K_out
    b: float  # multiplies s*n_C
    eps: float


def _coefficients(graph: WeightedDigraph, kind: str, resolution: float) -> _Coefficients:
    if kind == MODULARITY:
        a = resolution / graph.total if graph.total > 0 else 0.0
        return _Coefficients(a, 0.0, 1e-12 * max(1.0, graph.total))
    if kind == CPM:
        return _Coefficients(0.0, 2.0 * resolution, 1e-12 * max(1.0, graph.total))
    raise ValueError(f"unknown quality function {kind!r}")


def quality_value(
    graph: WeightedDigraph, membership: np.ndarray, kind: str = MODULARITY, resolution: float = 1.0
) -> float:
    """Quality of ``membership`` on ``graph`` (modularity normalised by ``m``)."""
    membership = np.asarray(membership)
    if graph.n == 0:
        return 0.0
    labels, comm = np.unique(membership, return_inverse=True)
    k = len(labels)
    same = comm[graph.src] == comm[graph.dst]
    w_in = float(graph.weight[same].sum())
    if kind == MODULARITY:
        if graph.total == 0:
            return 0.0
        kout = np.bincount(comm, weights=graph.k_out, minlength=k)
        kin = np.bincount(comm, weights=graph.k_in, minlength=k)
        h = w_in - resolution * float(np.dot(kout, kin)) / graph.total
        return h / graph.total
    if kind == CPM:
        nc = np.bincount(comm, weights=graph.size, minlength=k)
        return w_in - resolution * float(np.dot(nc, nc - 1))
    raise ValueError(f"unknown quality function {kind!r}")


@dataclass
class LeidenResult:
    membership: np.ndarray
    quality: float
    iterations: int
    converged: bool
    trace: list[tuple[str, int, float]] = field(default_factory=list)


def _relabel(membership: np.ndarray) -> np.ndarray:
    """Renumber communities 0..k-1 in order of their lowest node index."""
    membership = np.asarray(membership)
    _, first, inv = np.unique(membership, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    return rank[inv].astype(np.int64)


def _local_move(
    g: WeightedDigraph,
    comm: np.ndarray,
    co: _Coefficients,
    cap: int | None,
    rng: np.random.Generator,
) -> tuple[np.ndarray, int]:
    n = g.n
    comm = comm.copy()
    kout, kin, size = g.k_out.tolist(), g.k_in.tolist(), g.size.tolist()
    Kout = np.bincount(comm, weights=g.k_out, minlength=n).tolist()
    Kin = np.bincount(comm, weights=g.k_in, minlength=n).tolist()
    N = np.bincount(comm, weights=g.size, minlength=n).astype(np.int64).tolist()
    cnt = np.bincount(comm, minlength=n).tolist()
    empty = [c for c in range(n) if cnt[c] == 0]
    heapq.heapify(empty)
    a, b, eps = co.a, co.b, co.eps
    cm = comm.tolist()
    nbrs = g.nbrs

    queue = deque(rng.permutation(n).tolist())
    queued = [True] * n
    moves = 0
    while queue:
        v = queue.popleft()
        queued[v] = False
        cv = cm[v]
        links: dict[int, float] = {}
        for u, w in nbrs[v]:
            cu = cm[u]
            links[cu] = links.get(cu, 0.0) + w
        ko, ki, sv = kout[v], kin[v], size[v]
        Kout[cv] -= ko
        Kin[cv] -= ki
        N[cv] -= sv
        cnt[cv] -= 1

        stay = links.get(cv, 0.0) - a * (ko * Kin[cv] + ki * Kout[cv]) - b * sv * N[cv]
        best, best_gain = -1, -np.inf
        for c in sorted(links):
            if c == cv or (cap is not None and N[c] + sv > cap):
                continue
            gain = links[c] - a * (ko * Kin[c] + ki * Kout[c]) - b * sv * N[c]
            if gain > best_gain:
                best, best_gain = c, gain
        if cnt[cv] > 0 and 0.0 > best_gain and empty:
            best, best_gain = empty[0], 0.0

        if best >= 0 and best_gain > stay + eps:
            if cnt[best] == 0:
                heapq.heappop(empty)
            target = best
            moves += 1
        else:
            target = cv
        Kout[target] += ko
        Kin[target] += ki
        N[target] += sv
        cnt[target] += 1
        if target != cv:
            cm[v] = target
            if cnt[cv] == 0:
                heapq.heappush(empty, cv)
            for u, _ in nbrs[v]:
                if not queued[u] and cm[u] != target:
                    queued[u] = True
                    queue.append(u)
    return np.asarray(cm, dtype=np.int64), moves


def _refine(
    g: WeightedDigraph,
    part: np.ndarray,
    co: _Coefficients,
    rng: np.random.Generator,
) -> np.ndarray:
    """Merge singletons greedily inside each community of ``part``."""
    n = g.n
    a, b = co.a, co.b
    pm = part.tolist()
    kout, kin, size = g.k_out.tolist(), g.k_in.tolist(), g.size.tolist()
    Cout = np.bincount(part, weights=g.k_out, minlength=n).tolist()
    Cin = np.bincount(part, weights=g.k_in, minlength=n).tolist()
    CN = np.bincount(part, weights=g.size, minlength=n).astype(np.int64).tolist()

    ref = list(range(n))
    Rout, Rin, RN = list(kout), list(kin), list(size)
    Rcnt = [1] * n
    ext = [0.0] * n
    for v in range(n):
        pv = pm[v]
        ext[v] = sum(w for u, w in g.nbrs[v] if pm[u] == pv)
    ext_v0 = list(ext)

    def connected(link, o, i, s, c):
        # gain of joining a set (o, i, s) to the rest of community c
        return link - a * (o * (Cin[c] - i) + i * (Cout[c] - o)) - b * s * (CN[c] - s) >= 0.0

    for v in rng.permutation(n).tolist():
        if Rcnt[ref[v]] != 1:
            continue
        c = pm[v]
        ko, ki, sv = kout[v], kin[v], size[v]
        if not connected(ext_v0[v], ko, ki, sv, c):
            continue
        links: dict[int, float] = {}
        for u, w in g.nbrs[v]:
            if pm[u] == c and ref[u] != ref[v]:
                links[ref[u]] = links.get(ref[u], 0.0) + w
        best, best_gain = -1, -np.inf
        for r in sorted(links):
            if not connected(ext[r], Rout[r], Rin[r], RN[r], c):
                continue
            gain = links[r] - a * (ko * Rin[r] + ki * Rout[r]) - b * sv * RN[r]
            if gain > best_gain:
                best, best_gain = r, gain
        if best < 0 or best_gain < 0.0:
            continue
        old = ref[v]
        Rcnt[old] = 0
        ref[v] = best
        Rout[best] += ko
        Rin[best] += ki
        RN[best] += sv
        Rcnt[best] += 1
        ext[best] = ext[best] + ext_v0[v] - 2.0 * links[best]
    return np.asarray(ref, dtype=np.int64)


def _n_communities(m: np.ndarray) -> int:
    return len(np.unique(m)) if len(m) else 0


def _iteration(
    g0: WeightedDigraph,
    start: np.ndarray,
    kind: str,
    resolution: float,
    cap: int | None,
    rng: np.random.Generator,
    trace: list,
    level_cap: int = 64,
) -> np.ndarray:
    g = g0
    part = _relabel(start)
    node_map = np.arange(g0.n)
    for level in range(level_cap):
        co = _coefficients(g, kind, resolution)
        part, _ = _local_move(g, part, co, cap, rng)
        part = _relabel(part)
        trace.append(("local_move", level, quality_value(g, part, kind, resolution)))
        k = _n_communities(part)
        if k == g.n:
            break
        ref = _relabel(_refine(g, part, co, rng))
        if _n_communities(ref) == g.n:
            ref = part  # refinement made no progress; aggregate on the coarse partition
        agg_part = np.zeros(_n_communities(ref), dtype=np.int64)
        agg_part[ref] = part
        g = g.aggregate(ref)
        node_map = ref[node_map]
        part = agg_part
        trace.append(("aggregate", level, quality_value(g, part, kind, resolution)))
    return _relabel(part[node_map])


def _same_partition(x: np.ndarray, y: np.ndarray) -> bool:
    return bool(np.array_equal(_relabel(x), _relabel(y)))


def leiden(
    graph: WeightedDigraph,
    kind: str = MODULARITY,
    resolution: float = 1.0,
    max_comm_size: int | None = None,
    seed: int = 0,
    max_iterations: int = 50,
    initial: np.ndarray | None = None,
    restarts: int = DEFAULT_RESTARTS,
) -> LeidenResult:
    """Best of ``restarts`` independent optimisations, each iterated to a fixed point.

    Restart streams are spawned from ``seed``; ties keep the earliest restart.
    """
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    if max_comm_size is not None and max_comm_size < 1:
        raise ValueError("max_comm_size must be >= 1")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    if graph.n == 0:
        return LeidenResult(np.zeros(0, dtype=np.int64), 0.0, 0, True)
    best = None
    for stream in np.random.SeedSequence(seed).spawn(restarts):
        res = _optimise(graph, kind, resolution, max_comm_size, np.random.default_rng(stream),
                        max_iterations, initial)
        if best is None or res.quality > best.quality:
            best = res
    return best


def _optimise(graph, kind, resolution, cap, rng, max_iterations, initial) -> LeidenResult:
    """Iterate Leiden until a full pass leaves the partition unchanged."""
    if initial is None:
        membership = np.arange(graph.n, dtype=np.int64)
    else:
        membership = _relabel(initial)
    trace: list[tuple[str, int, float]] = [("start", 0, quality_value(graph, membership, kind, resolution))]
    converged = False
    it = 0
    for it in range(1, max_iterations + 1):
        new = _iteration(graph, membership, kind, resolution, cap, rng, trace)
        if _same_partition(new, membership):
            converged = True
            membership = new
            break
        membership = new
    return LeidenResult(
        membership=_relabel(membership),
        quality=quality_value(graph, membership, kind, resolution),
        iterations=it,
        converged=converged,
        trace=trace,
    )
