"""Linear minimization oracles over flow polytopes.

Shortest paths (Dijkstra / Bellman-Ford), exact capacitated multicommodity
min-cost flow by path column generation, greedy residual routing, and a
brute-force path enumeration used as a test oracle.
"""
from __future__ import annotations

import csv
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .network import Commodity, Digraph, MultiFlow
from .simplex import solve_lp

log = logging.getLogger(__name__)

REDUCED_COST_TOL = 1e-8
CAPACITY_TOL = 1e-7


class NegativeCycle(RuntimeError):
    def __init__(self, arcs):
        self.cycle = [int(a) for a in arcs]
        super().__init__(f"negative-cost cycle through arcs {self.cycle}")


class Unreachable(RuntimeError):
    pass


class Infeasible(RuntimeError):
    pass


@dataclass
class PathFlow:
    commodity: int
    arcs: tuple
    weight: float


@dataclass
class McmfSolution:
    multiflow: MultiFlow
    aggregated: np.ndarray
    objective: float
    duals: np.ndarray  # per-arc capacity duals, >= 0
    status: str  # optimal | infeasible
    iterations: int = 0
    lower_bounds: list = field(default_factory=list)
    upper_bounds: list = field(default_factory=list)
    paths: list = field(default_factory=list)
    slackness: float = 0.0


def _costs(net: Digraph, costs) -> np.ndarray:
    c = np.asarray(costs, dtype=float)
    if c.shape != (net.n_arcs,):
        raise ValueError(f"cost vector has {c.shape} entries, network has {net.n_arcs} arcs")
    if not np.all(np.isfinite(c)):
        raise ValueError("costs must be finite")
    return c


def dijkstra(net: Digraph, costs, source: int) -> tuple[np.ndarray, np.ndarray]:
    """Distances and predecessor arcs from source; ties go to the lowest arc id."""
    c = np.asarray(costs, dtype=float)
    if c.shape != (net.n_arcs,):
        raise ValueError("cost vector does not match the network")
    if np.any(c < 0):
        raise ValueError("dijkstra needs nonnegative costs")
    return _kernels.dijkstra_kernel(net.n_vertices, net.out_ptr, net.out_arcs, net.head, c,
                                    int(source))


def _bf_tol(c) -> float:
    return 1e-11 * max(1.0, float(np.abs(c).max(initial=0.0)))


def bellman_ford(net: Digraph, costs, source: int) -> tuple[np.ndarray, np.ndarray]:
    c = _costs(net, costs)
    dist, pred, witness = _kernels.bellman_ford_kernel(net.n_vertices, net.tail, net.head, c,
                                                      int(source), _bf_tol(c))
    if witness >= 0:
        raise NegativeCycle(_kernels.extract_cycle(net.n_vertices, net.tail, pred, witness))
    return dist, pred


def find_negative_cycle(net: Digraph, costs) -> np.ndarray | None:
    """Any negative-cost cycle in the whole graph, or None."""
    c = _costs(net, costs)
    if c.min(initial=0.0) >= 0:
        return None
    _, pred, witness = _kernels.bellman_ford_kernel(net.n_vertices, net.tail, net.head, c, -1,
                                                    _bf_tol(c))
    if witness < 0:
        return None
    return _kernels.extract_cycle(net.n_vertices, net.tail, pred, witness)


def shortest_tree(net: Digraph, costs, source: int) -> tuple[np.ndarray, np.ndarray]:
    """Dijkstra when costs are nonnegative, Bellman-Ford otherwise."""
    c = np.asarray(costs, dtype=float)
    if c.min(initial=0.0) >= 0:
        return dijkstra(net, c, source)
    return bellman_ford(net, c, source)


def trace(net: Digraph, pred, source: int, target: int) -> np.ndarray:
    if source == target:
        return np.zeros(0, np.int64)
    path = _kernels.trace_path(net.tail, pred, int(source), int(target))
    if len(path) == 0:
        raise Unreachable(f"vertex {target} unreachable from {source}")
    return path


def shortest_path_lmo(net: Digraph, costs, commodity: Commodity, index: int = 0) -> PathFlow:
    _, pred = shortest_tree(net, _costs(net, costs), commodity.origin)
    path = trace(net, pred, commodity.origin, commodity.destination)
    return PathFlow(index, tuple(int(a) for a in path), commodity.demand)


def group_commodities(commodities: Sequence[Commodity]):
    """Merge commodities sharing (origin, destination).

    Returns the group list [(origin, destination, demand)] and the group index of
    each input commodity.
    """
    groups: OrderedDict = OrderedDict()
    member = []
    for c in commodities:
        key = (c.origin, c.destination)
        if key not in groups:
            groups[key] = [len(groups), 0.0]
        groups[key][1] += c.demand
        member.append(groups[key][0])
    glist = [(o, d, dem) for (o, d), (_, dem) in groups.items()]
    return glist, np.asarray(member, dtype=np.int64)


def _split_groups(n_arcs, groups, member, commodities, group_flows) -> MultiFlow:
    flows = np.zeros((len(commodities), n_arcs))
    for j, c in enumerate(commodities):
        g = member[j]
        flows[j] = group_flows[g] * (c.demand / groups[g][2])
    return MultiFlow(flows)


def shortest_path_flows(net: Digraph, costs, commodities: Sequence[Commodity]):
    """All-or-nothing assignment; returns (aggregated flow, MultiFlow, paths)."""
    c = _costs(net, costs)
    groups, member = group_commodities(commodities)
    trees = {}
    gflows = np.zeros((len(groups), net.n_arcs))
    paths = []
    for g, (o, d, dem) in enumerate(groups):
        if o not in trees:
            trees[o] = shortest_tree(net, c, o)[1]
        p = trace(net, trees[o], o, d)
        gflows[g, p] += dem
        paths.append(p)
    mf = _split_groups(net.n_arcs, groups, member, commodities, gflows)
    return gflows.sum(axis=0), mf, paths


class ColumnPool:
    """Path columns kept between solves on the same network (warm start)."""

    def __init__(self):
        self.columns: dict[tuple, list[tuple]] = {}

    def add(self, od, path):
        cols = self.columns.setdefault(od, [])
        path = tuple(int(a) for a in path)
        if path not in cols:
            cols.append(path)
            return True
        return False

    def get(self, od):
        return self.columns.get(od, [])

    def clear(self):
        self.columns.clear()

    def __len__(self):
        return sum(len(v) for v in self.columns.values())


def linear_min_multiflow(net: Digraph, costs, capacities, commodities: Sequence[Commodity],
                         pool: ColumnPool | None = None, tol: float = REDUCED_COST_TOL,
                         max_iter: int = 1000, rule: str = "bland",
                         debug_dump: str | None = None, raise_infeasible: bool = True
                         ) -> McmfSolution:
    """Exact min-cost multicommodity flow with shared arc capacities.

    Path-based column generation. Capacity rows enter the restricted master
    lazily, only for arcs whose capacity is violated by some master solution;
    rows for arcs that never bind would carry zero duals anyway.
    """
    c = _costs(net, costs)
    u = np.broadcast_to(np.asarray(capacities, dtype=float), (net.n_arcs,)).copy()
    if np.any(u <= 0):
        raise ValueError("capacities must be positive")
    groups, member = group_commodities(commodities)
    G = len(groups)
    pool = ColumnPool() if pool is None else pool
    demand = np.array([g[2] for g in groups])

    def price(red):
        trees = {}
        out = []
        for (o, d, _) in groups:
            if o not in trees:
                trees[o] = shortest_tree(net, red, o)
            dist, pred = trees[o]
            if not np.isfinite(dist[d]):
                raise Unreachable(f"no path from {o} to {d}")
            out.append((dist[d], trace(net, pred, o, d)))
        return out

    # initial columns: shortest paths under the true costs plus pooled columns
    priced = price(c)
    cols: list[tuple[int, np.ndarray]] = []
    seen = set()
    for g, (o, d, _) in enumerate(groups):
        pool.add((o, d), priced[g][1])
        for p in pool.get((o, d)):
            if (g, p) not in seen:
                seen.add((g, p))
                cols.append((g, np.asarray(p, dtype=np.int64)))

    # fast exit: shortest paths respect every capacity
    sp_flow = np.zeros(net.n_arcs)
    for g in range(G):
        np.add.at(sp_flow, priced[g][1], demand[g])
    if np.all(sp_flow <= u + CAPACITY_TOL):
        gflows = np.zeros((G, net.n_arcs))
        for g in range(G):
            gflows[g, priced[g][1]] += demand[g]
        mf = _split_groups(net.n_arcs, groups, member, commodities, gflows)
        obj = float(c @ sp_flow)
        lb = float(sum(demand[g] * priced[g][0] for g in range(G)))
        return McmfSolution(mf, sp_flow, obj, np.zeros(net.n_arcs), "optimal", 0, [lb], [obj],
                            [PathFlow(g, tuple(int(a) for a in priced[g][1]), demand[g])
                             for g in range(G)])

    rows = sorted(set(np.flatnonzero(sp_flow > u + CAPACITY_TOL).tolist()))
    phase = 1
    lbs, ubs = [], []
    it = 0
    while True:
        it += 1
        if it > max_iter:
            raise RuntimeError("column generation iteration limit reached")
        res, x = _solve_master(cols, rows, G, demand, c, u, phase, rule, net.n_arcs)
        if res is None:
            phase = 1
            continue
        pi = res.dual_eq[:G]
        lam = np.zeros(net.n_arcs)
        lam[rows] = np.maximum(-res.dual_ub, 0.0)
        if debug_dump:
            _dump_master(debug_dump, it, cols, rows, x, pi, lam)
        # phase one has zero arc costs, so it prices on the capacity duals alone
        priced = price(lam if phase == 1 else c + lam)
        added = 0
        for g in range(G):
            dist, path = priced[g]
            if dist - pi[g] < -tol * (1.0 + abs(pi[g])):
                if pool.add((groups[g][0], groups[g][1]), path):
                    cols.append((g, path))
                    added += 1
        if phase == 2:
            lb = float(demand @ np.array([p[0] for p in priced]) - u[rows] @ lam[rows])
            lbs.append(lb)
            ubs.append(res.objective)
        if added:
            continue
        flow = _column_flow(cols, x, net.n_arcs, G)
        viol = np.flatnonzero(flow > u + CAPACITY_TOL)
        new_rows = sorted(set(viol.tolist()) - set(rows))
        if new_rows:
            rows = sorted(set(rows) | set(new_rows))
            continue
        if phase == 1:
            art = x[len(cols):].sum()
            if art > 1e-9 * (1.0 + demand.sum()):
                if raise_infeasible:
                    raise Infeasible("demand cannot be routed within the arc capacities")
                return McmfSolution(MultiFlow(np.zeros((len(commodities), net.n_arcs))),
                                    np.zeros(net.n_arcs), np.nan, np.zeros(net.n_arcs),
                                    "infeasible", it)
            phase = 2
            continue
        break

    gflows = np.zeros((G, net.n_arcs))
    paths = []
    for k, (g, p) in enumerate(cols):
        if x[k] > 0:
            gflows[g, p] += x[k]
            paths.append(PathFlow(g, tuple(int(a) for a in p), float(x[k])))
    agg = gflows.sum(axis=0)
    mf = _split_groups(net.n_arcs, groups, member, commodities, gflows)
    slack = float(np.abs(lam[rows] * (u[rows] - agg[rows])).sum()) if rows else 0.0
    return McmfSolution(mf, agg, float(c @ agg), lam, "optimal", it, lbs, ubs, paths, slack)


def _column_flow(cols, x, n_arcs, G):
    flow = np.zeros(n_arcs)
    for k, (g, p) in enumerate(cols):
        if x[k] > 0:
            np.add.at(flow, p, x[k])
    return flow


def _solve_master(cols, rows, G, demand, c, u, phase, rule, n_arcs):
    """Restricted master LP. Phase one adds one artificial column per group."""
    n = len(cols)
    row_of = {a: i for i, a in enumerate(rows)}
    n_art = G if phase == 1 else 0
    A_eq = np.zeros((G, n + n_art))
    A_ub = np.zeros((len(rows), n + n_art))
    cost = np.zeros(n + n_art)
    for k, (g, p) in enumerate(cols):
        A_eq[g, k] = 1.0
        for a in p:
            i = row_of.get(int(a))
            if i is not None:
                A_ub[i, k] += 1.0
        if phase == 2:
            cost[k] = c[p].sum()
    if phase == 1:
        A_eq[np.arange(G), n + np.arange(G)] = 1.0
        cost[n:] = 1.0
    res = solve_lp(cost, A_eq, demand, A_ub if rows else None, u[rows] if rows else None,
                   rule=rule)
    if res.status != "optimal":
        if phase == 2 and res.status == "infeasible":
            return None, None
        raise RuntimeError(f"restricted master LP {res.status}")
    if len(res.dual_eq) < G:
        res.dual_eq = np.concatenate([res.dual_eq, np.zeros(G - len(res.dual_eq))])
    return res, res.x


def _dump_master(path, it, cols, rows, x, pi, lam):
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if it == 1:
            w.writerow(["iteration", "kind", "index", "group", "value", "arcs"])
        for k, (g, p) in enumerate(cols):
            w.writerow([it, "column", k, g, repr(float(x[k])), " ".join(map(str, p))])
        for g, v in enumerate(pi):
            w.writerow([it, "demand_dual", g, g, repr(float(v)), ""])
        for a in rows:
            w.writerow([it, "capacity_dual", a, "", repr(float(lam[a])), ""])


def greedy_sequential_routing(net: Digraph, costs, capacities, commodities: Sequence[Commodity],
                              order: Sequence[int] | None = None) -> MultiFlow:
    """Route commodities one by one along shortest residual paths (not exact)."""
    c = _costs(net, costs)
    resid = np.broadcast_to(np.asarray(capacities, dtype=float), (net.n_arcs,)).copy()
    order = range(len(commodities)) if order is None else order
    flows = np.zeros((len(commodities), net.n_arcs))
    big = np.abs(c).sum() * 4 + 1.0
    for j in order:
        com = commodities[j]
        left = com.demand
        while left > 1e-12:
            # saturated arcs get a prohibitive cost instead of being removed
            masked = np.where(resid > 1e-12, c, big)
            dist, pred = shortest_tree(net, masked, com.origin)
            if not np.isfinite(dist[com.destination]):
                raise Infeasible(f"commodity {j} has no path")
            path = trace(net, pred, com.origin, com.destination)
            if np.any(resid[path] <= 1e-12):
                raise Infeasible(f"no residual path for commodity {j}")
            push = min(left, float(resid[path].min()))
            flows[j, path] += push
            resid[path] -= push
            left -= push
    return MultiFlow(flows)


def enumerate_paths(net: Digraph, commodity: Commodity, max_len: int | None = None,
                    max_vertices: int = 12) -> list[tuple]:
    """All elementary origin-destination paths in lexicographic arc-id order."""
    if net.n_vertices > max_vertices:
        raise ValueError(f"path enumeration limited to {max_vertices} vertices")
    max_len = net.n_vertices if max_len is None else max_len
    out = []
    visited = np.zeros(net.n_vertices, dtype=bool)

    def dfs(v, stack):
        if v == commodity.destination:
            out.append(tuple(stack))
            return
        if len(stack) >= max_len:
            return
        visited[v] = True
        for a in net.out_of(v):
            w = int(net.head[a])
            if not visited[w]:
                stack.append(int(a))
                dfs(w, stack)
                stack.pop()
        visited[v] = False

    dfs(commodity.origin, [])
    return sorted(out)


def brute_force_multiflow(net: Digraph, costs, capacities, commodities: Sequence[Commodity]):
    """Full path LP over every elementary path; returns (objective, aggregated flow)."""
    c = _costs(net, costs)
    u = np.broadcast_to(np.asarray(capacities, dtype=float), (net.n_arcs,))
    cols = []
    for j, com in enumerate(commodities):
        paths = enumerate_paths(net, com)
        if not paths:
            raise Unreachable(f"commodity {j} has no path")
        cols += [(j, np.asarray(p, dtype=np.int64)) for p in paths]
    finite = np.flatnonzero(np.isfinite(u))
    A_eq = np.zeros((len(commodities), len(cols)))
    A_ub = np.zeros((len(finite), len(cols)))
    cost = np.zeros(len(cols))
    pos = {a: i for i, a in enumerate(finite)}
    for k, (j, p) in enumerate(cols):
        A_eq[j, k] = 1.0
        cost[k] = c[p].sum()
        for a in p:
            if a in pos:
                A_ub[pos[a], k] += 1.0
    res = solve_lp(cost, A_eq, [com.demand for com in commodities],
                   A_ub if len(finite) else None, u[finite] if len(finite) else None)
    if res.status != "optimal":
        return np.nan, None
    agg = np.zeros(net.n_arcs)
    for k, (j, p) in enumerate(cols):
        np.add.at(agg, p, res.x[k])
    return res.objective, agg
