"""Wardrop equilibria as minimizers of a separable convex potential.

The default solver is a pairwise Frank-Wolfe variant over path flows: each
sweep adds the shortest path of every origin-destination group to its active
set and moves flow from the costliest used path to the cheapest one with an
exact line search. It converges linearly, so equilibrium gaps of 1e-10 are
cheap. Classic Frank-Wolfe (method="fw") is kept as a cross-check.

Negative latencies only arise in the Euclidean projection. There, a
negative-cost cycle either raises NegativeCycle (cycles="error") or is added
as a circulation atom (cycles="allow"), which projects onto the flow set that
includes circulations.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .flow_oracles import (NegativeCycle, find_negative_cycle, group_commodities, shortest_tree,
                           trace, _split_groups)
from .network import Commodity, Digraph, MultiFlow


class LatencyParams:
    """Polynomial latencies: latency_a(y) = sum_k coeffs[k, a] * y**k."""

    def __init__(self, coeffs):
        coeffs = np.atleast_2d(np.asarray(coeffs, dtype=float))
        if coeffs.shape[0] < 1:
            raise ValueError("need at least one coefficient row")
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("latency coefficients must be finite")
        self.coeffs = coeffs

    @classmethod
    def affine(cls, free_flow, slope) -> "LatencyParams":
        free_flow = np.asarray(free_flow, dtype=float)
        return cls(np.vstack([free_flow, np.broadcast_to(slope, free_flow.shape)]))

    @property
    def K(self) -> int:
        return self.coeffs.shape[0]

    @property
    def n_arcs(self) -> int:
        return self.coeffs.shape[1]


def _powers(y, K):
    return np.vstack([np.ones_like(y)] + [y ** k for k in range(1, K)])


def latencies(params: LatencyParams, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return (params.coeffs * _powers(y, params.K)).sum(axis=0)


def latency_slopes(params: LatencyParams, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    K = params.K
    if K == 1:
        return np.zeros_like(y)
    d = [params.coeffs[1] * np.ones_like(y)]
    d += [k * params.coeffs[k] * y ** (k - 1) for k in range(2, K)]
    return np.sum(d, axis=0)


def antiderivatives(y, K: int) -> np.ndarray:
    """Rows y**(k+1)/(k+1) for k < K."""
    y = np.asarray(y, dtype=float)
    return np.vstack([y ** (k + 1) / (k + 1) for k in range(K)])


def potential_value(params: LatencyParams, y) -> float:
    return float((params.coeffs * antiderivatives(y, params.K)).sum())


@dataclass
class WeSolution:
    aggregated: np.ndarray
    gap: float
    iterations: int
    potential_value: float
    multiflow: MultiFlow | None = None
    paths: list = field(default_factory=list)  # (group, arcs, flow)
    cycles: list = field(default_factory=list)  # (arcs, flow)


def equilibrium_gap(net: Digraph, commodities: Sequence[Commodity], params: LatencyParams,
                    multiflow) -> float:
    """sum_j [ latency(y)^T y_j - D_j * shortest path cost under latency(y) ]."""
    flows = multiflow.flows if isinstance(multiflow, MultiFlow) else np.asarray(multiflow)
    y = flows.sum(axis=0)
    c = latencies(params, y)
    gap = 0.0
    trees = {}
    for j, com in enumerate(commodities):
        if com.origin not in trees:
            trees[com.origin] = shortest_tree(net, c, com.origin)[0]
        gap += c @ flows[j] - com.demand * trees[com.origin][com.destination]
    return float(gap)


class _PathEngine:
    def __init__(self, net, commodities, params, cycles):
        self.net = net
        self.commodities = commodities
        self.params = params
        self.K = params.K
        self.th = params.coeffs
        self.cycles_mode = cycles
        self.groups, self.member = group_commodities(commodities)
        self.demand = np.array([g[2] for g in self.groups], dtype=float)
        self.paths = [[] for _ in self.groups]  # per group: [arcs array]
        self.keys = [dict() for _ in self.groups]
        self.flows = [[] for _ in self.groups]
        self.cyc = []  # [arcs array]
        self.cyc_keys = {}
        self.cyc_flow = []
        self.y = np.zeros(net.n_arcs)
        self.total_demand = float(self.demand.sum())

    # -- latency helpers on arc subsets
    def lat_at(self, arcs, y_arcs):
        th = self.th[:, arcs]
        out = th[0].copy()
        p = np.ones_like(y_arcs)
        for k in range(1, self.K):
            p = p * y_arcs
            out += th[k] * p
        return out

    def slope_at(self, arcs, y_arcs):
        if self.K == 1:
            return np.zeros(len(arcs))
        th = self.th[:, arcs]
        out = th[1].copy()
        p = np.ones_like(y_arcs)
        for k in range(2, self.K):
            p = p * y_arcs
            out += k * th[k] * p
        return out

    def cost(self, arcs):
        return float(self.lat_at(arcs, self.y[arcs]).sum())

    def step(self, plus, minus, max_step):
        """Exact minimizer of the potential along e_plus - e_minus, in [0, max_step]."""
        y = self.y
        g0 = self.lat_at(plus, y[plus]).sum() - self.lat_at(minus, y[minus]).sum()
        if g0 >= 0:
            return 0.0
        if self.K <= 2:
            h = self.slope_at(plus, y[plus]).sum() + self.slope_at(minus, y[minus]).sum()
            if h <= 0:
                if not np.isfinite(max_step):
                    raise RuntimeError("potential unbounded along a circulation")
                return max_step
            return min(max_step, -g0 / h)

        def deriv(t):
            return (self.lat_at(plus, y[plus] + t).sum()
                    - self.lat_at(minus, np.maximum(y[minus] - t, 0.0)).sum())

        hi = max_step
        if not np.isfinite(hi):
            hi = 1.0
            while deriv(hi) < 0:
                hi *= 2.0
                if hi > 1e12:
                    raise RuntimeError("potential unbounded along a circulation")
        elif deriv(hi) <= 0:
            return hi
        lo = 0.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if deriv(mid) < 0:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-15 * (1.0 + hi):
                break
        return 0.5 * (lo + hi)

    def shift(self, plus, minus, delta):
        self.y[plus] += delta
        self.y[minus] -= delta
        np.maximum(self.y, 0.0, out=self.y)

    def rebuild(self):
        y = np.zeros(self.net.n_arcs)
        for g in range(len(self.groups)):
            for p, f in zip(self.paths[g], self.flows[g]):
                if f > 0:
                    y[p] += f
        for cy, f in zip(self.cyc, self.cyc_flow):
            if f > 0:
                y[cy] += f
        self.y = y

    def add_path(self, g, path, flow=0.0):
        key = path.tobytes()
        idx = self.keys[g].get(key)
        if idx is None:
            idx = len(self.paths[g])
            self.keys[g][key] = idx
            self.paths[g].append(path)
            self.flows[g].append(flow)
        else:
            self.flows[g][idx] += flow
        return idx

    def prune(self, g):
        keep = [i for i, f in enumerate(self.flows[g]) if f > 0]
        if len(keep) == len(self.flows[g]):
            return
        self.paths[g] = [self.paths[g][i] for i in keep]
        self.flows[g] = [self.flows[g][i] for i in keep]
        self.keys[g] = {p.tobytes(): i for i, p in enumerate(self.paths[g])}

    # -- cycles
    def push_cycle(self, cyc) -> bool:
        """Route flow around a circulation until its cost reaches zero."""
        cyc = np.asarray(cyc, dtype=np.int64)
        key = cyc.tobytes()
        i = self.cyc_keys.get(key)
        if i is None:
            i = len(self.cyc)
            self.cyc_keys[key] = i
            self.cyc.append(cyc)
            self.cyc_flow.append(0.0)
        d = self.step(cyc, cyc[:0], np.inf)
        if d <= 0:
            return False
        self.cyc_flow[i] += d
        self.shift(cyc, cyc[:0], d)
        return True

    def fix_cycles(self, max_rounds=10000):
        for _ in range(max_rounds):
            c = self.current_costs()
            cyc = find_negative_cycle(self.net, c)
            if cyc is None:
                return
            if self.cycles_mode != "allow":
                raise NegativeCycle(cyc)
            if not self.push_cycle(cyc):
                return
        raise RuntimeError("negative cycle removal did not terminate")

    def shrink_cycles(self):
        for i, cy in enumerate(self.cyc):
            f = self.cyc_flow[i]
            if f <= 0:
                continue
            # moving flow off a cycle: direction -e_C
            d = self.step(cy[:0], cy, f)
            if d > 0:
                self.cyc_flow[i] = f - d if d < f else 0.0
                self.shift(cy[:0], cy, d)

    def current_costs(self):
        return latencies(self.params, self.y)

    def trees(self, c):
        out = {}
        for (o, _, _) in self.groups:
            if o not in out:
                out[o] = shortest_tree(self.net, c, o)
        return out

    def safe_trees(self):
        """Current costs and their shortest-path trees, absorbing circulations first.

        A cycle the path search still sees as negative, but whose cost sums to
        zero in floating point, is neutralized by a tiny uniform arc surcharge.
        """
        surcharge = 0.0
        for _ in range(1000):
            c = self.current_costs()
            try:
                return c, self.trees(c + surcharge)
            except NegativeCycle as exc:
                if self.cycles_mode != "allow":
                    raise
                if self.push_cycle(exc.cycle):
                    continue
                cyc = np.asarray(exc.cycle)
                level = abs(float((c[cyc] + surcharge).sum())) / len(cyc)
                surcharge = max(2.0 * surcharge, 2.0 * level, 1e-15)
        raise RuntimeError("could not clear negative cycles")

    def equilibrate_group(self, g, inner):
        paths, flows = self.paths[g], self.flows[g]
        for _ in range(inner):
            if len(paths) < 2:
                return
            costs = [self.cost(p) for p in paths]
            used = [i for i, f in enumerate(flows) if f > 0]
            if not used:
                return
            p = max(used, key=lambda i: costs[i])
            q = min(range(len(paths)), key=lambda i: costs[i])
            if costs[p] - costs[q] <= 1e-15 * (1.0 + abs(costs[q])) or p == q:
                return
            pa, qa = paths[p], paths[q]
            common = np.intersect1d(pa, qa, assume_unique=True)
            plus = np.setdiff1d(qa, common, assume_unique=True)
            minus = np.setdiff1d(pa, common, assume_unique=True)
            d = self.step(plus, minus, flows[p])
            if d <= 0:
                return
            if d >= flows[p]:
                d = flows[p]
                flows[p] = 0.0
            else:
                flows[p] -= d
            flows[q] += d
            self.shift(plus, minus, d)

    def snapshot(self):
        return ([list(fl) for fl in self.flows], [list(p) for p in self.paths],
                list(self.cyc_flow), list(self.cyc), self.y.copy())

    def solution(self, snap, gap, iters):
        flows, paths, cflow, cyc, y = snap
        G = len(self.groups)
        gflows = np.zeros((G, self.net.n_arcs))
        out_paths = []
        for g in range(G):
            for p, f in zip(paths[g], flows[g]):
                if f > 0:
                    gflows[g, p] += f
                    out_paths.append((g, tuple(int(a) for a in p), f))
        cycles = [(tuple(int(a) for a in cy), f) for cy, f in zip(cyc, cflow) if f > 0]
        mf = _split_groups(self.net.n_arcs, self.groups, self.member, self.commodities, gflows)
        agg = gflows.sum(axis=0)
        for cy, f in cycles:
            agg[list(cy)] += f
        return WeSolution(agg, gap, iters, potential_value(self.params, agg), mf, out_paths, cycles)

    def run(self, tol, max_iter, inner=8, init_costs=None):
        has_neg = self.th[0].min(initial=0.0) < 0
        if has_neg:
            self.fix_cycles()
        if init_costs is not None:
            trees = self.trees(np.asarray(init_costs, dtype=float))
        elif has_neg:
            trees = self.safe_trees()[1]
        else:
            trees = self.trees(self.current_costs())
        for g, (o, d, dem) in enumerate(self.groups):
            self.add_path(g, trace(self.net, trees[o][1], o, d), dem)
        self.rebuild()
        best = (np.inf, None, 0)
        it = 0
        while True:
            if has_neg:
                self.fix_cycles()
                c, trees = self.safe_trees()
            else:
                c = self.current_costs()
                trees = self.trees(c)
            sp = np.array([trees[o][0][d] for (o, d, _) in self.groups])
            gap = max(float(c @ self.y - self.demand @ sp), 0.0)
            phi = potential_value(self.params, self.y)
            if gap < best[0]:
                best = (gap, self.snapshot(), it)
            scale = max(1.0, min(abs(phi), self.total_demand))
            if gap <= tol * scale or it >= max_iter:
                break
            it += 1
            for g, (o, d, _) in enumerate(self.groups):
                self.add_path(g, trace(self.net, trees[o][1], o, d))
                self.equilibrate_group(g, inner)
                self.prune(g)
            if self.cyc:
                self.shrink_cycles()
            self.rebuild()
        return self.solution(best[1], best[0], it)


def _check_we_params(net, params):
    if params.n_arcs != net.n_arcs:
        raise ValueError("latency parameters do not match the network")
    if np.any(params.coeffs < 0):
        raise ValueError("equilibrium solving needs nonnegative latency coefficients")


def solve_we(net: Digraph, commodities: Sequence[Commodity], params: LatencyParams,
             tol: float = 1e-5, max_iter: int = 20000, method: str = "pairwise",
             init_costs=None) -> WeSolution:
    """Wardrop equilibrium for the given latencies; returns the best-gap iterate."""
    _check_we_params(net, params)
    if method == "fw":
        return _frank_wolfe(net, commodities, params, tol, max_iter)
    if method != "pairwise":
        raise ValueError(f"unknown method {method!r}")
    return _PathEngine(net, commodities, params, "error").run(tol, max_iter, init_costs=init_costs)


def _frank_wolfe(net, commodities, params, tol, max_iter) -> WeSolution:
    groups, member = group_commodities(commodities)
    dem = np.array([g[2] for g in groups])

    def aon(c):
        trees = {}
        s = np.zeros((len(groups), net.n_arcs))
        dist = np.zeros(len(groups))
        for g, (o, d, D) in enumerate(groups):
            if o not in trees:
                trees[o] = shortest_tree(net, c, o)
            dist[g] = trees[o][0][d]
            s[g, trace(net, trees[o][1], o, d)] = D
        return s, dist

    yg, _ = aon(latencies(params, np.zeros(net.n_arcs)))
    best = (np.inf, yg, 0)
    it = 0
    while True:
        y = yg.sum(axis=0)
        c = latencies(params, y)
        s, dist = aon(c)
        gap = max(float(c @ y - dem @ dist), 0.0)
        phi = potential_value(params, y)
        if gap < best[0]:
            best = (gap, yg.copy(), it)
        if gap / max(1.0, abs(phi)) <= tol or it >= max_iter:
            break
        d = s.sum(axis=0) - y
        if params.K <= 2:
            curv = float((latency_slopes(params, y) * d * d).sum())
            gamma = 1.0 if curv <= 0 else min(1.0, max(0.0, gap / curv))
        else:
            gamma = 2.0 / (it + 2.0)
        yg = (1.0 - gamma) * yg + gamma * s
        it += 1
    gap, yg, _ = best
    mf = _split_groups(net.n_arcs, groups, member, commodities, yg)
    agg = yg.sum(axis=0)
    return WeSolution(agg, gap, it, potential_value(params, agg), mf)


def project(net: Digraph, commodities: Sequence[Commodity], theta, tol: float = 1e-10,
            max_iter: int = 10000, weights=None, cycles: str = "error") -> WeSolution:
    """Solve max theta^T y - 1/2 sum_a w_a y_a^2 over the aggregated flow set."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (net.n_arcs,):
        raise ValueError("theta does not match the network")
    w = np.ones(net.n_arcs) if weights is None else np.asarray(weights, dtype=float)
    params = LatencyParams(np.vstack([-theta, w]))
    return _PathEngine(net, commodities, params, cycles).run(tol, max_iter)


def euclidean_projection(net: Digraph, commodities: Sequence[Commodity], theta,
                         tol: float = 1e-10, max_iter: int = 10000,
                         cycles: str = "error") -> np.ndarray:
    return project(net, commodities, theta, tol, max_iter, cycles=cycles).aggregated
