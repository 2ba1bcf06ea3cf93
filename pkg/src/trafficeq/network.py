"""Directed road networks, commodities, flows and network expansions."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

CONSERVATION_TOL = 1e-9
INSTANCE_FORMAT = 1


def _frozen(arr, dtype=float):
    out = np.array(arr, dtype=dtype)
    out.setflags(write=False)
    return out


class Digraph:
    """Topology-only multigraph with dense vertex and arc ids.

    Arcs are identified by id, never by (tail, head), so parallel arcs are fine.
    """

    def __init__(self, n_vertices: int, tail, head):
        tail = np.asarray(tail, dtype=np.int64)
        head = np.asarray(head, dtype=np.int64)
        if tail.shape != head.shape or tail.ndim != 1:
            raise ValueError("tail and head must be 1-d arrays of equal length")
        if len(tail) and (tail.min() < 0 or head.min() < 0
                          or tail.max() >= n_vertices or head.max() >= n_vertices):
            raise ValueError("arc endpoint refers to a missing vertex")
        self.n_vertices = int(n_vertices)
        self.tail = _frozen(tail, np.int64)
        self.head = _frozen(head, np.int64)
        # CSR adjacency; arcs of each vertex listed in increasing id order
        order = np.argsort(tail, kind="stable")
        self.out_ptr = _frozen(np.searchsorted(tail[order], np.arange(n_vertices + 1)), np.int64)
        self.out_arcs = _frozen(order, np.int64)
        order = np.argsort(head, kind="stable")
        self.in_ptr = _frozen(np.searchsorted(head[order], np.arange(n_vertices + 1)), np.int64)
        self.in_arcs = _frozen(order, np.int64)

    @property
    def n_arcs(self) -> int:
        return len(self.tail)

    def out_of(self, v: int) -> np.ndarray:
        return self.out_arcs[self.out_ptr[v]:self.out_ptr[v + 1]]

    def in_of(self, v: int) -> np.ndarray:
        return self.in_arcs[self.in_ptr[v]:self.in_ptr[v + 1]]

    @property
    def adjacency(self) -> dict[int, list[int]]:
        return {v: self.out_of(v).tolist() for v in range(self.n_vertices)}

    def divergence(self, flow) -> np.ndarray:
        """Outflow minus inflow at every vertex."""
        flow = np.asarray(flow, dtype=float)
        if flow.shape != (self.n_arcs,):
            raise ValueError(f"flow has {flow.shape} entries, network has {self.n_arcs} arcs")
        div = np.zeros(self.n_vertices)
        np.add.at(div, self.tail, flow)
        np.subtract.at(div, self.head, flow)
        return div


class RoadNetwork(Digraph):
    """Road graph with planar coordinates and per-arc road attributes."""

    def __init__(self, xy, tail, head, length=None, free_speed=None, capacity=None,
                 lanes=None, transit_time=None):
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        super().__init__(len(xy), tail, head)
        m = self.n_arcs
        self.xy = _frozen(xy)
        if length is None:
            length = np.hypot(*(xy[self.head] - xy[self.tail]).T) if m else np.zeros(0)
            length = np.maximum(length, 1.0)
        self.length = _frozen(np.broadcast_to(np.asarray(length, float), (m,)))
        self.free_speed = _frozen(np.broadcast_to(
            np.asarray(13.89 if free_speed is None else free_speed, float), (m,)))
        self.capacity = _frozen(np.broadcast_to(
            np.asarray(600.0 if capacity is None else capacity, float), (m,)))
        self.lanes = _frozen(np.broadcast_to(np.asarray(1.0 if lanes is None else lanes, float), (m,)))
        if transit_time is None:
            transit_time = self.length / self.free_speed
        self.transit_time = _frozen(np.broadcast_to(np.asarray(transit_time, float), (m,)))
        for name in ("length", "free_speed", "capacity", "transit_time"):
            vals = getattr(self, name)
            if m and not (np.all(np.isfinite(vals)) and vals.min() > 0):
                raise ValueError(f"arc attribute {name} must be strictly positive")

    def arc_midpoints(self) -> np.ndarray:
        return 0.5 * (self.xy[self.tail] + self.xy[self.head])

    def subset(self, arcs) -> "RoadNetwork":
        """Network with the same vertices and only the listed arcs (renumbered)."""
        arcs = np.asarray(arcs, dtype=np.int64)
        return RoadNetwork(self.xy, self.tail[arcs], self.head[arcs], self.length[arcs],
                           self.free_speed[arcs], self.capacity[arcs], self.lanes[arcs],
                           self.transit_time[arcs])


@dataclass(frozen=True)
class Commodity:
    origin: int
    destination: int
    demand: float = 1.0
    departure: int = 0  # epoch of departure, only meaningful after time expansion

    def __post_init__(self):
        if self.origin == self.destination:
            raise ValueError("commodity origin and destination coincide")
        if not self.demand > 0:
            raise ValueError("commodity demand must be positive")


def supply_vector(n_vertices: int, commodities: Sequence[Commodity]) -> np.ndarray:
    b = np.zeros(n_vertices)
    for c in commodities:
        b[c.origin] += c.demand
        b[c.destination] -= c.demand
    return b


class MultiFlow:
    """Per-commodity arc flows, stored as a (commodities x arcs) matrix."""

    def __init__(self, per_commodity):
        if isinstance(per_commodity, Mapping):
            keys = sorted(per_commodity)
            if keys != list(range(len(keys))):
                raise ValueError("commodity indices must be dense 0..J-1")
            rows = [np.asarray(per_commodity[k], dtype=float) for k in keys]
            if len({r.shape for r in rows}) > 1:
                raise ValueError("per-commodity flows have different arc dimensions")
            per_commodity = np.array(rows) if rows else np.zeros((0, 0))
        flows = np.asarray(per_commodity, dtype=float)
        if flows.ndim != 2:
            raise ValueError("multiflow must be two dimensional")
        self.flows = flows

    @property
    def per_commodity(self) -> dict[int, np.ndarray]:
        return {j: row for j, row in enumerate(self.flows)}

    def __len__(self):
        return self.flows.shape[0]


def aggregate_flow(mf: MultiFlow | Mapping | Sequence) -> np.ndarray:
    if not isinstance(mf, MultiFlow):
        mf = MultiFlow(mf)
    return mf.flows.sum(axis=0) if len(mf) else np.zeros(mf.flows.shape[1])


def check_conservation(net: Digraph, flow, origin: int, destination: int,
                       demand: float) -> tuple[bool, float]:
    """Single-commodity conservation check; returns (ok, max vertex residual)."""
    div = net.divergence(flow)
    div[origin] -= demand
    div[destination] += demand
    residual = float(np.abs(div).max()) if len(div) else 0.0
    ok = residual <= CONSERVATION_TOL and bool(np.all(np.asarray(flow) >= -CONSERVATION_TOL))
    return ok, residual


def aggregate_residual(net: Digraph, flow, commodities: Sequence[Commodity]) -> float:
    """Largest vertex imbalance of an aggregated flow against the summed supplies."""
    div = net.divergence(flow) - supply_vector(net.n_vertices, commodities)
    return float(np.abs(div).max()) if len(div) else 0.0


class ExpandedNetwork:
    """Each base arc replaced by M capacitated parallel copies.

    Expanded arc a*M + m is copy m (0-based) of base arc a.
    """

    def __init__(self, base: RoadNetwork, thresholds):
        tau = np.asarray(thresholds, dtype=float)
        if tau.ndim == 1:
            tau = np.tile(tau, (base.n_arcs, 1))
        if tau.ndim != 2 or tau.shape[0] != base.n_arcs or tau.shape[1] < 2:
            raise ValueError("thresholds must have shape (arcs, M+1) with M >= 1")
        if np.any(tau[:, 0] != 0) or np.any(np.diff(tau, axis=1) <= 0):
            raise ValueError("thresholds must satisfy 0 = tau_0 < tau_1 < ... < tau_M")
        self.base = base
        self.thresholds = _frozen(tau)
        self.copies_per_arc = m = tau.shape[1] - 1
        self.copy_capacity = _frozen(np.diff(tau, axis=1).ravel())
        self.base_arc_of = _frozen(np.repeat(np.arange(base.n_arcs), m), np.int64)
        self.copy_index = _frozen(np.tile(np.arange(m), base.n_arcs), np.int64)
        b = self.base_arc_of
        self.graph = RoadNetwork(base.xy, base.tail[b], base.head[b], base.length[b],
                                 base.free_speed[b], base.capacity[b], base.lanes[b],
                                 base.transit_time[b])

    @property
    def n_arcs(self) -> int:
        return self.graph.n_arcs

    def expanded_arc_of(self, arc: int, copy: int) -> int:
        if not 0 <= copy < self.copies_per_arc:
            raise IndexError("copy index out of range")
        return arc * self.copies_per_arc + copy

    def expand_flow(self, base_flow) -> np.ndarray:
        """Fill copies in threshold order; any excess lands on the last copy."""
        base_flow = np.asarray(base_flow, dtype=float)
        tau = self.thresholds
        lo, hi = tau[:, :-1], tau[:, 1:]
        filled = np.clip(base_flow[:, None] - lo, 0.0, hi - lo)
        filled[:, -1] += np.maximum(base_flow - tau[:, -1], 0.0)
        return filled.ravel()


def capacity_expand(net: RoadNetwork, thresholds) -> ExpandedNetwork:
    return ExpandedNetwork(net, thresholds)


def uniform_thresholds(n_arcs: int, copies: int, quantum: float) -> np.ndarray:
    if copies < 1 or not quantum > 0:
        raise ValueError("need copies >= 1 and a positive capacity quantum")
    return np.tile(quantum * np.arange(copies + 1, dtype=float), (n_arcs, 1))


class TimeExpandedNetwork:
    """Road arcs replicated per epoch, plus one free arrival arc per (vertex, epoch).

    Vertex (v, t) has id t*V + v; the arrival sink of v has id T*V + v.
    Road arc (a, t) has id t*A + a; arrival arcs follow the T*A road arcs.
    """

    def __init__(self, base: RoadNetwork, epochs: int, epoch_duration: float):
        if epochs < 1:
            raise ValueError("time expansion needs at least one epoch")
        if not epoch_duration > 0:
            raise ValueError("epoch duration must be positive")
        self.base = base
        self.epochs = T = int(epochs)
        self.epoch_duration = float(epoch_duration)
        V, A = base.n_vertices, base.n_arcs
        self.delay = _frozen(np.ceil(base.transit_time / epoch_duration - 1e-12).astype(np.int64), np.int64)
        t = np.repeat(np.arange(T), A)
        a = np.tile(np.arange(A), T)
        head_t = np.minimum(t + self.delay[a], T - 1)
        road_tail = t * V + base.tail[a]
        road_head = head_t * V + base.head[a]
        vt = np.arange(T * V)
        arr_tail = vt
        arr_head = T * V + (vt % V)
        self.road_arc_count = T * A
        self.base_arc_of = _frozen(np.concatenate([a, -np.ones(T * V, np.int64)]), np.int64)
        self.epoch_of = _frozen(np.concatenate([t, vt // V]), np.int64)
        self.head_epoch = _frozen(head_t, np.int64)
        self.graph = Digraph((T + 1) * V, np.concatenate([road_tail, arr_tail]),
                             np.concatenate([road_head, arr_head]))
        xy = np.vstack([np.tile(base.xy, (T, 1)), base.xy])
        self.xy = _frozen(xy)

    @property
    def n_arcs(self) -> int:
        return self.graph.n_arcs

    def arc_of(self, arc: int, epoch: int) -> int:
        if not 0 <= epoch < self.epochs:
            raise IndexError("epoch out of range")
        return epoch * self.base.n_arcs + arc

    def vertex_of(self, v: int, epoch: int) -> int:
        return epoch * self.base.n_vertices + v

    def sink_of(self, v: int) -> int:
        return self.epochs * self.base.n_vertices + v

    def expand_commodity(self, c: Commodity) -> Commodity:
        t = min(max(int(c.departure), 0), self.epochs - 1)
        return Commodity(self.vertex_of(c.origin, t), self.sink_of(c.destination), c.demand, t)

    def road_matrix(self, flow) -> np.ndarray:
        """(arcs x epochs) view of the road part of an expanded flow."""
        flow = np.asarray(flow, dtype=float)
        road = flow[:self.road_arc_count] if flow.shape[0] == self.n_arcs else flow
        if road.shape[0] != self.road_arc_count:
            raise ValueError("flow length matches neither all arcs nor road arcs")
        return road.reshape(self.epochs, self.base.n_arcs).T.copy()


def time_expand(net: RoadNetwork, T: int, epoch_duration: float) -> TimeExpandedNetwork:
    return TimeExpandedNetwork(net, T, epoch_duration)


def collapse_flow(exp, flow):
    """Map an expanded flow back to base arcs.

    Returns the base flow for a capacity expansion, and (base flow, arcs x epochs
    matrix) for a time expansion.
    """
    flow = np.asarray(flow, dtype=float)
    if isinstance(exp, ExpandedNetwork):
        if flow.shape != (exp.n_arcs,):
            raise ValueError("flow does not match the expanded network")
        return flow.reshape(exp.base.n_arcs, exp.copies_per_arc).sum(axis=1)
    if isinstance(exp, TimeExpandedNetwork):
        mat = exp.road_matrix(flow)
        return mat.sum(axis=1), mat
    raise TypeError("expected an ExpandedNetwork or TimeExpandedNetwork")


def pigou_network() -> RoadNetwork:
    """Two parallel arcs from vertex 0 to vertex 1."""
    return RoadNetwork([(0.0, 0.0), (1000.0, 0.0)], [0, 0], [1, 1])


def line_network(n: int = 3) -> RoadNetwork:
    xy = [(1000.0 * i, 0.0) for i in range(n)]
    return RoadNetwork(xy, list(range(n - 1)), list(range(1, n)))


def grid_network(rows: int, cols: int, spacing: float = 1000.0, bidirectional: bool = False) -> RoadNetwork:
    """Grid with arcs pointing right and up (and back, if bidirectional)."""
    xy = [(spacing * c, spacing * r) for r in range(rows) for c in range(cols)]
    tail, head = [], []
    for r in range(rows):
        for c in range(cols):
            v = r * cols + c
            if c + 1 < cols:
                tail.append(v), head.append(v + 1)
                if bidirectional:
                    tail.append(v + 1), head.append(v)
            if r + 1 < rows:
                tail.append(v), head.append(v + cols)
                if bidirectional:
                    tail.append(v + cols), head.append(v)
    return RoadNetwork(xy, tail, head)


@dataclass
class Instance:
    """A road network with its trips, location layout and (optionally) target flow.

    The target is a per-arc vector for static instances and an (arcs x epochs)
    matrix when time_steps > 1.
    """
    net: RoadNetwork
    commodities: list[Commodity]
    homes: list[int] = field(default_factory=list)
    works: list[int] = field(default_factory=list)
    time_steps: int = 1
    epoch_duration: float = 0.0
    target: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def time_variant(self) -> bool:
        return self.time_steps > 1

    def total_demand(self) -> float:
        return float(sum(c.demand for c in self.commodities))

    def expanded(self) -> TimeExpandedNetwork:
        if not self.time_variant:
            raise ValueError("instance is time invariant")
        return TimeExpandedNetwork(self.net, self.time_steps, self.epoch_duration)


def instance_to_dict(inst: Instance) -> dict:
    net = inst.net
    return {
        "format_version": INSTANCE_FORMAT,
        "vertices": [{"id": v, "x": float(x), "y": float(y)} for v, (x, y) in enumerate(net.xy)],
        "arcs": [{"id": a, "tail": int(net.tail[a]), "head": int(net.head[a]),
                  "length": float(net.length[a]), "free_speed": float(net.free_speed[a]),
                  "capacity": float(net.capacity[a]), "lanes": float(net.lanes[a]),
                  "transit_time": float(net.transit_time[a])} for a in range(net.n_arcs)],
        "commodities": [{"origin": c.origin, "destination": c.destination,
                         "demand": float(c.demand), "departure": c.departure}
                        for c in inst.commodities],
        "homes": [int(v) for v in inst.homes],
        "works": [int(v) for v in inst.works],
        "time_steps": inst.time_steps,
        "epoch_duration": float(inst.epoch_duration),
        "meta": inst.meta,
    }


def instance_from_dict(d: dict, target=None) -> Instance:
    if d.get("format_version") != INSTANCE_FORMAT:
        raise ValueError(f"unsupported instance format {d.get('format_version')!r}")
    verts = sorted(d["vertices"], key=lambda r: r["id"])
    arcs = sorted(d["arcs"], key=lambda r: r["id"])
    if [r["id"] for r in arcs] != list(range(len(arcs))):
        raise ValueError("arc ids must be dense 0..|A|-1")
    if [r["id"] for r in verts] != list(range(len(verts))):
        raise ValueError("vertex ids must be dense 0..|V|-1")
    n = len(verts)
    for r in arcs:
        if not (0 <= r["tail"] < n and 0 <= r["head"] < n):
            raise ValueError(f"arc {r['id']} references a missing vertex")
    col = {k: [r[k] for r in arcs] for k in ("tail", "head", "length", "free_speed",
                                            "capacity", "lanes", "transit_time")}
    net = RoadNetwork([(r["x"], r["y"]) for r in verts], col["tail"], col["head"], col["length"],
                      col["free_speed"], col["capacity"], col["lanes"], col["transit_time"])
    coms = [Commodity(int(c["origin"]), int(c["destination"]), float(c["demand"]),
                      int(c.get("departure", 0))) for c in d["commodities"]]
    return Instance(net, coms, list(d.get("homes", [])), list(d.get("works", [])),
                    int(d.get("time_steps", 1)), float(d.get("epoch_duration", 0.0)),
                    target, dict(d.get("meta", {})))


def dumps_instance(inst: Instance) -> str:
    return json.dumps(instance_to_dict(inst), sort_keys=True, indent=1) + "\n"


def save_instance(inst: Instance, path) -> None:
    with open(path, "w") as f:
        f.write(dumps_instance(inst))


def load_instance(path, target_path=None) -> Instance:
    with open(path) as f:
        inst = instance_from_dict(json.load(f))
    if target_path is not None:
        inst.target = read_flow_csv(target_path, inst.net.n_arcs,
                                    inst.time_steps if inst.time_variant else None)
    return inst


def write_flow_csv(path, flow) -> None:
    """`arc_id,flow` for a vector, `arc_id,epoch,flow` for an (arcs x epochs) matrix."""
    flow = np.asarray(flow, dtype=float)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        if flow.ndim == 1:
            w.writerow(["arc_id", "flow"])
            w.writerows((a, repr(float(v))) for a, v in enumerate(flow))
        else:
            w.writerow(["arc_id", "epoch", "flow"])
            for a in range(flow.shape[0]):
                w.writerows((a, t, repr(float(flow[a, t]))) for t in range(flow.shape[1]))


def read_flow_csv(path, n_arcs: int | None = None, epochs: int | None = None) -> np.ndarray:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    header, body = rows[0], rows[1:]
    if header == ["arc_id", "flow"]:
        out = np.zeros(n_arcs if n_arcs is not None else len(body))
        for a, v in body:
            out[int(a)] = float(v)
    elif header == ["arc_id", "epoch", "flow"]:
        A = n_arcs if n_arcs is not None else 1 + max(int(r[0]) for r in body)
        T = epochs if epochs is not None else 1 + max(int(r[1]) for r in body)
        out = np.zeros((A, T))
        for a, t, v in body:
            out[int(a), int(t)] = float(v)
    else:
        raise ValueError(f"unrecognised flow CSV header {header}")
    if n_arcs is not None and out.shape[0] != n_arcs:
        raise ValueError("flow CSV does not match the network")
    return out
