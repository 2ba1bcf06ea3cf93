import numpy as np
import pytest

from trafficeq.network import Commodity, Digraph, RoadNetwork


def random_capacitated_instance(rng, max_vertices=8, max_commodities=3):
    """Random digraph with a high-capacity Hamiltonian ring, so every trip is feasible."""
    n = int(rng.integers(3, max_vertices + 1))
    arcs = {(v, (v + 1) % n) for v in range(n)}
    for _ in range(int(rng.integers(n, 3 * n))):
        u, w = rng.integers(0, n, 2)
        if u != w:
            arcs.add((int(u), int(w)))
    arcs = sorted(arcs)
    tail = [a[0] for a in arcs]
    head = [a[1] for a in arcs]
    net = Digraph(n, tail, head)
    costs = rng.uniform(0.0, 10.0, len(arcs))
    ring = np.array([(w - u) % n == 1 for u, w in arcs])
    caps = np.where(ring, 1e6, rng.uniform(0.5, 3.0, len(arcs)))
    costs[ring] += 20.0  # the ring is expensive, so cheap arcs saturate first
    coms = []
    for _ in range(int(rng.integers(1, max_commodities + 1))):
        o, d = rng.choice(n, 2, replace=False)
        coms.append(Commodity(int(o), int(d), float(rng.uniform(0.5, 4.0))))
    return net, costs, caps, coms


def diamond_network() -> RoadNetwork:
    """0 -> {1, 2} -> 3: two routes of two arcs each, of different lengths."""
    xy = [(0.0, 0.0), (500.0, 400.0), (300.0, -700.0), (1000.0, 0.0)]
    return RoadNetwork(xy, [0, 0, 1, 2], [1, 2, 3, 3])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def all_simple_paths(net, origin, destination):
    out, stack = [], [(origin, [], {origin})]
    while stack:
        v, arcs, seen = stack.pop()
        if v == destination:
            out.append(arcs)
            continue
        for a in range(net.n_arcs):
            w = int(net.head[a])
            if net.tail[a] == v and w not in seen:
                stack.append((w, arcs + [a], seen | {w}))
    return out


def scipy_path_lp(net, costs, caps, coms):
    """Optimal value of the full path LP, solved by HiGHS; None if infeasible."""
    from scipy.optimize import linprog

    cols = [(j, p) for j, c in enumerate(coms)
            for p in all_simple_paths(net, c.origin, c.destination)]
    cost = np.array([sum(costs[a] for a in p) for _, p in cols])
    A_eq = np.zeros((len(coms), len(cols)))
    A_ub = np.zeros((net.n_arcs, len(cols)))
    for k, (j, p) in enumerate(cols):
        A_eq[j, k] = 1.0
        A_ub[p, k] += 1.0
    caps = np.broadcast_to(np.asarray(caps, dtype=float), (net.n_arcs,))
    finite = np.isfinite(caps)
    res = linprog(cost, A_ub=A_ub[finite] if finite.any() else None,
                  b_ub=caps[finite] if finite.any() else None,
                  A_eq=A_eq, b_eq=[c.demand for c in coms], bounds=(0, None), method="highs")
    return res.fun if res.status == 0 else None
