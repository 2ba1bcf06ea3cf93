"""Synthetic road networks, location layouts, ground-truth oracles and datasets."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from ._seeding import derive_seed
from .equilibrium import LatencyParams, solve_we
from .flow_oracles import linear_min_multiflow
from .network import (Commodity, Instance, RoadNetwork, dumps_instance, load_instance,
                      write_flow_csv)

LAYOUTS = ("HE", "LE", "LEU", "HEU", "SW")
ORACLES = ("EasyMCFP", "EasyWE", "RandomMCFP", "RandomWE")
MANIFEST_FORMAT = 1
HORIZON_S = 3600.0
WE_TOL = 1e-8


def normalize_oracle(name: str) -> str:
    key = name.replace("-", "").replace("_", "").lower()
    for o in ORACLES:
        if o.lower() == key:
            return o
    raise ValueError(f"unknown oracle {name!r}; expected one of {', '.join(ORACLES)}")


def normalize_layout(name: str) -> str:
    key = name.upper().replace("-", "")
    if key == "SWTV":
        key = "SW"
    if key not in LAYOUTS:
        raise ValueError(f"unknown layout {name!r}; expected one of {', '.join(LAYOUTS)}")
    return key


@dataclass
class ScenarioSpec:
    layout: str = "LE"
    oracle: str = "EasyWE"
    agents: int = 30  # trips; each person makes a morning and an evening one
    size: int = 6
    time_steps: int = 1
    seed: int = 0
    n_train: int = 9
    n_val: int = 5
    n_test: int = 6
    spacing: float = 400.0
    jitter: float = 0.25
    shortcut_prob: float = 0.5
    epoch_duration: float | None = None

    def __post_init__(self):
        self.layout = normalize_layout(self.layout)
        self.oracle = normalize_oracle(self.oracle)
        if self.agents < 2 or self.agents % 2:
            raise ValueError("agent count must be even and at least 2")
        if self.size < 2:
            raise ValueError("network size must be at least 2")
        if self.time_steps < 1:
            raise ValueError("time steps must be at least 1")
        if min(self.n_train, self.n_val, self.n_test) < 0 or self.n_train == 0:
            raise ValueError("split sizes must be nonnegative with a nonempty training split")

    @property
    def n_instances(self) -> int:
        return self.n_train + self.n_val + self.n_test

    def epoch_seconds(self) -> float:
        if self.time_steps == 1:
            return 0.0
        return self.epoch_duration or HORIZON_S / self.time_steps


def generate_network(seed: int, size: int, spacing: float = 400.0, jitter: float = 0.25,
                     shortcut_prob: float = 0.5) -> RoadNetwork:
    """Jittered size x size grid, bidirectional axis roads plus random diagonal shortcuts.

    Every road is a pair of opposite arcs, so the network is strongly connected.
    jitter=0 with shortcut_prob=0 gives the plain grid.
    """
    if size < 2:
        raise ValueError("network size must be at least 2")
    rng = np.random.default_rng(seed)
    gx, gy = np.meshgrid(np.arange(size), np.arange(size))
    xy = np.stack([gx.ravel(), gy.ravel()], axis=1) * spacing
    xy = xy + rng.uniform(-jitter, jitter, xy.shape) * spacing
    roads = []
    for r in range(size):
        for c in range(size):
            v = r * size + c
            if c + 1 < size:
                roads.append((v, v + 1))
            if r + 1 < size:
                roads.append((v, v + size))
    for r in range(size - 1):
        for c in range(size - 1):
            if rng.random() < shortcut_prob:
                v = r * size + c
                roads.append((v, v + size + 1) if rng.random() < 0.5 else (v + 1, v + size))
    tail = [a for u, w in roads for a in (u, w)]
    head = [a for u, w in roads for a in (w, u)]
    return RoadNetwork(xy, tail, head)


def grid_layout_network(size: int, spacing: float = 400.0) -> RoadNetwork:
    return generate_network(0, size, spacing, jitter=0.0, shortcut_prob=0.0)


def _quarter(net: RoadNetwork, upper: bool) -> np.ndarray:
    lo, hi = net.xy.min(axis=0), net.xy.max(axis=0)
    mid = 0.5 * (lo + hi)
    if upper:
        inside = np.all(net.xy >= mid - 1e-9, axis=1)
    else:
        inside = np.all(net.xy <= mid + 1e-9, axis=1)
    return np.flatnonzero(inside)


def _draw(rng, candidates, n, p=None, replace=None):
    if replace is None:
        replace = p is not None or n > len(candidates)
    return rng.choice(candidates, n, replace=replace, p=p)


def place_locations(net: RoadNetwork, layout: str, count: int, seed: int,
                    replace: bool | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Home and work vertex per person.

    HE/HEU: uniform over vertices. LE/LEU: homes in the top-right and works in the
    bottom-left quarter of the bounding box. SW: vertex probability proportional
    to its degree. A work vertex equal to its home is redrawn.
    """
    layout = normalize_layout(layout)
    rng = np.random.default_rng(seed)
    V = np.arange(net.n_vertices)
    p = None
    if layout in ("LE", "LEU"):
        home_pool, work_pool = _quarter(net, True), _quarter(net, False)
    else:
        home_pool = work_pool = V
        if layout == "SW":
            deg = np.bincount(net.tail, minlength=net.n_vertices) + \
                np.bincount(net.head, minlength=net.n_vertices)
            p = deg / deg.sum()
    homes = _draw(rng, home_pool, count, p, replace)
    works = _draw(rng, work_pool, count, p, replace)
    for i in np.flatnonzero(homes == works):
        pool = work_pool[work_pool != homes[i]]
        q = None if p is None else p[pool] / p[pool].sum()
        works[i] = rng.choice(pool, p=q)
    return homes.astype(np.int64), works.astype(np.int64)


def make_commodities(homes, works, time_steps: int = 1) -> list[Commodity]:
    """Morning home->work trips at epoch 0, evening work->home trips at epoch T//2."""
    homes, works = list(homes), list(works)
    if len(homes) != len(works):
        raise ValueError("every home needs a matching work location")
    evening = time_steps // 2 if time_steps > 1 else 0
    out = [Commodity(int(h), int(w), 1.0, 0) for h, w in zip(homes, works)]
    out += [Commodity(int(w), int(h), 1.0, evening) for h, w in zip(homes, works)]
    return out


def oracle_costs(net: RoadNetwork, oracle: str, seed: int):
    """Arc costs (MCFP oracles) or a (2, arcs) latency coefficient matrix (WE oracles)."""
    oracle = normalize_oracle(oracle)
    rng = np.random.default_rng(seed)
    A = net.n_arcs
    if oracle == "EasyMCFP":
        return np.asarray(net.length, dtype=float)
    if oracle == "RandomMCFP":
        return rng.uniform(0.0, 100.0, A)
    if oracle == "EasyWE":
        return np.vstack([net.length, np.ones(A)])
    free = rng.uniform(1.0, 100.0, A)
    slope = rng.uniform(1.0, 20.0, A)
    return np.vstack([free, slope])


def oracle_target(inst: Instance, oracle: str, seed: int) -> np.ndarray:
    """Ground-truth flow: per arc, or (arcs x epochs) for time-variant instances."""
    oracle = normalize_oracle(oracle)
    coef = oracle_costs(inst.net, oracle, seed)
    linear = oracle.endswith("MCFP")
    if inst.time_variant:
        te = inst.expanded()
        graph = te.graph
        coms = [te.expand_commodity(c) for c in inst.commodities]
        # road arcs inherit their base coefficients; arrival arcs are free
        road = np.tile(coef, te.epochs) if linear else np.tile(coef, (1, te.epochs))
        pad = te.n_arcs - te.road_arc_count
        coef = np.concatenate([road, np.zeros(pad)]) if linear else \
            np.hstack([road, np.zeros((2, pad))])
    else:
        graph, coms = inst.net, inst.commodities
    if linear:
        flow = linear_min_multiflow(graph, coef, np.inf, coms).aggregated
    else:
        flow = solve_we(graph, coms, LatencyParams(coef), tol=WE_TOL, max_iter=100000).aggregated
    return te.road_matrix(flow) if inst.time_variant else flow


def make_instance(spec: ScenarioSpec, index: int) -> Instance:
    inst_seed = derive_seed(spec.seed, "instance", index)
    if spec.layout in ("LEU", "HEU"):
        net = grid_layout_network(spec.size, spec.spacing)
    else:
        net = generate_network(derive_seed(inst_seed, "network"), spec.size, spec.spacing,
                               spec.jitter, spec.shortcut_prob)
    people = spec.agents // 2
    homes, works = place_locations(net, spec.layout, people, derive_seed(inst_seed, "locations"))
    coms = make_commodities(homes, works, spec.time_steps)
    inst = Instance(net, coms, homes.tolist(), works.tolist(), spec.time_steps,
                    spec.epoch_seconds(),
                    meta={"layout": spec.layout, "oracle": spec.oracle, "index": index,
                          "seed": inst_seed})
    inst.target = oracle_target(inst, spec.oracle, derive_seed(inst_seed, "oracle"))
    return inst


def split_indices(spec: ScenarioSpec) -> dict[str, list[int]]:
    a, b = spec.n_train, spec.n_train + spec.n_val
    return {"train": list(range(a)), "val": list(range(a, b)),
            "test": list(range(b, spec.n_instances))}


def build_dataset(spec: ScenarioSpec, out_dir) -> str:
    """Write one JSON + one CSV per instance and a manifest; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    entries, seeds = [], []
    for i in range(spec.n_instances):
        inst = make_instance(spec, i)
        name = f"instance_{i:03d}.json"
        tname = f"target_{i:03d}.csv"
        with open(os.path.join(out_dir, name), "w") as f:
            f.write(dumps_instance(inst))
        write_flow_csv(os.path.join(out_dir, tname), inst.target)
        entries.append({"instance": name, "target": tname})
        seeds.append(inst.meta["seed"])
    manifest = {"format_version": MANIFEST_FORMAT, "spec": asdict(spec), "seeds": seeds,
                "split": split_indices(spec), "instances": entries}
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as f:
        f.write(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return path


class ScenarioDataset:
    def __init__(self, root, manifest: dict, instances: list[Instance]):
        self.root = root
        self.manifest = manifest
        self.instances = instances
        self.split = {k: list(v) for k, v in manifest["split"].items()}

    @property
    def spec(self) -> ScenarioSpec:
        return ScenarioSpec(**self.manifest["spec"])

    def subset(self, name: str) -> list[Instance]:
        if name not in self.split:
            raise KeyError(f"unknown split {name!r}")
        return [self.instances[i] for i in self.split[name]]


def load_manifest(path) -> dict:
    if os.path.isdir(path):
        path = os.path.join(path, "manifest.json")
    with open(path) as f:
        m = json.load(f)
    if m.get("format_version") != MANIFEST_FORMAT:
        raise ValueError(f"unsupported manifest format {m.get('format_version')!r}")
    return m


def load_dataset(path) -> ScenarioDataset:
    root = path if os.path.isdir(path) else os.path.dirname(path)
    m = load_manifest(path)
    idx = sorted(i for v in m["split"].values() for i in v)
    if len(set(idx)) != len(idx):
        raise ValueError("dataset splits overlap")
    insts = [load_instance(os.path.join(root, e["instance"]), os.path.join(root, e["target"]))
             for e in m["instances"]]
    return ScenarioDataset(root, m, insts)


def regenerate(manifest_path, out_dir) -> str:
    return build_dataset(ScenarioSpec(**load_manifest(manifest_path)["spec"]), out_dir)


def gini(values) -> float:
    x = np.sort(np.abs(np.asarray(values, dtype=float).ravel()))
    n = len(x)
    if n == 0 or x.sum() == 0:
        return 0.0
    return float((2 * np.arange(1, n + 1) - n - 1) @ x / (n * x.sum()))
