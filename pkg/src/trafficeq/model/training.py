"""Training regimes: supervised flow regression and Fenchel-Young pipelines.

Each instance is turned into a workspace holding the graph the layer works on
(the road network, its capacity-expanded multigraph, or its time expansion),
the arcs whose parameters come from the model, their raw features, and the
target expressed on the working graph.
"""
from __future__ import annotations

import csv
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .._seeding import derive_seed
from ..equilibrium import antiderivatives, project
from ..flow_oracles import ColumnPool
from ..fyloss import euclidean_fy_loss
from ..network import (Digraph, ExpandedNetwork, Instance, supply_vector,
                       uniform_thresholds)
from ..perturbation import (PerturbationConfig, perturbed_linear_samples,
                            perturbed_polynomial_samples)
from .features import FeatureConfig, Standardizer, extract_features
from .mlp import HIDDEN, MlpModel, make_optimizer

log = logging.getLogger(__name__)

PIPELINES = ("fnn-baseline", "cl", "pl", "er")
HEAD_OF = {"fnn-baseline": ("linear", 1), "cl": ("negated-softplus", 1),
           "pl": ("softplus", 2), "er": ("linear", 1)}
MAX_RETRIES = 3
MAX_RESTARTS = 3
LAYER_FAILURES = (RuntimeError, FloatingPointError)


@dataclass
class TrainConfig:
    pipeline: str = "cl"
    optimizer: str = "adam"
    lr: float = 1e-3
    batch_size: int = 1
    max_epochs: int = 20
    max_seconds: float | None = None
    patience: int | None = None
    samples: int = 8  # perturbation samples per training step
    inference_samples: int = 32
    epsilon: float = 1.0
    copies: int = 1
    noise: str = "fresh"  # fresh: new draws every step; common: fixed per instance
    standardize: str = "mean"
    seed: int = 0
    threads: int = 1
    hidden: tuple = HIDDEN
    er_tol: float = 1e-9
    pl_tol: float = 1e-6
    baseline_loss: str = "mae"  # mae | mse

    def __post_init__(self):
        if self.pipeline not in PIPELINES:
            raise ValueError(f"unknown pipeline {self.pipeline!r}")
        if not self.lr >= 0:
            raise ValueError("learning rate must be nonnegative")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch size and epoch budget must be positive")
        if self.copies < 1:
            raise ValueError("copies must be at least 1")
        if self.baseline_loss not in ("mse", "mae"):
            raise ValueError("baseline loss must be 'mse' or 'mae'")
        if self.noise not in ("fresh", "common"):
            raise ValueError("noise must be 'fresh' or 'common'")
        if self.max_seconds is not None and not self.max_seconds > 0:
            raise ValueError("wall-clock budget must be positive")
        self.hidden = tuple(int(h) for h in self.hidden)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


class Workspace:
    def __init__(self, inst: Instance, pipeline: str, copies: int = 1):
        self.instance = inst
        self.pipeline = pipeline
        net = inst.net
        A = net.n_arcs
        self.pool = ColumnPool()
        self.expansion = None
        if inst.time_variant:
            if copies > 1 and pipeline == "cl":
                raise ValueError("capacity copies are not supported on time-expanded instances")
            te = inst.expanded()
            self.expansion = te
            self.graph: Digraph = te.graph
            self.commodities = [te.expand_commodity(c) for c in inst.commodities]
            self.learn = np.arange(te.road_arc_count)
            self.capacities = np.full(te.n_arcs, np.inf)
            self.feature_cfg = FeatureConfig(1, inst.time_steps)
        elif pipeline == "cl":
            quantum = inst.total_demand() / copies
            ex = ExpandedNetwork(net, uniform_thresholds(A, copies, quantum))
            self.expansion = ex
            self.graph = ex.graph
            self.commodities = list(inst.commodities)
            self.learn = np.arange(ex.n_arcs)
            self.capacities = ex.copy_capacity.copy()
            self.feature_cfg = FeatureConfig(copies, 1)
        else:
            self.graph = net
            self.commodities = list(inst.commodities)
            self.learn = np.arange(A)
            self.capacities = np.full(A, np.inf)
            self.feature_cfg = FeatureConfig(1, 1)
        self.features = extract_features(inst, self.feature_cfg)
        self.mask = np.zeros(self.graph.n_arcs, dtype=bool)
        self.mask[self.learn] = True
        self.target_graph = None if inst.target is None else self.lift(inst.target)

    def lift(self, target) -> np.ndarray:
        """Express a base-network target on the working graph."""
        target = np.asarray(target, dtype=float)
        if self.instance.time_variant:
            te = self.expansion
            full = np.zeros(te.n_arcs)
            full[:te.road_arc_count] = target.T.ravel()
            # arrival arcs carry whatever conservation leaves at each (vertex, epoch)
            rest = supply_vector(te.graph.n_vertices, self.commodities) - te.graph.divergence(full)
            arr = np.arange(te.road_arc_count, te.n_arcs)
            full[arr] = np.maximum(rest[te.graph.tail[arr]], 0.0)
            return full
        if isinstance(self.expansion, ExpandedNetwork):
            return self.expansion.expand_flow(target)
        return target.copy()

    def collapse(self, flow) -> np.ndarray:
        """Working-graph flow (or road-arc outputs) back to the target's shape."""
        flow = np.asarray(flow, dtype=float)
        if self.instance.time_variant:
            return self.expansion.road_matrix(flow)
        if isinstance(self.expansion, ExpandedNetwork):
            return flow.reshape(self.instance.net.n_arcs, -1).sum(axis=1)
        return flow

    def theta(self, out: np.ndarray) -> np.ndarray:
        """Model outputs (rows, branches) scattered onto the working graph, zero elsewhere."""
        th = np.zeros((out.shape[1], self.graph.n_arcs))
        th[:, self.learn] = out.T
        return th

    def learn_target(self) -> np.ndarray:
        return self.target_graph[self.learn]


def mae(pred, target) -> float:
    return float(np.mean(np.abs(np.asarray(pred, dtype=float) - np.asarray(target, dtype=float))))


def _pert(cfg: TrainConfig, samples: int, seed: int) -> PerturbationConfig:
    return PerturbationConfig(samples, cfg.epsilon, seed)


def layer_gradient(ws: Workspace, out: np.ndarray, cfg: TrainConfig, seed: int):
    """(dL/d outputs, loss value or surrogate) for one instance."""
    pipe = cfg.pipeline
    tgt = ws.target_graph
    if pipe == "fnn-baseline":
        resid = out[:, 0] - ws.learn_target()
        if cfg.baseline_loss == "mae":
            return np.sign(resid)[:, None] / len(resid), float(np.mean(np.abs(resid)))
        return (2.0 / len(resid)) * resid[:, None], float(np.mean(resid ** 2))
    th = ws.theta(out)
    if pipe == "cl":
        s = perturbed_linear_samples(th[0], ws.graph, ws.capacities, ws.commodities,
                                     _pert(cfg, cfg.samples, seed), pool=ws.pool, mask=ws.mask)
        grad = s.mean - tgt
        return grad[ws.learn][:, None], float(s.values.mean() - th[0] @ tgt)
    if pipe == "er":
        rep = euclidean_fy_loss(th[0], tgt, ws.graph, ws.commodities, tol=cfg.er_tol,
                                weights=ws.mask.astype(float), cycles="allow")
        return rep.gradient[ws.learn][:, None], rep.loss
    # pl: the layer maximizes <-c, S(y)>, so the gradient in c flips sign
    s = perturbed_polynomial_samples(th, ws.graph, ws.commodities, _pert(cfg, cfg.samples, seed),
                                     mask=ws.mask, tol=cfg.pl_tol)
    s_target = antiderivatives(tgt, 2)
    grad = s_target - s.mu
    return grad[:, ws.learn].T, float((th * s_target).sum() - s.values.mean())


def layer_prediction(ws: Workspace, out: np.ndarray, cfg: TrainConfig, seed: int) -> np.ndarray:
    """Prediction on the working graph (baseline: clamped raw outputs on learnable arcs)."""
    pipe = cfg.pipeline
    if pipe == "fnn-baseline":
        flow = np.zeros(ws.graph.n_arcs)
        flow[ws.learn] = np.maximum(out[:, 0], 0.0)
        return flow
    th = ws.theta(out)
    M = cfg.inference_samples
    if pipe == "cl":
        return perturbed_linear_samples(th[0], ws.graph, ws.capacities, ws.commodities,
                                        _pert(cfg, M, seed), pool=ws.pool, mask=ws.mask).mean
    if pipe == "er":
        return project(ws.graph, ws.commodities, th[0], tol=cfg.er_tol,
                       weights=ws.mask.astype(float), cycles="allow").aggregated
    return perturbed_polynomial_samples(th, ws.graph, ws.commodities, _pert(cfg, M, seed),
                                        mask=ws.mask, tol=cfg.pl_tol).mean


class TrainedModel:
    """An MLP together with its feature standardizer and the pipeline it was trained for."""

    def __init__(self, model: MlpModel, standardizer: Standardizer, cfg: TrainConfig):
        self.model = model
        self.standardizer = standardizer
        self.cfg = cfg

    def outputs(self, ws: Workspace) -> np.ndarray:
        return self.model.forward(self.standardizer.transform(ws.features))

    def workspace(self, inst: Instance) -> Workspace:
        ws = Workspace(inst, self.cfg.pipeline, self.cfg.copies)
        if ws.features.shape[1] != self.model.sizes[0]:
            raise ValueError("instance features do not match the model "
                             "(time-variant vs static, or a different copy count)")
        return ws

    def predict_on_graph(self, inst: Instance, seed: int | None = None):
        """(workspace, prediction on the working graph)."""
        ws = self.workspace(inst)
        seed = derive_seed(self.cfg.seed, "inference") if seed is None else seed
        return ws, layer_prediction(ws, self.outputs(ws), self.cfg, seed)

    def predict(self, inst: Instance, seed: int | None = None) -> np.ndarray:
        ws, flow = self.predict_on_graph(inst, seed)
        return ws.collapse(flow)

    def save(self, path) -> None:
        self.model.save(path, {"config": self.cfg.to_dict(),
                               "standardizer": self.standardizer.state()})

    @classmethod
    def load(cls, path) -> "TrainedModel":
        model, meta = MlpModel.load(path)
        cfg = TrainConfig(**meta["config"])
        return cls(model, Standardizer.from_state(meta["standardizer"]), cfg)


@dataclass
class TrainResult:
    trained: TrainedModel
    best_val_mae: float
    best_epoch: int
    history: list[dict] = field(default_factory=list)
    skipped: int = 0
    restarts: int = 0


def build_model(n_in: int, cfg: TrainConfig, restart: int = 0) -> MlpModel:
    head, branches = HEAD_OF[cfg.pipeline]
    labels = ("init",) if restart == 0 else ("init", restart)
    return MlpModel(n_in, head, branches, cfg.hidden, seed=derive_seed(cfg.seed, *labels))


def collapsed(model: MlpModel, X: np.ndarray) -> bool:
    """True when every branch maps all rows to the same value (dead ReLU tail)."""
    out = model.forward(X)
    return bool(np.all(out.std(axis=0) <= 1e-9 * (1.0 + np.abs(out).max())))


def instance_step(trained: TrainedModel, ws: Workspace, cfg: TrainConfig, seed_labels):
    """Forward, layer gradient with retries, backward. Returns (grads, loss) or None."""
    out = trained.outputs(ws)
    for attempt in range(MAX_RETRIES + 1):
        seed = derive_seed(cfg.seed, "noise", *seed_labels, attempt)
        try:
            g, loss = layer_gradient(ws, out, cfg, seed)
            break
        except LAYER_FAILURES as exc:
            log.warning("layer solve failed (%s), attempt %d", exc, attempt + 1)
    else:
        return None
    return trained.model.backward(g), loss


def validation_mae(trained: TrainedModel, wss: list[Workspace], cfg: TrainConfig,
                   threads: int = 1) -> tuple[float, list[float]]:
    seed = derive_seed(cfg.seed, "inference")
    outs = [trained.outputs(ws) for ws in wss]

    def one(i):
        ws = wss[i]
        return mae(ws.collapse(layer_prediction(ws, outs[i], cfg, seed)), ws.instance.target)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            per = list(pool.map(one, range(len(wss))))
    else:
        per = [one(i) for i in range(len(wss))]
    return (float(np.mean(per)) if per else float("nan")), per


def train(train_set: list[Instance], val_set: list[Instance], cfg: TrainConfig,
          log_path=None) -> TrainResult:
    if not train_set:
        raise ValueError("training set is empty")
    for inst in list(train_set) + list(val_set):
        if inst.target is None:
            raise ValueError("every training and validation instance needs a target")
    copies = cfg.copies if cfg.pipeline == "cl" else 1
    t_ws = [Workspace(i, cfg.pipeline, copies) for i in train_set]
    v_ws = [Workspace(i, cfg.pipeline, copies) for i in val_set]
    dims = {ws.features.shape[1] for ws in t_ws + v_ws}
    if len(dims) != 1:
        raise ValueError("instances mix static and time-variant feature layouts")
    std = Standardizer(cfg.standardize).fit(np.vstack([ws.features for ws in t_ws]))
    trained = TrainedModel(build_model(dims.pop(), cfg), std, cfg)
    model = trained.model
    opt = make_optimizer(cfg.optimizer, model.params, cfg.lr)
    X_train = std.transform(np.vstack([ws.features for ws in t_ws]))
    # a constant output is only a failure when the targets are not constant themselves
    can_restart = cfg.lr > 0 and np.ptp(np.concatenate([ws.learn_target() for ws in t_ws])) > 1e-9
    restarts = 0

    start = time.perf_counter()
    rows = []
    history = []
    best = (np.inf, 0, [p.copy() for p in model.params])
    skipped = 0

    def evaluate(epoch):
        nonlocal best
        if not v_ws:
            return float("nan")
        val, _ = validation_mae(trained, v_ws, cfg, cfg.threads)
        if val < best[0]:
            best = (val, epoch, [p.copy() for p in model.params])
        return val

    val = evaluate(0)
    rows.append((0, 0, float("nan"), best[0], time.perf_counter() - start))
    history.append({"epoch": 0, "val_mae": val, "loss": float("nan")})
    step = 0
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = np.random.default_rng(derive_seed(cfg.seed, "order", epoch)).permutation(len(t_ws))
        losses = []
        for b0 in range(0, len(order), cfg.batch_size):
            batch = order[b0:b0 + cfg.batch_size]
            step += 1
            acc, n_ok, batch_loss = None, 0, []
            for i in batch:
                labels = ("common", int(i)) if cfg.noise == "common" else (epoch, step, int(i))
                res = instance_step(trained, t_ws[i], cfg, labels)
                if res is None:
                    skipped += 1
                    log.warning("skipping instance %d at step %d after %d retries", i, step,
                                MAX_RETRIES)
                    continue
                grads, loss = res
                acc = grads if acc is None else [a + g for a, g in zip(acc, grads)]
                n_ok += 1
                batch_loss.append(loss)
            if acc is not None:
                opt.step(model.params, [a / n_ok for a in acc])
                losses.extend(batch_loss)
            rows.append((epoch, step, float(np.mean(batch_loss)) if batch_loss else float("nan"),
                         best[0], time.perf_counter() - start))
        if can_restart and restarts < MAX_RESTARTS and collapsed(model, X_train):
            # the narrow ReLU tail died; start over from a fresh derived initialization
            restarts += 1
            log.warning("model output collapsed at epoch %d, reinitializing (%d)", epoch, restarts)
            fresh = build_model(model.sizes[0], cfg, restarts)
            for p, q in zip(model.params, fresh.params):
                p[...] = q
            opt = make_optimizer(cfg.optimizer, model.params, cfg.lr)
        prev_best = best[0]
        val = evaluate(epoch)
        rows[-1] = rows[-1][:3] + (best[0], time.perf_counter() - start)
        history.append({"epoch": epoch, "val_mae": val,
                        "loss": float(np.mean(losses)) if losses else float("nan")})
        stale = 0 if best[0] < prev_best else stale + 1
        if cfg.patience is not None and stale >= cfg.patience:
            break
        if cfg.max_seconds is not None and time.perf_counter() - start > cfg.max_seconds:
            break

    if v_ws:
        for p, q in zip(model.params, best[2]):
            p[...] = q
    if log_path is not None:
        write_log(log_path, rows)
    return TrainResult(trained, float(best[0]), int(best[1]) if v_ws else cfg.max_epochs,
                       history, skipped, restarts)


def write_log(path, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epoch", "step", "loss_surrogate", "val_mae", "wall_clock_s"])
        for e, s, loss, val, wall in rows:
            w.writerow([e, s, "" if np.isnan(loss) else repr(float(loss)),
                        "" if not np.isfinite(val) else repr(float(val)), f"{wall:.3f}"])


def train_baseline(train_set, val_set, cfg: TrainConfig, log_path=None) -> TrainResult:
    cfg = TrainConfig(**{**cfg.to_dict(), "pipeline": "fnn-baseline"})
    return train(train_set, val_set, cfg, log_path)


def train_pipeline(train_set, val_set, layer: str, cfg: TrainConfig, log_path=None) -> TrainResult:
    layer = layer.lower()
    if layer not in ("cl", "pl", "er"):
        raise ValueError(f"unknown layer {layer!r}")
    cfg = TrainConfig(**{**cfg.to_dict(), "pipeline": layer})
    return train(train_set, val_set, cfg, log_path)


def predict(trained: TrainedModel, inst: Instance, seed: int | None = None) -> np.ndarray:
    return trained.predict(inst, seed)
