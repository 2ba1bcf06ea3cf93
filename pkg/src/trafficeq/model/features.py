"""Per-arc context features and their standardization."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..network import Instance, RoadNetwork

AREA_FACTORS = (1, 2, 5, 10, 15)
BIG_CAPACITY = 1000.0
COUNT_KINDS = ("homes", "works", "nodes", "arcs", "big_arcs")
ARC_ATTRS = ("length", "free_speed", "capacity", "lanes", "transit_time")
DEGREE_NAMES = ("tail_out", "tail_in", "head_out", "head_in")
TIME_NAMES = ("to_morning", "to_morning_sq", "to_morning_cu",
              "to_evening", "to_evening_sq", "to_evening_cu", "remaining", "sim_time")
EPS = 1e-8


def static_feature_names() -> list[str]:
    names = [f"{k}_r{f}" for k in COUNT_KINDS for f in AREA_FACTORS]
    return names + list(ARC_ATTRS) + list(DEGREE_NAMES)


def max_vertex_distance(net: RoadNetwork) -> float:
    d = net.xy[:, None, :] - net.xy[None, :, :]
    return float(np.sqrt((d ** 2).sum(-1)).max()) if net.n_vertices else 0.0


def _counts_within(points: np.ndarray, centers: np.ndarray, radii) -> np.ndarray:
    """(centers, radii) counts of points within each radius (inclusive)."""
    if len(points) == 0:
        return np.zeros((len(centers), len(radii)))
    d = np.sqrt(((centers[:, None, :] - points[None, :, :]) ** 2).sum(-1))
    return np.stack([(d <= r + 1e-9).sum(axis=1) for r in radii], axis=1).astype(float)


def static_arc_features(inst: Instance) -> np.ndarray:
    """(arcs, 34) raw features measured from each arc midpoint."""
    net = inst.net
    mid = net.arc_midpoints()
    radii = [max_vertex_distance(net) / f for f in AREA_FACTORS]
    homes = net.xy[np.asarray(inst.homes, dtype=np.int64)] if len(inst.homes) else np.zeros((0, 2))
    works = net.xy[np.asarray(inst.works, dtype=np.int64)] if len(inst.works) else np.zeros((0, 2))
    big = net.capacity > BIG_CAPACITY
    blocks = [
        _counts_within(homes, mid, radii),
        _counts_within(works, mid, radii),
        _counts_within(net.xy, mid, radii),
        _counts_within(mid, mid, radii),
        _counts_within(mid[big], mid, radii),
        np.stack([getattr(net, k) for k in ARC_ATTRS], axis=1),
    ]
    outdeg = np.bincount(net.tail, minlength=net.n_vertices)
    indeg = np.bincount(net.head, minlength=net.n_vertices)
    blocks.append(np.stack([outdeg[net.tail], indeg[net.tail],
                            outdeg[net.head], indeg[net.head]], axis=1).astype(float))
    return np.hstack(blocks)


def time_features(epochs: int) -> np.ndarray:
    """(epochs, 8) signed distances to the two rush-hour epochs, their powers, clock."""
    t = np.arange(epochs, dtype=float)
    dm = t - 0.0
    de = t - float(epochs // 2)
    return np.stack([dm, dm ** 2, dm ** 3, de, de ** 2, de ** 3,
                     (epochs - 1) - t, t], axis=1)


@dataclass
class FeatureConfig:
    copies: int = 1  # capacity copies; > 1 appends the capacity index
    time_steps: int = 1  # > 1 emits one row per (epoch, arc)

    def dimension(self) -> int:
        d = len(static_feature_names())
        if self.time_steps > 1:
            d += len(TIME_NAMES)
        if self.copies > 1:
            d += 1
        return d


def extract_features(inst: Instance, cfg: FeatureConfig) -> np.ndarray:
    """Raw feature rows for the arcs the model parameterizes.

    Row order follows the working graph: copy m of arc a at a*M + m; arc a in
    epoch t at t*|A| + a.
    """
    base = static_arc_features(inst)
    if cfg.time_steps > 1 and cfg.copies > 1:
        raise ValueError("capacity copies are not supported on time-expanded instances")
    if cfg.time_steps > 1:
        T, A = cfg.time_steps, base.shape[0]
        tf = time_features(T)
        return np.hstack([np.tile(base, (T, 1)), np.repeat(tf, A, axis=0)])
    if cfg.copies > 1:
        M = cfg.copies
        zeta = np.tile(np.arange(1, M + 1, dtype=float), base.shape[0])
        return np.hstack([np.repeat(base, M, axis=0), zeta[:, None]])
    return base


class Standardizer:
    """Divide each feature by its training mean (or z-score with mode="zscore")."""

    def __init__(self, mode: str = "mean"):
        if mode not in ("mean", "zscore"):
            raise ValueError(f"unknown standardization {mode!r}")
        self.mode = mode
        self.shift = None
        self.scale = None

    def fit(self, rows: np.ndarray) -> "Standardizer":
        rows = np.asarray(rows, dtype=float)
        mean = rows.mean(axis=0)
        if self.mode == "mean":
            self.shift = np.zeros_like(mean)
            self.scale = np.where(np.abs(mean) > EPS, mean, 1.0)
        else:
            std = rows.std(axis=0)
            self.shift = mean
            self.scale = np.where(std > EPS, std, 1.0)
        return self

    def transform(self, rows: np.ndarray) -> np.ndarray:
        if self.scale is None:
            raise RuntimeError("standardizer used before fit")
        return (np.asarray(rows, dtype=float) - self.shift) / self.scale

    def state(self) -> dict:
        return {"mode": self.mode, "shift": self.shift.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_state(cls, st: dict) -> "Standardizer":
        s = cls(st["mode"])
        s.shift = np.asarray(st["shift"], dtype=float)
        s.scale = np.asarray(st["scale"], dtype=float)
        return s
