"""Shared-weight per-arc MLP with hand-written backprop, Adam and SGD."""
from __future__ import annotations

import json

import numpy as np

HIDDEN = (100, 500, 100, 10, 5)
HEADS = ("linear", "softplus", "negated-softplus")
CHECKPOINT_FORMAT = 1


def softplus(z):
    return np.logaddexp(0.0, z)


def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class MlpModel:
    """One MLP per output branch, applied row-wise to a feature matrix.

    Output shape is (rows, branches). Parameters live in a flat list ordered
    branch by branch as W0, b0, W1, b1, ...
    """

    def __init__(self, n_in: int, head: str = "linear", branches: int = 1,
                 hidden=HIDDEN, seed: int = 0):
        if head not in HEADS:
            raise ValueError(f"unknown head {head!r}")
        self.sizes = [int(n_in), *map(int, hidden), 1]
        self.head = head
        self.branches = int(branches)
        rng = np.random.default_rng(seed)
        self.params: list[np.ndarray] = []
        for _ in range(self.branches):
            for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
                lim = np.sqrt(6.0 / fan_in)
                self.params.append(rng.uniform(-lim, lim, (fan_in, fan_out)))
                self.params.append(np.zeros(fan_out))
        self._cache = None

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def _branch(self, b):
        k = 2 * self.n_layers
        return self.params[b * k:(b + 1) * k]

    def forward(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.sizes[0]:
            raise ValueError(f"expected features of width {self.sizes[0]}, got {X.shape}")
        outs, caches = [], []
        for b in range(self.branches):
            p = self._branch(b)
            acts = [X]
            h = X
            for i in range(self.n_layers):
                z = h @ p[2 * i] + p[2 * i + 1]
                h = np.maximum(z, 0.0) if i < self.n_layers - 1 else z
                acts.append(h)
            z = acts[-1][:, 0]
            caches.append((acts, z))
            outs.append(self._head(z))
        self._cache = caches
        return np.stack(outs, axis=1)

    def _head(self, z):
        if self.head == "linear":
            return z.copy()
        if self.head == "softplus":
            return softplus(z)
        return -softplus(z)

    def _head_grad(self, z):
        if self.head == "linear":
            return np.ones_like(z)
        if self.head == "softplus":
            return sigmoid(z)
        return -sigmoid(z)

    def backward(self, grad_out: np.ndarray) -> list[np.ndarray]:
        """Parameter gradients for an upstream gradient of shape (rows, branches)."""
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        G = np.asarray(grad_out, dtype=float).reshape(-1, self.branches)
        grads = []
        for b, (acts, z) in enumerate(self._cache):
            p = self._branch(b)
            g = (G[:, b] * self._head_grad(z))[:, None]
            layer_grads = []
            for i in reversed(range(self.n_layers)):
                h_in = acts[i]
                layer_grads.append((h_in.T @ g, g.sum(axis=0)))
                if i > 0:
                    g = (g @ p[2 * i].T) * (acts[i] > 0)
            for gw, gb in reversed(layer_grads):
                grads += [gw, gb]
        return grads

    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def save(self, path, meta: dict | None = None) -> None:
        info = {"format_version": CHECKPOINT_FORMAT, "sizes": self.sizes, "head": self.head,
                "branches": self.branches, "meta": meta or {}}
        arrays = {f"p{i}": p for i, p in enumerate(self.params)}
        with open(path, "wb") as f:
            np.savez(f, info=np.array(json.dumps(info, sort_keys=True)), **arrays)

    @classmethod
    def load(cls, path) -> tuple["MlpModel", dict]:
        with np.load(path, allow_pickle=False) as z:
            info = json.loads(str(z["info"]))
            if info.get("format_version") != CHECKPOINT_FORMAT:
                raise ValueError("unsupported checkpoint format")
            sizes = info["sizes"]
            m = cls(sizes[0], info["head"], info["branches"], hidden=sizes[1:-1])
            m.params = [z[f"p{i}"].astype(float) for i in range(len(m.params))]
        return m, info["meta"]


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class Sgd:
    def __init__(self, params, lr=1e-3):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


def make_optimizer(name: str, params, lr: float):
    if name == "adam":
        return Adam(params, lr)
    if name == "sgd":
        return Sgd(params, lr)
    raise ValueError(f"unknown optimizer {name!r}")
