"""Gaussian-perturbed combinatorial layers and their Monte-Carlo gradients.

Linear layer (constant latencies): samples of the capacitated min-cost
multiflow under costs -(theta + Z). Polynomial layer: samples of the Wardrop
equilibrium under perturbed, nonnegative latency coefficients.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .equilibrium import LatencyParams, antiderivatives, solve_we
from .flow_oracles import ColumnPool, linear_min_multiflow
from .network import Digraph


@dataclass
class PerturbationConfig:
    samples: int = 8
    epsilon: float = 1.0
    seed: int = 0
    antithetic: bool = True

    def __post_init__(self):
        if self.samples < 0:
            raise ValueError("sample count must be nonnegative")
        if not self.epsilon > 0:
            raise ValueError("perturbation amplitude must be positive")


def draw_noise(cfg: PerturbationConfig, shape) -> np.ndarray:
    """(M, *shape) array of scaled standard normals; antithetic pairs interleaved."""
    shape = tuple(np.atleast_1d(shape))
    M = cfg.samples
    rng = np.random.default_rng(cfg.seed)
    if M == 0:
        return np.zeros((0,) + shape)
    if cfg.antithetic:
        half = rng.standard_normal(((M + 1) // 2,) + shape)
        z = np.empty((2 * len(half),) + shape)
        z[0::2] = half
        z[1::2] = -half
        z = z[:M]
    else:
        z = rng.standard_normal((M,) + shape)
    return cfg.epsilon * z


def is_acyclic(net: Digraph) -> bool:
    indeg = np.bincount(net.head, minlength=net.n_vertices)
    stack = list(np.flatnonzero(indeg == 0))
    seen = 0
    while stack:
        v = stack.pop()
        seen += 1
        for a in net.out_of(v):
            w = net.head[a]
            indeg[w] -= 1
            if indeg[w] == 0:
                stack.append(w)
    return seen == net.n_vertices


@dataclass
class LinearSamples:
    mean: np.ndarray  # Monte-Carlo prediction
    flows: np.ndarray  # (M', arcs) per-sample optimal vertices
    values: np.ndarray  # per-sample optimal value of max (theta+Z)^T y
    noise: np.ndarray


def _sample_costs(theta, z, mask, nonneg):
    pert = theta.copy()
    if mask is None:
        pert += z
    else:
        pert[mask] += z[mask]
    costs = -pert
    if nonneg:
        costs = np.maximum(costs, 0.0)
    return costs


def perturbed_linear_samples(theta, net: Digraph, capacities, commodities, cfg: PerturbationConfig,
                             pool: ColumnPool | None = None, mask=None,
                             nonneg: bool | str = "auto") -> LinearSamples:
    """Monte-Carlo average of min-cost multiflows under costs -(theta + Z).

    On graphs with cycles the sampled costs are clamped at zero (nonneg="auto"),
    because negative-cost cycles make elementary-path pricing ill-posed.
    M = 0 gives one unperturbed solve.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (net.n_arcs,):
        raise ValueError("theta does not match the network")
    if nonneg == "auto":
        nonneg = not is_acyclic(net)
    pool = ColumnPool() if pool is None else pool
    z = draw_noise(cfg, net.n_arcs)
    if cfg.samples == 0:
        z = np.zeros((1, net.n_arcs))
    flows = np.zeros((len(z), net.n_arcs))
    values = np.zeros(len(z))
    for m in range(len(z)):
        costs = _sample_costs(theta, z[m], mask, nonneg)
        sol = linear_min_multiflow(net, costs, capacities, commodities, pool=pool)
        flows[m] = sol.aggregated
        values[m] = -sol.objective
    mean = flows.sum(axis=0) / len(z)
    return LinearSamples(mean, flows, values, z)


def perturbed_linear_prediction(theta, net, capacities, commodities, cfg, **kw) -> np.ndarray:
    return perturbed_linear_samples(theta, net, capacities, commodities, cfg, **kw).mean


def perturbed_fy_gradient(theta, target, net, capacities, commodities, cfg, **kw) -> np.ndarray:
    s = perturbed_linear_samples(theta, net, capacities, commodities, cfg, **kw)
    return s.mean - np.asarray(target, dtype=float)


def perturbed_fy_loss_surrogate(theta, target, net, capacities, commodities, cfg, **kw) -> float:
    """Mean sampled optimum minus theta^T target (the loss up to a theta-free constant)."""
    s = perturbed_linear_samples(theta, net, capacities, commodities, cfg, **kw)
    return float(s.values.mean() - np.asarray(theta) @ np.asarray(target, dtype=float))


def mc_stderr(samples: np.ndarray, antithetic: bool) -> np.ndarray:
    """Per-arc standard error of the sample mean; antithetic pairs count as one draw."""
    x = np.asarray(samples, dtype=float)
    if antithetic and len(x) >= 2:
        x = 0.5 * (x[0:len(x) - len(x) % 2:2] + x[1:len(x) - len(x) % 2:2])
    if len(x) < 2:
        return np.zeros(x.shape[1:])
    return x.std(axis=0, ddof=1) / np.sqrt(len(x))


@dataclass
class PolynomialSamples:
    mu: np.ndarray  # (K, arcs) feature-space prediction
    mean: np.ndarray  # flow prediction
    flows: np.ndarray
    values: np.ndarray  # per-sample potential minimum
    noise: np.ndarray


def perturbed_polynomial_samples(theta, net: Digraph, commodities, cfg: PerturbationConfig,
                                 mask=None, tol: float = 1e-8, max_iter: int = 20000
                                 ) -> PolynomialSamples:
    """Average of equilibria under coefficients max(theta + Z, 0)."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    K, A = theta.shape
    if A != net.n_arcs:
        raise ValueError("theta does not match the network")
    if np.any(theta < 0):
        raise ValueError("polynomial layer expects nonnegative coefficients")
    z = draw_noise(cfg, (K, A))
    if cfg.samples == 0:
        z = np.zeros((1, K, A))
    flows = np.zeros((len(z), A))
    values = np.zeros(len(z))
    mu = np.zeros((K, A))
    for m in range(len(z)):
        pert = theta.copy()
        if mask is None:
            pert += z[m]
        else:
            pert[:, mask] += z[m][:, mask]
        pert = np.maximum(pert, 0.0)
        sol = solve_we(net, commodities, LatencyParams(pert), tol=tol, max_iter=max_iter)
        flows[m] = sol.aggregated
        values[m] = sol.potential_value
        mu += antiderivatives(sol.aggregated, K)
    n = len(z)
    return PolynomialSamples(mu / n, flows.sum(axis=0) / n, flows, values, z)


def perturbed_polynomial_prediction(theta, net, commodities, cfg, **kw):
    s = perturbed_polynomial_samples(theta, net, commodities, cfg, **kw)
    return s.mu, s.mean


def perturbed_polynomial_fy_gradient(theta, target, net, commodities, cfg, **kw) -> np.ndarray:
    """mu_hat - S(target), with S the rows y**(k+1)/(k+1).

    This is the gradient with respect to the maximization-form parameter; a
    model emitting latency coefficients must flip its sign.
    """
    theta = np.atleast_2d(theta)
    s = perturbed_polynomial_samples(theta, net, commodities, cfg, **kw)
    return s.mu - antiderivatives(np.asarray(target, dtype=float), theta.shape[0])
