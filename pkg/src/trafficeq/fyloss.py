"""Exact Fenchel-Young loss for the squared-norm regularizer over the flow set."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .equilibrium import project
from .network import aggregate_residual, supply_vector

DUST_TOL = 1e-6


@dataclass
class LossReport:
    loss: float
    gradient: np.ndarray
    prediction: np.ndarray
    bregman: float | None = None


def bregman_divergence_euclidean(p, q) -> float:
    d = np.asarray(p, dtype=float) - np.asarray(q, dtype=float)
    return 0.5 * float(d @ d)


def _clean_target(net, commodities, target):
    """Project serialization dust off the target; reject genuinely infeasible ones."""
    y = np.asarray(target, dtype=float)
    if y.shape != (net.n_arcs,):
        raise ValueError("target does not match the network")
    res = aggregate_residual(net, y, commodities)
    if res <= 1e-9:
        return y
    if res > DUST_TOL or y.min() < -DUST_TOL:
        raise ValueError(f"target violates flow conservation (residual {res:.3g})")
    # least-norm correction onto the affine hull {y : divergence(y) = supplies}
    Amat = np.zeros((net.n_vertices, net.n_arcs))
    Amat[net.tail, np.arange(net.n_arcs)] += 1.0
    Amat[net.head, np.arange(net.n_arcs)] -= 1.0
    r = supply_vector(net.n_vertices, commodities) - Amat @ y
    return y + np.linalg.lstsq(Amat, r, rcond=None)[0]


def euclidean_fy_loss(theta, target, net, commodities, tol: float = 1e-12,
                      max_iter: int = 10000, weights=None, cycles: str = "error") -> LossReport:
    """L(theta; y) = [theta.yhat - psi(yhat)] - [theta.y - psi(y)], yhat the projection.

    psi(y) = 1/2 sum_a w_a y_a^2 with unit weights by default.
    """
    theta = np.asarray(theta, dtype=float)
    y = _clean_target(net, commodities, target)
    w = np.ones(net.n_arcs) if weights is None else np.asarray(weights, dtype=float)
    yhat = project(net, commodities, theta, tol=tol, max_iter=max_iter, weights=w,
                   cycles=cycles).aggregated

    def value(v):
        return float(theta @ v - 0.5 * (w * v) @ v)

    loss = value(yhat) - value(y)
    d = y - yhat
    return LossReport(loss, yhat - y, yhat, 0.5 * float((w * d) @ d))


def fy_sandwich_check(theta, target, net, commodities, **kw) -> tuple[float, float, bool]:
    rep = euclidean_fy_loss(theta, target, net, commodities, **kw)
    ok = 0.0 <= rep.bregman <= rep.loss + 1e-7
    return rep.bregman, rep.loss, ok
