import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import diamond_network
from trafficeq.equilibrium import euclidean_projection
from trafficeq.fyloss import bregman_divergence_euclidean, euclidean_fy_loss, fy_sandwich_check
from trafficeq.network import Commodity, grid_network, pigou_network

GRID = grid_network(3, 3)
GRID_COMS = [Commodity(0, 8, 2.0), Commodity(3, 5, 1.0)]


def feasible_target(rng, net, coms):
    # projections of random scores are feasible points spread over the polytope
    return euclidean_projection(net, coms, rng.normal(0, 2, net.n_arcs), tol=1e-12)


def test_pigou_reference_values():
    rep = euclidean_fy_loss([1.0, 0.5], [1.0, 0.0], pigou_network(), [Commodity(0, 1, 1.0)])
    assert rep.loss == pytest.approx(0.0625, abs=1e-12)
    assert np.allclose(rep.prediction, [0.75, 0.25], atol=1e-12)
    assert np.allclose(rep.gradient, [-0.25, 0.25], atol=1e-12)
    assert rep.bregman == pytest.approx(0.0625, abs=1e-12)


def test_loss_vanishes_at_own_prediction():
    theta = np.array([0.3, -0.2, 1.0, 0.1])
    net, coms = diamond_network(), [Commodity(0, 3, 2.0)]
    yhat = euclidean_projection(net, coms, theta, tol=1e-12)
    rep = euclidean_fy_loss(theta, yhat, net, coms)
    assert abs(rep.loss) <= 1e-10
    assert np.abs(rep.gradient).max() <= 1e-8


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_nonnegative_and_sandwich(seed):
    rng = np.random.default_rng(seed)
    theta = rng.normal(0, 2, GRID.n_arcs)
    y = feasible_target(rng, GRID, GRID_COMS)
    breg, loss, ok = fy_sandwich_check(theta, y, GRID, GRID_COMS)
    assert loss >= -1e-9
    assert ok


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_midpoint_convexity(seed):
    rng = np.random.default_rng(seed)
    y = feasible_target(rng, GRID, GRID_COMS)
    t1, t2 = rng.normal(0, 2, (2, GRID.n_arcs))
    f = lambda t: euclidean_fy_loss(t, y, GRID, GRID_COMS).loss
    assert f(0.5 * (t1 + t2)) <= 0.5 * (f(t1) + f(t2)) + 1e-9


def test_gradient_matches_central_differences():
    rng = np.random.default_rng(3)
    theta = rng.normal(0, 2, GRID.n_arcs)
    y = feasible_target(rng, GRID, GRID_COMS)
    g = euclidean_fy_loss(theta, y, GRID, GRID_COMS).gradient
    h = 1e-5
    fd = np.zeros_like(theta)
    for a in range(len(theta)):
        e = np.zeros_like(theta)
        e[a] = h
        fd[a] = (euclidean_fy_loss(theta + e, y, GRID, GRID_COMS).loss
                 - euclidean_fy_loss(theta - e, y, GRID, GRID_COMS).loss) / (2 * h)
    assert np.linalg.norm(g - fd) <= 1e-4 * np.linalg.norm(g)


def test_infeasible_target_rejected():
    with pytest.raises(ValueError):
        euclidean_fy_loss([0.0, 0.0], [1.0, 1.0], pigou_network(), [Commodity(0, 1, 1.0)])


def test_serialization_dust_is_tolerated():
    net, coms = pigou_network(), [Commodity(0, 1, 1.0)]
    rep = euclidean_fy_loss([0.0, 0.0], [0.5 + 1e-8, 0.5], net, coms)
    assert rep.loss == pytest.approx(0.0, abs=1e-12)


def test_bregman_is_half_squared_distance():
    assert bregman_divergence_euclidean([1.0, 2.0], [0.0, 0.0]) == pytest.approx(2.5)
