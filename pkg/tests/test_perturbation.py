import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trafficeq.network import Commodity, Digraph, grid_network, pigou_network
from trafficeq.perturbation import (PerturbationConfig, draw_noise, is_acyclic, mc_stderr,
                                    perturbed_fy_gradient, perturbed_fy_loss_surrogate,
                                    perturbed_linear_prediction, perturbed_linear_samples,
                                    perturbed_polynomial_fy_gradient,
                                    perturbed_polynomial_samples)

PIGOU1 = [Commodity(0, 1, 1.0)]


def test_dominance_is_deterministic():
    y = perturbed_linear_prediction([0.0, -100.0], pigou_network(), np.inf, PIGOU1,
                                    PerturbationConfig(64, 1.0, 0))
    assert y.tolist() == [1.0, 0.0]


def test_symmetric_pigou_splits_evenly():
    y = perturbed_linear_prediction([0.0, 0.0], pigou_network(), np.inf, PIGOU1,
                                    PerturbationConfig(10000, 1.0, 0))
    assert np.allclose(y, [0.5, 0.5], atol=0.02)


def test_antithetic_pairs_cancel():
    z = draw_noise(PerturbationConfig(6, 0.5, 1), 3)
    assert z.shape == (6, 3)
    assert np.allclose(z[0::2], -z[1::2])


def test_zero_samples_is_unperturbed_solve():
    s = perturbed_linear_samples([1.0, 0.0], pigou_network(), np.inf, PIGOU1,
                                 PerturbationConfig(0, 1.0, 0))
    assert s.mean.tolist() == [1.0, 0.0]
    assert s.values.tolist() == [1.0]


def test_fy_gradient_is_mean_minus_target():
    g = perturbed_fy_gradient([0.0, 0.0], [1.0, 0.0], pigou_network(), np.inf, PIGOU1,
                              PerturbationConfig(10000, 1.0, 0))
    assert np.allclose(g, [-0.5, 0.5], atol=0.02)


def test_mask_freezes_arcs():
    s = perturbed_linear_samples([0.0, -0.5], pigou_network(), np.inf, PIGOU1,
                                 PerturbationConfig(200, 1.0, 2), mask=np.array([True, False]))
    # arc 1 keeps cost 0.5, so arc 0 wins exactly when its noise exceeds -0.5
    assert 0.6 < s.mean[0] < 0.8


def test_capacities_bind_in_every_sample():
    s = perturbed_linear_samples([0.0, 0.0], pigou_network(), [1.5, 1.5], [Commodity(0, 1, 2.0)],
                                 PerturbationConfig(20, 1.0, 0))
    assert np.all(s.flows <= 1.5 + 1e-9)
    assert np.allclose(s.flows.sum(axis=1), 2.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_surrogate_is_convex_in_theta(seed):
    # common noise makes the surrogate a max of linear functions of theta
    rng = np.random.default_rng(seed)
    net = grid_network(2, 3)
    coms = [Commodity(0, 5, 1.0)]
    y = np.zeros(net.n_arcs)
    y[[0, 1, 6]] = 1.0  # 0 -> 1 -> 2 -> 5
    cfg = PerturbationConfig(8, 1.0, seed)
    t1, t2 = rng.normal(0, 1, (2, net.n_arcs))
    f = lambda t: perturbed_fy_loss_surrogate(t, y, net, np.inf, coms, cfg)
    assert f(0.5 * (t1 + t2)) <= 0.5 * (f(t1) + f(t2)) + 1e-9


def test_stderr_ratio_per_arc():
    net = grid_network(3, 3)
    coms = [Commodity(0, 8, 1.0)]
    theta = -np.ones(net.n_arcs)
    s64 = perturbed_linear_samples(theta, net, np.inf, coms, PerturbationConfig(64, 1.0, 0))
    s256 = perturbed_linear_samples(theta, net, np.inf, coms, PerturbationConfig(256, 1.0, 1000))
    a, b = mc_stderr(s64.flows, True), mc_stderr(s256.flows, True)
    ratio = b[a > 0] / a[a > 0]
    assert np.all((0.35 <= ratio) & (ratio <= 0.72))


def test_acyclicity():
    assert is_acyclic(grid_network(3, 3))
    assert not is_acyclic(grid_network(2, 2, bidirectional=True))
    assert not is_acyclic(Digraph(2, [0, 1], [1, 0]))


def test_polynomial_layer_unperturbed_pigou():
    theta = np.array([[1.0, 2.0], [1.0, 1.0]])
    coms = [Commodity(0, 1, 2.0)]
    cfg = PerturbationConfig(0, 1.0, 0)
    s = perturbed_polynomial_samples(theta, pigou_network(), coms, cfg, tol=1e-12)
    assert np.allclose(s.mean, [1.5, 0.5], atol=1e-6)
    assert np.allclose(s.mu, [[1.5, 0.5], [1.125, 0.125]], atol=1e-6)
    g = perturbed_polynomial_fy_gradient(theta, [2.0, 0.0], pigou_network(), coms, cfg, tol=1e-12)
    assert np.allclose(g, [[-0.5, 0.5], [-0.875, 0.125]], atol=1e-6)


def test_polynomial_layer_rejects_negative_coefficients():
    with pytest.raises(ValueError):
        perturbed_polynomial_samples([[-1.0, 1.0]], pigou_network(), PIGOU1,
                                     PerturbationConfig(2, 1.0, 0))


def _scaled_stderr(seed):
    net = grid_network(3, 3)
    coms = [Commodity(0, 8, 1.0)]
    theta = -np.ones(net.n_arcs)
    out = []
    for k, M in enumerate([16, 64, 256]):
        s = perturbed_linear_samples(theta, net, np.inf, coms, PerturbationConfig(M, 1.0, seed * 10 + k))
        out.append(mc_stderr(s.flows, True) * np.sqrt(M))
    out = np.array(out)
    live = out.min(axis=0) > 0
    return out[:, live].max(axis=0) / out[:, live].min(axis=0)


def test_stderr_scales_as_inverse_root_m():
    assert np.all(_scaled_stderr(0) <= 1.5)
    assert all(np.median(_scaled_stderr(seed)) <= 1.5 for seed in range(1, 10))


def test_constant_latencies_give_all_or_nothing():
    theta = np.array([[1.0, 2.0], [0.0, 0.0]])
    s = perturbed_polynomial_samples(theta, pigou_network(), [Commodity(0, 1, 2.0)],
                                     PerturbationConfig(0, 1.0, 0))
    assert s.mean.tolist() == [2.0, 0.0]


def test_matching_samples_give_zero_gradient():
    g = perturbed_fy_gradient([0.0, -100.0], [1.0, 0.0], pigou_network(), np.inf, PIGOU1,
                              PerturbationConfig(16, 1.0, 0))
    assert np.all(g == 0.0)
