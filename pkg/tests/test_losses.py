import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from buckpinn.control import expert_batch
from buckpinn.losses import (Batch, LossConfig, LossWeights, combine, loss_control, loss_data,
                             loss_phy_backward, loss_phy_forward, total_loss)
from buckpinn.net import Decoded, Normalization
from buckpinn.physics import rollout
from buckpinn.training import make_net

from oracles import fd_gradient_error

CFG = LossConfig()


def _truth_pred(batch: Batch) -> Decoded:
    return Decoded(batch.X.copy(), batch.U.copy(), batch.D.copy(), batch.theta.copy())


@pytest.fixture(scope="module")
def batch(small_dataset):
    return small_dataset.batch(np.arange(0, 600, 60))


@pytest.fixture(scope="module")
def norm(small_dataset):
    return make_net(small_dataset, np.arange(450)).norm


def test_combine_arithmetic():
    assert combine(1, 1, 1, 1) == pytest.approx(12.2)
    assert combine(0, 0, 0, 0) == 0.0
    assert combine(0.3, 5, 7, 9, LossWeights(0.0, 0.0)) == 0.3


def test_weights_nonnegative():
    with pytest.raises(ValueError):
        LossWeights(-0.1, 1.0)


def test_data_loss_hand_case():
    n = 1
    b = Batch(np.zeros((1, 12)), np.zeros((1, 2)), np.zeros(1), np.zeros(1),
              np.array([[[1.0, 2.0]]]), np.array([[0.5]]), np.array([[-1.0]]), np.array([[1e-3, 2e-3]]))
    norm = Normalization.identity(n)
    p = Decoded(np.array([[[2.0, 2.0]]]), np.array([[0.0]]), np.array([[-1.0]]), np.array([[1e-3, 2e-3]]))
    # states: mean(1, 0) = 0.5; duty: 0.25; disturbance 0; parameters 0
    value, _ = loss_data(p, b, norm)
    assert value == pytest.approx(0.75)
    doubled = Decoded(np.array([[[3.0, 2.0]]]), np.array([[-0.5]]), np.array([[-1.0]]), np.array([[1e-3, 2e-3]]))
    assert loss_data(doubled, b, norm)[0] == pytest.approx(4 * 0.75)
    assert loss_data(_truth_pred(b), b, norm)[0] == 0.0


def test_data_gradient_zero_at_truth(batch, norm):
    _, g = loss_data(_truth_pred(batch), batch, norm)
    for a in (g.X, g.U, g.D, g.theta):
        assert not a.any()


def test_forward_loss_small_with_true_inputs(batch, norm):
    """True parameters, disturbance and duties: what remains is the Euler model's own error."""
    p = _truth_pred(batch)
    value, _ = loss_phy_forward(p, batch, norm, CFG)
    assert value < 0.05


def test_forward_loss_one_step_by_hand(batch, norm):
    b = batch.take(slice(0, 1))
    b = Batch(b.inputs, b.x_k, b.u_prev, b.y_ref, b.X[:, :1], b.U[:, :1], b.D[:, :1], b.theta)
    nm = Normalization.identity(1)
    p = _truth_pred(b)
    C, L = b.theta[0]
    v, i = b.x_k[0]
    rolled = np.array([v + 5e-5 / C * (i + b.D[0, 0]), i - 5e-5 / L * v + 5e-5 / L * 50 * b.U[0, 0]])
    expected = 2 * np.mean((b.X[0, 0] - rolled) ** 2)
    assert loss_phy_forward(p, b, nm, CFG)[0] == pytest.approx(expected, rel=1e-12)


def test_backward_loss_exact_inverse(batch, norm):
    p = _truth_pred(batch)
    a, b = 5e-5 / batch.theta[:, 0], 5e-5 / batch.theta[:, 1]
    X = rollout(batch.x_k, batch.U, batch.D, a, b, 50.0)
    p.X = X[:, 1:].copy()
    assert loss_phy_backward(p, batch, norm, CFG)[0] < 1e-10
    p.theta = p.theta * 1.1
    assert loss_phy_backward(p, batch, norm, CFG)[0] > 0


def test_control_loss_reduces_to_J_when_imitation_exact(batch, norm):
    p = _truth_pred(batch)
    a, b = 5e-5 / p.theta[:, 0], 5e-5 / p.theta[:, 1]
    sol = expert_batch(batch.x_k, batch.y_ref, p.D[:, 0], batch.u_prev, a, b, 50.0, 5.0, 1.0, batch.n)
    ut = np.clip(sol.U, 0, 1)
    bt = Batch(batch.inputs, batch.x_k, batch.u_prev, batch.y_ref, batch.X, ut, batch.D, batch.theta)
    p.U = ut.copy()
    value, _, terms = loss_control(p, bt, norm, CFG, details=True)
    assert np.abs(terms.pairs).max() == 0.0
    assert value == pytest.approx(terms.J.mean())


def test_total_is_weighted_sum(batch, norm):
    p = _truth_pred(batch)
    p.U = p.U + 0.01
    br, _ = total_loss(p, batch, norm, CFG)
    assert br.total == pytest.approx(0.6 * (br.phy_forward + br.phy_backward) + br.data + 10 * br.control)
    br0, _ = total_loss(p, batch, norm, LossConfig(LossWeights(0.0, 0.0)))
    assert br0.total == br0.data == br.data


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_terms_nonnegative(small_dataset, norm, seed):
    rng = np.random.default_rng(seed)
    b = small_dataset.batch(rng.choice(600, 8))
    p = Decoded(b.X + rng.normal(0, 1, b.X.shape), np.clip(b.U + rng.normal(0, 0.1, b.U.shape), -1, 2),
                b.D + rng.normal(0, 1, b.D.shape), b.theta * np.exp(rng.normal(0, 0.3, b.theta.shape)))
    for f in (lambda: loss_data(p, b, norm), lambda: loss_phy_forward(p, b, norm, CFG),
              lambda: loss_phy_backward(p, b, norm, CFG), lambda: loss_control(p, b, norm, CFG)):
        assert f()[0] >= 0.0


@pytest.mark.parametrize("term", ["data", "phy_forward", "phy_backward", "control", None])
def test_gradient_finite_differences(small_dataset, term, rng):
    """Full mode is the exact gradient of the loss value, so it must match central differences."""
    mode = "full"
    net = make_net(small_dataset, np.arange(450), hidden=(10, 10), seed=5)
    net.params[:] += rng.normal(0, 0.05, net.param_count)
    b = small_dataset.batch(rng.choice(600, 10, replace=False))
    err = fd_gradient_error(net, b, LossConfig(expert_grad=mode), term, n_params=50, rng=rng)
    assert err < 1e-4


def test_stop_mode_leaves_estimates_untouched_by_control(batch, norm):
    p = _truth_pred(batch)
    p.U = p.U + 0.05
    _, g = loss_control(p, batch, norm, LossConfig(expert_grad="stop"))
    assert not g.D.any() and not g.theta.any() and not g.X.any()
    _, gf = loss_control(p, batch, norm, LossConfig(expert_grad="full"))
    assert gf.theta.any()
    # the duty path is shared: stop mode drops only the estimate paths
    np.testing.assert_array_equal(g.U, gf.U)
