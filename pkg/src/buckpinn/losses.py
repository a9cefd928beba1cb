"""Hybrid data / physics / control training objective.

All pairwise discrepancies are mean squared errors on normalised channels (each channel
divided by its training-split scale). Every term returns ``(value, grad)`` where ``value``
is the batch mean and ``grad`` is a :class:`Decoded` holding d(value)/d(outputs).

``expert_grad``:
  "stop"  the re-solved expert sequence and the model J is evaluated on are constants;
          gradients reach only the network's duty outputs through J.
  "full"  differentiate through the least-squares solve and the J predictions w.r.t.
          the estimated disturbance and parameters as well.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .control import CostWeights, expert_batch, expert_vjp, predict_outputs
from .net import Decoded, Normalization
from .physics import T_CTRL, backward_batch, backward_batch_vjp, rollout, rollout_vjp


@dataclass(frozen=True)
class LossWeights:
    lambda_phy: float = 0.6
    lambda_ctrl: float = 10.0

    def __post_init__(self):
        if self.lambda_phy < 0 or self.lambda_ctrl < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass(frozen=True)
class LossConfig:
    weights: LossWeights = LossWeights()
    cost: CostWeights = CostWeights()
    expert_grad: str = "stop"
    T_ctrl: float = T_CTRL
    V_in: float = 50.0

    def __post_init__(self):
        if self.expert_grad not in ("stop", "full"):
            raise ValueError("expert_grad must be 'stop' or 'full'")


@dataclass
class Batch:
    """Targets and context for B samples with horizon n."""

    inputs: np.ndarray   # (B, 12)
    x_k: np.ndarray      # (B, 2) measured state at k
    u_prev: np.ndarray   # (B,) duty applied over (k-1, k]
    y_ref: np.ndarray    # (B,)
    X: np.ndarray        # (B, n, 2)
    U: np.ndarray        # (B, n)
    D: np.ndarray        # (B, n)
    theta: np.ndarray    # (B, 2)

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def n(self):
        return self.U.shape[1]

    def take(self, idx) -> "Batch":
        return Batch(*(getattr(self, f)[idx] for f in
                       ("inputs", "x_k", "u_prev", "y_ref", "X", "U", "D", "theta")))


def _gains(pred: Decoded, cfg: LossConfig):
    a = cfg.T_ctrl / pred.theta[:, 0]
    b = cfg.T_ctrl / pred.theta[:, 1]
    return a, b


def _theta_grad(ga, gb, pred: Decoded, cfg: LossConfig):
    """Chain (a, b) = (T/C, T/L) back to (C, L)."""
    C, L = pred.theta[:, 0], pred.theta[:, 1]
    return np.stack([-ga * cfg.T_ctrl / C ** 2, -gb * cfg.T_ctrl / L ** 2], axis=1)


def loss_data(pred: Decoded, batch: Batch, norm: Normalization):
    n, B = batch.n, len(batch)
    sx, su, sd, st = norm.x_scale(n), norm.u_scale(n), norm.d_scale(n), norm.theta_scale
    rx = (pred.X - batch.X) / sx
    ru = (pred.U - batch.U) / su
    rd = (pred.D - batch.D) / sd
    rt = (pred.theta - batch.theta) / st
    per = (rx ** 2).mean(axis=(1, 2)) + (ru ** 2).mean(axis=1) + (rd ** 2).mean(axis=1) \
        + (rt ** 2).mean(axis=1)
    g = Decoded(2 * rx / sx / (2 * n) / B, 2 * ru / su / n / B, 2 * rd / sd / n / B,
                2 * rt / st / 2 / B)
    return float(per.mean()), g


def loss_phy_forward(pred: Decoded, batch: Batch, norm: Normalization, cfg: LossConfig):
    """Roll the model from the measured x_k with the network's duty, disturbance and
    parameter estimates; penalise (truth, rolled) and (rolled, network states)."""
    n, B = batch.n, len(batch)
    sx = norm.x_scale(n)
    a, b = _gains(pred, cfg)
    Xr = rollout(batch.x_k, pred.U, pred.D, a, b, cfg.V_in)
    Xt = Xr[:, 1:]
    r1 = (batch.X - Xt) / sx
    r2 = (Xt - pred.X) / sx
    per = ((r1 ** 2).mean(axis=2) + (r2 ** 2).mean(axis=2)).mean(axis=1)
    # d/dXt of mean_j mean_c (r1^2 + r2^2), batch-averaged
    c = 1.0 / (2 * n * B)
    gXt = c * 2 * (r2 - r1) / sx
    gX_net = -c * 2 * r2 / sx
    gX = np.zeros_like(Xr)
    gX[:, 1:] = gXt
    _, gU, gD, ga, gb = rollout_vjp(gX, Xr, pred.U, pred.D, a, b, cfg.V_in)
    g = Decoded(gX_net, gU, gD, _theta_grad(ga, gb, pred, cfg))
    return float(per.mean()), g


def loss_phy_backward(pred: Decoded, batch: Batch, norm: Normalization, cfg: LossConfig):
    """Reconstruct x_k from the network's x_{k+1} through the inverse model.

    The network emits no current-state estimate, so the second pair uses the measured
    x_k in its place; both pairs then compare the reconstruction with the measurement.
    """
    B = len(batch)
    s1 = norm.x_scale(batch.n)[0]
    a, b = _gains(pred, cfg)
    x1, u1, d1 = pred.X[:, 0], pred.U[:, 0], pred.D[:, 0]
    xr = backward_batch(x1, u1, d1, a, b, cfg.V_in)
    r1 = (batch.x_k - xr) / s1
    r2 = (xr - batch.x_k) / s1
    per = (r1 ** 2).mean(axis=1) + (r2 ** 2).mean(axis=1)
    g_xr = (2 * (r2 - r1) / s1) / 2 / B
    gx1, gu1, gd1, ga, gb = backward_batch_vjp(g_xr, xr, x1, u1, d1, a, b, cfg.V_in)
    g = pred.zeros_like()
    g.X[:, 0] = gx1
    g.U[:, 0] = gu1
    g.D[:, 0] = gd1
    g.theta = _theta_grad(ga, gb, pred, cfg)
    return float(per.mean()), g


@dataclass
class ControlTerms:
    u_tilde: np.ndarray
    J: np.ndarray
    pairs: np.ndarray


def loss_control(pred: Decoded, batch: Batch, norm: Normalization, cfg: LossConfig, details=False):
    """Imitation of the expert re-solved on the network's own estimates, plus J.

    u_tilde: expert minimiser for (x_k, d_hat_1, C_hat, L_hat), clipped to the admissible
    duty range as it would be when applied. J is evaluated for the network's duty sequence
    on the same model (disturbance held at d_hat_1, move penalty against u_prev).
    """
    n, B = batch.n, len(batch)
    w = cfg.cost
    su = norm.u_scale(n)
    a, b = _gains(pred, cfg)
    d1 = pred.D[:, 0]
    sol = expert_batch(batch.x_k, batch.y_ref, d1, batch.u_prev, a, b, cfg.V_in, w.Q, w.R_u, n,
                       check=False)
    inside = (sol.U >= 0.0) & (sol.U <= 1.0)
    ut = np.clip(sol.U, 0.0, 1.0)
    r1 = (batch.U - ut) / su
    r2 = (ut - pred.U) / su
    pairs = ((r1 ** 2) + (r2 ** 2)).mean(axis=1)

    Dc = np.repeat(d1[:, None], n, axis=1)
    Xp = rollout(batch.x_k, pred.U, Dc, a, b, cfg.V_in)
    ey = Xp[:, 1:, 0] - batch.y_ref[:, None]
    eu = pred.U - batch.u_prev[:, None]
    J = w.Q * (ey ** 2).sum(axis=1) + w.R_u * (eu ** 2).sum(axis=1)
    value = float((pairs + J).mean())

    g = pred.zeros_like()
    g.U += (-2 * r2 / su) / n / B
    gXp = np.zeros_like(Xp)
    gXp[:, 1:, 0] = 2 * w.Q * ey / B
    _, gU_J, gD_J, ga_J, gb_J = rollout_vjp(gXp, Xp, pred.U, Dc, a, b, cfg.V_in)
    g.U += gU_J + 2 * w.R_u * eu / B
    if cfg.expert_grad == "full":
        g_ut = ((2 * (r2 - r1) / su) / n / B) * inside
        gd_e, ga_e, gb_e = expert_vjp(sol, g_ut)
        g.D[:, 0] += gd_e + gD_J.sum(axis=1)
        g.theta += _theta_grad(ga_e + ga_J, gb_e + gb_J, pred, cfg)
    if details:
        return value, g, ControlTerms(ut, J, pairs)
    return value, g


@dataclass
class LossBreakdown:
    data: float
    phy_forward: float
    phy_backward: float
    control: float
    total: float
    extra: dict = field(default_factory=dict)


def combine(data, phy_forward, phy_backward, control, weights: LossWeights = LossWeights()) -> float:
    """lambda_phy (forward + backward) + data + lambda_ctrl control."""
    return weights.lambda_phy * (phy_forward + phy_backward) + data + weights.lambda_ctrl * control


def total_loss(pred: Decoded, batch: Batch, norm: Normalization, cfg: LossConfig = LossConfig()):
    lw = cfg.weights
    ld, gd = loss_data(pred, batch, norm)
    lf = lb = lc = 0.0
    g = gd
    if lw.lambda_phy > 0:
        lf, gf = loss_phy_forward(pred, batch, norm, cfg)
        lb, gb = loss_phy_backward(pred, batch, norm, cfg)
        g = g + (gf + gb).scaled(lw.lambda_phy)
    if lw.lambda_ctrl > 0:
        lc, gc = loss_control(pred, batch, norm, cfg)
        g = g + gc.scaled(lw.lambda_ctrl)
    return LossBreakdown(ld, lf, lb, lc, combine(ld, lf, lb, lc, lw)), g


TERMS = {
    "data": lambda p, bt, nm, cfg: loss_data(p, bt, nm),
    "phy_forward": loss_phy_forward,
    "phy_backward": loss_phy_backward,
    "control": loss_control,
}


def backprop(net, batch: Batch, cfg: LossConfig = LossConfig(), term: str | None = None):
    """Loss value and its gradient w.r.t. the flat parameter vector.

    ``term`` selects a single component ("data", "phy_forward", "phy_backward", "control");
    by default the weighted total is used.
    """
    raw, acts = net.forward_raw(batch.inputs, keep=True)
    pred = net.decode(raw)
    if term is None:
        br, g = total_loss(pred, batch, net.norm, cfg)
        value = br.total
    else:
        value, g = TERMS[term](pred, batch, net.norm, cfg)
        br = None
    grad = net.backward_raw(net.encode_grad(g, pred), acts)
    return value, grad, br
