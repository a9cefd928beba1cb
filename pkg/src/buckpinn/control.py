"""Expert predictive controller, tracking cost, and the cascaded PI baseline.

The expert minimises

    J(U) = sum_i Q (y_{k+i} - y_ref)^2 + R (u_{k+i} - u_hat_{k+i})^2

over an n-step horizon of the Euler model with the disturbance held constant and
u_hat the previously applied duty. Control ``U[j]`` is the duty applied over
(t_{k+j}, t_{k+j+1}], so output ``Y[j]`` (= v_o at k+j+1) depends on ``U[:j]``.
The problem is an unconstrained least-squares solve; clamping to [0, 1] happens when
the first move is applied, not here.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .converter import StateVector
from .errors import LengthMismatch, SingularModel, ValidationError
from .physics import DisturbanceEstimate, LtvModel, rollout, rollout_vjp

COND_LIMIT = 1e12


@dataclass(frozen=True)
class CostWeights:
    Q: float = 5.0
    R_u: float = 1.0
    n: int = 6

    def __post_init__(self):
        if not (self.Q > 0 and self.R_u > 0 and int(self.n) == self.n and self.n >= 1):
            raise ValidationError("need Q > 0, R_u > 0, n >= 1")


def cost_J(y_pred, y_ref, u, u_hat, w: CostWeights) -> float:
    y_pred, u, u_hat = (np.asarray(z, dtype=float) for z in (y_pred, u, u_hat))
    if not (y_pred.shape == u.shape == u_hat.shape):
        raise LengthMismatch(f"shapes {y_pred.shape}, {u.shape}, {u_hat.shape}")
    return float(w.Q * np.sum((y_pred - y_ref) ** 2) + w.R_u * np.sum((u - u_hat) ** 2))


def cost_J_batch(Y, y_ref, U, U_hat, Q, R):
    """Per-sample J for arrays of shape (B, n)."""
    y_ref = np.asarray(y_ref, dtype=float).reshape(-1, 1)
    return Q * np.sum((Y - y_ref) ** 2, axis=1) + R * np.sum((U - U_hat) ** 2, axis=1)


def predict_outputs(x0, U, d, a, b, V_in):
    """Voltage predictions (B, n) with d held constant over the horizon."""
    D = np.repeat(np.asarray(d, dtype=float).reshape(-1, 1), U.shape[1], axis=1)
    return rollout(x0, U, D, a, b, V_in)[:, 1:, 0]


def step_response_matrix(a, b, V_in, n):
    """Theta (B, n, n): Theta[:, j, m] = dY[j] / dU[m] (lower triangular Toeplitz)."""
    B = np.shape(a)[0]
    e0 = np.zeros((B, n))
    e0[:, 0] = 1.0
    h = rollout(np.zeros((B, 2)), e0, np.zeros((B, n)), a, b, V_in)[:, 1:, 0]
    Theta = np.zeros((B, n, n))
    for m in range(n):
        Theta[:, m:, m] = h[:, : n - m]
    return Theta


@dataclass
class ExpertSolution:
    U: np.ndarray       # (B, n) unclamped minimiser
    H: np.ndarray       # (B, n, n) normal matrix
    x0: np.ndarray
    d: np.ndarray
    a: np.ndarray
    b: np.ndarray
    V_in: float
    Q: float
    R: float
    y_ref: np.ndarray


def expert_batch(x0, y_ref, d, u_prev, a, b, V_in, Q, R, n, check=True) -> ExpertSolution:
    x0 = np.asarray(x0, dtype=float)
    Bsz = x0.shape[0]
    a = np.broadcast_to(np.asarray(a, dtype=float), (Bsz,))
    b = np.broadcast_to(np.asarray(b, dtype=float), (Bsz,))
    d = np.broadcast_to(np.asarray(d, dtype=float), (Bsz,))
    y_ref = np.broadcast_to(np.asarray(y_ref, dtype=float), (Bsz,))
    u_prev = np.broadcast_to(np.asarray(u_prev, dtype=float), (Bsz,))
    Theta = step_response_matrix(a, b, V_in, n)
    free = predict_outputs(x0, np.zeros((Bsz, n)), d, a, b, V_in)
    H = Q * np.einsum("bjm,bjk->bmk", Theta, Theta) + R * np.eye(n)
    g = Q * np.einsum("bjm,bj->bm", Theta, y_ref[:, None] - free) + R * u_prev[:, None]
    if check:
        # H >= R I, so trace(H)/R bounds the condition number from above
        bound = np.trace(H, axis1=1, axis2=2) / R
        if np.any(bound > COND_LIMIT) and np.max(np.linalg.cond(H)) > COND_LIMIT:
            raise SingularModel("expert normal matrix is ill-conditioned")
    U = np.linalg.solve(H, g[..., None])[..., 0]
    return ExpertSolution(U, H, x0, d, a, b, V_in, Q, R, y_ref)


def expert_vjp(sol: ExpertSolution, gU):
    """Gradient of a downstream loss w.r.t. (d, a, b) through the minimiser.

    Implicit differentiation of grad_U J(U*, p) = 0 (Hessian 2H): with v = (2H)^-1 gU,
    dL/dp = -d/dp [ grad_U J(U, p) . v ] at fixed U = U*, v.
    grad_U J . v = 2Q (Theta v) . (Y(U*) - y_ref) + 2R v . (U* - U_hat); only the first
    term depends on p, and Theta v is the zero-state response to input v.
    """
    Bsz, n = sol.U.shape
    v = 0.5 * np.linalg.solve(sol.H, gU[..., None])[..., 0]
    zeros = np.zeros((Bsz, n))
    X_dy = rollout(np.zeros((Bsz, 2)), v, zeros, sol.a, sol.b, sol.V_in)
    D = np.repeat(sol.d[:, None], n, axis=1)
    X_y = rollout(sol.x0, sol.U, D, sol.a, sol.b, sol.V_in)
    resid = X_y[:, 1:, 0] - sol.y_ref[:, None]
    dy = X_dy[:, 1:, 0]

    g1 = np.zeros((Bsz, n + 1, 2))
    g1[:, 1:, 0] = 2 * sol.Q * resid
    _, _, _, ga1, gb1 = rollout_vjp(g1, X_dy, v, zeros, sol.a, sol.b, sol.V_in)
    g2 = np.zeros((Bsz, n + 1, 2))
    g2[:, 1:, 0] = 2 * sol.Q * dy
    _, _, gD2, ga2, gb2 = rollout_vjp(g2, X_y, sol.U, D, sol.a, sol.b, sol.V_in)
    return -gD2.sum(axis=1), -(ga1 + ga2), -(gb1 + gb2)


def expert_control(model: LtvModel, x_k: StateVector, y_ref: float, d_hat,
                   w: CostWeights = CostWeights(), u_prev: float = 0.5) -> np.ndarray:
    """Unclamped optimal duty sequence over the horizon for one state."""
    d = d_hat.d_hat if isinstance(d_hat, DisturbanceEstimate) else float(d_hat)
    sol = expert_batch(x_k.as_array()[None], y_ref, d, u_prev, model.a, model.b,
                       model.V_in, w.Q, w.R_u, w.n)
    return sol.U[0]


class DisturbanceObserver:
    """Load-current estimate from the voltage equation residual.

    C (v_k - v_{k-1}) / T equals the mean capacitor current over the last period; the
    inductor's share is taken as the trapezoid of its endpoint samples.
    """

    def __init__(self, C: float, T: float, d0: float = 0.0):
        self.C = C
        self.T = T
        self.d = d0
        self.prev: StateVector | None = None

    def update(self, x: StateVector) -> float:
        if self.prev is not None:
            self.d = self.C * (x.v_o - self.prev.v_o) / self.T - 0.5 * (x.i_L + self.prev.i_L)
        self.prev = x
        return self.d


# --- cascaded PI --------------------------------------------------------------------

@dataclass(frozen=True)
class PiConfig:
    """Outer voltage loop -> inductor current reference -> inner current loop -> duty.

    Gains are fixed here, not auto-tuned; they give stable tracking that is visibly
    slower to recover than the predictive expert.
    """

    kp_v: float = 2.0
    ki_v: float = 500.0
    kp_i: float = 0.2
    ki_i: float = 50.0
    i_ref_min: float = -5.0
    i_ref_max: float = 20.0
    duty_min: float = 0.0
    duty_max: float = 1.0

    def __post_init__(self):
        vals = asdict(self).values()
        if not all(np.isfinite(v) for v in vals):
            raise ValidationError("PI gains and limits must be finite")
        if not (self.i_ref_min < self.i_ref_max and 0.0 <= self.duty_min < self.duty_max <= 1.0):
            raise ValidationError("PI limits must be ordered and duty limits within [0, 1]")


@dataclass(frozen=True)
class PiState:
    int_v: float = 0.0   # outer integrator, A
    int_i: float = 0.0   # inner integrator, duty
    i_ref: float = 0.0


def pi_control(state: StateVector, y_ref: float, cfg: PiConfig, dt: float,
               pi_state: PiState = PiState()) -> tuple[float, PiState]:
    if not dt > 0:
        raise ValidationError("dt must be > 0")
    e_v = y_ref - state.v_o
    int_v = float(np.clip(pi_state.int_v + cfg.ki_v * e_v * dt, cfg.i_ref_min, cfg.i_ref_max))
    i_ref = float(np.clip(cfg.kp_v * e_v + int_v, cfg.i_ref_min, cfg.i_ref_max))
    e_i = i_ref - state.i_L
    int_i = float(np.clip(pi_state.int_i + cfg.ki_i * e_i * dt, cfg.duty_min, cfg.duty_max))
    duty = float(np.clip(cfg.kp_i * e_i + int_i, cfg.duty_min, cfg.duty_max))
    return duty, PiState(int_v, int_i, i_ref)
