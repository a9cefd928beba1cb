"""Discrete parameter-varying model of the buck converter.

Forward-Euler discretization of the nominal averaged model at the control period T,
using estimated capacitance/inductance and a lumped load-current disturbance d:

    v+ = v + (T/C) i + (T/C) d
    i+ = i - (T/L) v + (T V_in / L) u

State order is (v_o, i_L); the measured output is v_o.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .converter import StateVector
from .errors import SingularModel, ValidationError

DET_TOL = 1e-12
T_CTRL = 5e-5  # 20 kHz control/switching period


@dataclass(frozen=True)
class ThetaEstimate:
    C_hat: float
    L_hat: float

    def __post_init__(self):
        if not (self.C_hat > 0 and self.L_hat > 0):
            raise ValidationError("theta estimates must be strictly positive")


@dataclass(frozen=True)
class DisturbanceEstimate:
    d_hat: float


@dataclass(frozen=True)
class LtvModel:
    theta: ThetaEstimate
    T_ctrl: float
    V_in: float

    @property
    def a(self) -> float:
        """Voltage gain per amp per step, T/C."""
        return self.T_ctrl / self.theta.C_hat

    @property
    def b(self) -> float:
        """Current gain per volt per step, T/L."""
        return self.T_ctrl / self.theta.L_hat

    @property
    def A(self) -> np.ndarray:
        return np.array([[1.0, self.a], [-self.b, 1.0]])

    @property
    def B(self) -> np.ndarray:
        return np.array([[0.0], [self.b * self.V_in]])

    @property
    def E(self) -> np.ndarray:
        return np.array([[self.a], [0.0]])

    @property
    def C_out(self) -> np.ndarray:
        return np.array([[1.0, 0.0]])

    @property
    def det_A(self) -> float:
        return 1.0 + self.a * self.b


def build_ltv(theta: ThetaEstimate, T_ctrl: float = T_CTRL, V_in: float = 50.0) -> LtvModel:
    if not (T_ctrl >= 0 and V_in > 0):
        raise ValidationError("T_ctrl must be >= 0 and V_in > 0")
    return LtvModel(theta, float(T_ctrl), float(V_in))


def _d(d_hat) -> float:
    return d_hat.d_hat if isinstance(d_hat, DisturbanceEstimate) else float(d_hat)


def forward_predict(model: LtvModel, x_k: StateVector, u_k: float, d_hat) -> StateVector:
    a, b, d = model.a, model.b, _d(d_hat)
    return StateVector(
        x_k.v_o + a * x_k.i_L + a * d,
        x_k.i_L - b * x_k.v_o + b * model.V_in * u_k,
    )


def measure(model: LtvModel, x_k: StateVector) -> float:
    return x_k.v_o


def backward_reconstruct(model: LtvModel, x_next_hat: StateVector, u_k: float, d_hat) -> StateVector:
    """Solve the forward map for x_k given x_{k+1} and the step-k input and disturbance."""
    det = model.det_A
    if abs(det) <= DET_TOL:
        raise SingularModel(f"|det A| = {abs(det):g}")
    a, b, d = model.a, model.b, _d(d_hat)
    r_v = x_next_hat.v_o - a * d
    r_i = x_next_hat.i_L - b * model.V_in * u_k
    return StateVector((r_v - a * r_i) / det, (r_i + b * r_v) / det)


# Batched forms used by the losses and the expert. Shapes: x0 (B, 2), U, D (B, n), a, b (B,).

def rollout(x0, U, D, a, b, V_in):
    """Roll the Euler model n steps. Returns states (B, n+1, 2) with states[:, 0] = x0."""
    B, n = U.shape
    X = np.empty((B, n + 1, 2))
    X[:, 0] = x0
    for j in range(n):
        v, i = X[:, j, 0], X[:, j, 1]
        X[:, j + 1, 0] = v + a * (i + D[:, j])
        X[:, j + 1, 1] = i - b * v + b * V_in * U[:, j]
    return X


def rollout_vjp(gX, X, U, D, a, b, V_in):
    """Reverse pass of :func:`rollout`.

    ``gX`` (B, n+1, 2) is dLoss/dstates. Returns gradients w.r.t. (x0, U, D, a, b).
    """
    B, n = U.shape
    gv = gX[:, n, 0].copy()
    gi = gX[:, n, 1].copy()
    gU = np.zeros((B, n))
    gD = np.zeros((B, n))
    ga = np.zeros(B)
    gb = np.zeros(B)
    for j in range(n - 1, -1, -1):
        v, i = X[:, j, 0], X[:, j, 1]
        gD[:, j] = a * gv
        gU[:, j] = b * V_in * gi
        ga += gv * (i + D[:, j])
        gb += gi * (V_in * U[:, j] - v)
        gv, gi = gv - b * gi + gX[:, j, 0], a * gv + gi + gX[:, j, 1]
    return np.stack([gv, gi], axis=1), gU, gD, ga, gb


def backward_batch(x_next, u, d, a, b, V_in):
    """Batched :func:`backward_reconstruct`; returns (B, 2)."""
    det = 1.0 + a * b
    r_v = x_next[:, 0] - a * d
    r_i = x_next[:, 1] - b * V_in * u
    return np.stack([(r_v - a * r_i) / det, (r_i + b * r_v) / det], axis=1)


def backward_batch_vjp(g, x_prev, x_next, u, d, a, b, V_in):
    """Reverse pass of :func:`backward_batch` given dLoss/dx_prev ``g`` (B, 2).

    With M x_prev = r, lam = M^-T g gives dr = lam and dM = -lam x_prev^T.
    Returns gradients w.r.t. (x_next, u, d, a, b).
    """
    det = 1.0 + a * b
    # M = [[1, a], [-b, 1]]; M^-T = [[1, b], [-a, 1]] / det
    lam_v = (g[:, 0] + b * g[:, 1]) / det
    lam_i = (-a * g[:, 0] + g[:, 1]) / det
    gM01 = -lam_v * x_prev[:, 1]
    gM10 = -lam_i * x_prev[:, 0]
    g_x_next = np.stack([lam_v, lam_i], axis=1)
    g_u = -b * V_in * lam_i
    g_d = -a * lam_v
    ga = gM01 - d * lam_v
    gb = -gM10 - V_in * u * lam_i
    return g_x_next, g_u, g_d, ga, gb
