"""Run a trained network as the converter's controller, recycling its own estimates."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .converter import PlantConfig, StateVector
from .errors import ValidationError
from .io_utils import atomic_writer
from .net import NetModel
from .physics import T_CTRL
from .training import build_inputs

TELEMETRY_HEADER = ("t", "v_o", "i_L", "duty", "d_hat", "C_hat", "L_hat", "fault_flag")


@dataclass(frozen=True)
class ControllerState:
    """Everything the controller carries between control periods.

    ``delayed`` is the one-deep measurement buffer feeding the delayed input channels;
    ``None`` means cold start (the first measurement fills it).
    """

    C_hat: float
    L_hat: float
    d_hat: float = 0.0
    duty: float = 0.5
    delayed: tuple[float, float] | None = None
    x_pred: tuple[float, float] | None = None   # previous one-step state prediction
    fault: bool = False

    @classmethod
    def cold(cls, net: NetModel, duty: float = 0.5) -> "ControllerState":
        C_N, L_N = net.theta_nominal
        return cls(C_hat=C_N, L_hat=L_N, d_hat=0.0, duty=duty)


@dataclass
class Telemetry:
    inputs: np.ndarray
    X: np.ndarray
    U: np.ndarray
    D: np.ndarray
    theta: np.ndarray
    duty: float
    fault: bool
    residual: tuple[float, float]   # measured x_k minus the previous step's x_hat_{k+1}


def step(ctrl: ControllerState, measurement: StateVector, y_ref: float, net: NetModel,
         horizon: int | None = None):
    """One control decision. Returns (duty, new state, telemetry)."""
    if horizon is not None and horizon != net.horizon:
        raise ValidationError(f"controller horizon {horizon} != network horizon {net.horizon}")
    v, i = measurement.v_o, measurement.i_L
    v_del, i_del = ctrl.delayed if ctrl.delayed is not None else (v, i)
    s = build_inputs(v_del, v, i_del, i, y_ref, ctrl.d_hat, ctrl.C_hat, ctrl.L_hat)
    pred = net.predict(s)
    X, U, D, th = pred.X[0], pred.U[0], pred.D[0], pred.theta[0]
    resid = (np.nan, np.nan) if ctrl.x_pred is None else (v - ctrl.x_pred[0], i - ctrl.x_pred[1])
    finite = all(np.all(np.isfinite(a)) for a in (X, U, D, th))
    if not finite:
        new = replace(ctrl, delayed=(v, i), x_pred=None, fault=True)
        tel = Telemetry(s[0], X, U, D, th, ctrl.duty, True, resid)
        return ctrl.duty, new, tel
    duty = float(np.clip(U[0], 0.0, 1.0))
    new = ControllerState(C_hat=float(th[0]), L_hat=float(th[1]), d_hat=float(D[0]), duty=duty,
                          delayed=(v, i), x_pred=(float(X[0, 0]), float(X[0, 1])), fault=False)
    return duty, new, Telemetry(s[0], X, U, D, th, duty, False, resid)


class PinnController:
    """Closed-loop adapter for :func:`buckpinn.closed_loop.run_closed_loop`."""

    name = "pinn"

    def __init__(self, net: NetModel, T_ctrl: float = T_CTRL):
        self.net = net
        self.T_ctrl = T_CTRL if T_ctrl is None else T_ctrl

    def reset(self, x0: StateVector, plant: PlantConfig, v_ref: float, warm: bool = True):
        # warm only seeds the hold-duty used on a first-step fault; estimates start nominal
        self.state = ControllerState.cold(self.net, x0.v_o / plant.V_in if warm else 0.0)
        self.v_ref = v_ref
        self.log: list[tuple] = []
        self.residuals: list[tuple[float, float]] = []
        self.telemetry: list[Telemetry] = []

    def __call__(self, k: int, x: StateVector) -> float:
        duty, self.state, tel = step(self.state, x, self.v_ref, self.net)
        s = self.state
        self.log.append((k * self.T_ctrl, x.v_o, x.i_L, duty, s.d_hat, s.C_hat, s.L_hat, int(tel.fault)))
        self.residuals.append(tel.residual)
        self.telemetry.append(tel)
        return duty

    @property
    def faults(self) -> int:
        return sum(row[-1] for row in self.log)

    def write_telemetry(self, path) -> None:
        write_telemetry_csv(path, self.log)


def write_telemetry_csv(path, rows) -> None:
    with atomic_writer(path) as fh:
        w = csv.writer(fh)
        w.writerow(TELEMETRY_HEADER)
        for row in rows:
            w.writerow([repr(float(x)) for x in row[:-1]] + [str(int(row[-1]))])
