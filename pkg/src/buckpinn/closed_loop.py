"""Sampled-data closed loop: a controller acts every control period, the plant integrates at sim_dt."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .control import CostWeights, DisturbanceObserver, PiConfig, PiState, expert_batch, pi_control
from .converter import PlantConfig, StateVector, equilibrium, integrate_interval, write_trajectory_csv
from .errors import ValidationError
from .physics import T_CTRL, ThetaEstimate

SETTLE_BAND = 0.02


class ExpertController:
    """Predictive expert with a measurement-based load-current observer.

    ``theta=None`` uses the true plant L and C (the teacher for imitation data).
    """

    name = "expert"

    def __init__(self, weights: CostWeights = CostWeights(), theta: ThetaEstimate | None = None,
                 T_ctrl: float = T_CTRL):
        self.weights = weights
        self.theta = theta
        self.T_ctrl = T_ctrl

    def reset(self, x0: StateVector, plant: PlantConfig, v_ref: float, warm: bool = True):
        th = self.theta or ThetaEstimate(plant.C_true, plant.L_true)
        self.a = self.T_ctrl / th.C_hat
        self.b = self.T_ctrl / th.L_hat
        self.V_in = plant.V_in
        self.v_ref = v_ref
        self.u_prev = x0.v_o / plant.V_in if warm else 0.0
        # first sample has no history; assume the inductor current balances the load
        self.observer = DisturbanceObserver(th.C_hat, self.T_ctrl, d0=-x0.i_L)
        self.last_plan = None
        self.last_d = None

    def __call__(self, k: int, x: StateVector) -> float:
        d = self.observer.update(x)
        w = self.weights
        sol = expert_batch(x.as_array()[None], self.v_ref, d, self.u_prev, self.a, self.b,
                           self.V_in, w.Q, w.R_u, w.n, check=False)
        duty = float(np.clip(sol.U[0, 0], 0.0, 1.0))
        self.last_plan = sol.U[0]
        self.last_d = d
        self.u_prev = duty
        return duty


class PiController:
    name = "pi"

    def __init__(self, cfg: PiConfig = PiConfig(), T_ctrl: float = T_CTRL):
        self.cfg = cfg
        self.T_ctrl = T_ctrl

    def reset(self, x0: StateVector, plant: PlantConfig, v_ref: float, warm: bool = True):
        self.v_ref = v_ref
        self.state = PiState(x0.i_L, x0.v_o / plant.V_in, x0.i_L) if warm else PiState()

    def __call__(self, k: int, x: StateVector) -> float:
        duty, self.state = pi_control(x, self.v_ref, self.cfg, self.T_ctrl, self.state)
        return duty


@dataclass
class Trajectory:
    """Control-rate samples; ``duty[k]`` is applied over (t[k], t[k+1]]."""

    t: np.ndarray
    v_o: np.ndarray
    i_L: np.ndarray
    duty: np.ndarray
    load_value: np.ndarray
    load_mean: np.ndarray   # mean load current over each control interval
    load_kind: str
    fine: np.ndarray | None = None  # (N, 5): t, v_o, i_L, duty, load_value at sim_dt
    extra: dict = field(default_factory=dict)

    def write_csv(self, path, decimation: int = 1, fine: bool = True):
        if fine and self.fine is not None:
            f = self.fine
            write_trajectory_csv(path, f[:, 0], f[:, 1], f[:, 2], f[:, 3], f[:, 4],
                                 self.load_kind, decimation)
        else:
            write_trajectory_csv(path, self.t, self.v_o, self.i_L, self.duty, self.load_value,
                                 self.load_kind, decimation)


def run_closed_loop(plant: PlantConfig, controller, duration: float, v_ref: float = 25.0,
                    x0: StateVector | None = None, T_ctrl: float = T_CTRL, warm: bool = True,
                    record_fine: bool = False) -> Trajectory:
    """Simulate ``duration`` seconds. Starts at the load equilibrium unless ``x0`` is given."""
    if not duration > 0:
        raise ValidationError("duration must be > 0")
    ratio = T_ctrl / plant.sim_dt
    sub = int(round(ratio))
    if abs(ratio - sub) > 1e-9 * ratio or sub < 1:
        raise ValidationError("T_ctrl must be an integer multiple of sim_dt")
    K = int(round(duration / T_ctrl))
    if x0 is None:
        x0, _ = equilibrium(v_ref, plant)
    controller.reset(x0, plant, v_ref, warm)
    t = np.arange(K + 1) * T_ctrl
    v = np.empty(K + 1)
    i = np.empty(K + 1)
    duty = np.full(K + 1, np.nan)
    load_val = np.empty(K + 1)
    load_mean = np.full(K + 1, np.nan)
    fine = [] if record_fine else None
    x = x0
    for k in range(K):
        v[k], i[k] = x.v_o, x.i_L
        load_val[k] = plant.load.value_at_step(k * sub, plant.sim_dt)
        u = controller(k, x)
        duty[k] = u
        res = integrate_interval(x, u, plant, k * sub, sub, record=record_fine)
        load_mean[k] = res.mean_load_current
        if record_fine:
            tt = (k * sub + np.arange(sub)) * plant.sim_dt
            fine.append(np.column_stack([tt, res.steps[:, 0], res.steps[:, 1],
                                         np.full(sub, u), res.steps[:, 2]]))
        x = res.state
    v[K], i[K] = x.v_o, x.i_L
    load_val[K] = plant.load.value_at_step(K * sub, plant.sim_dt)
    if record_fine:
        fine.append(np.array([[K * sub * plant.sim_dt, x.v_o, x.i_L, np.nan, load_val[K]]]))
        fine = np.vstack(fine)
    return Trajectory(t, v, i, duty, load_val, load_mean, plant.load.kind, fine)


# --- response metrics ----------------------------------------------------------------

def settling_time(t, v, v_ref, t_event: float = 0.0, band: float = SETTLE_BAND, t_end=None) -> float:
    """Time after ``t_event`` until v re-enters and stays inside +-band*v_ref (up to ``t_end``).

    Returns ``inf`` if the trace is still outside the band at the end of the window.
    """
    t = np.asarray(t)
    v = np.asarray(v)
    mask = t >= t_event
    if t_end is not None:
        mask &= t < t_end
    tt, vv = t[mask], v[mask]
    if len(tt) == 0:
        return float("nan")
    outside = np.abs(vv - v_ref) > band * v_ref
    if not outside.any():
        return 0.0
    last = np.flatnonzero(outside)[-1]
    if last == len(tt) - 1:
        return float("inf")
    return float(tt[last + 1] - t_event)


def peak_deviation(t, v, v_ref, t_event: float = 0.0, t_end=None) -> float:
    t = np.asarray(t)
    mask = t >= t_event
    if t_end is not None:
        mask &= t < t_end
    return float(np.max(np.abs(np.asarray(v)[mask] - v_ref)))


def ise(t, v, v_ref) -> float:
    """Integral of squared tracking error (rectangle rule on the sample grid)."""
    t = np.asarray(t)
    e = np.asarray(v) - v_ref
    dt = np.diff(t)
    return float(np.sum(e[:-1] ** 2 * dt))


def steady_state_error(t, v, v_ref, window: float = 2e-3) -> float:
    t = np.asarray(t)
    mask = t >= t[-1] - window
    return float(abs(np.mean(np.asarray(v)[mask]) - v_ref))
