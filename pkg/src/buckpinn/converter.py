"""Averaged buck converter with lumped uncertainties and a fixed-step RK4 integrator.

State is (v_o, i_L). The plant is driven by a duty ratio and feeds either a resistive
(impedance) load or a constant power load (CPL). The uncertain model is written in terms
of nominal L_N, C_N plus lumped terms eta1, eta2; solving that implicit algebra gives the
physical model with the true L and C, which is what the integrator uses.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .io_utils import atomic_writer
from .errors import DegenerateVoltage, InvalidDuty, NonFiniteState, ValidationError

IMPEDANCE = "impedance"
CPL = "cpl"
TRAJECTORY_HEADER = ("t", "v_o", "i_L", "duty", "load_value", "load_kind")


@dataclass(frozen=True)
class StateVector:
    v_o: float
    i_L: float

    def as_array(self) -> np.ndarray:
        return np.array([self.v_o, self.i_L], dtype=float)

    @classmethod
    def from_array(cls, x) -> "StateVector":
        return cls(float(x[0]), float(x[1]))

    def is_finite(self) -> bool:
        return math.isfinite(self.v_o) and math.isfinite(self.i_L)


@dataclass(frozen=True)
class LoadDescriptor:
    """Impedance (value = R_imp in ohm) or CPL (value = P_CPL in W) load.

    ``schedule`` is a piecewise-constant list of ``(switch_time, new_value)``; switch
    times are snapped to the integration grid.
    """

    kind: str
    value: float
    schedule: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.kind not in (IMPEDANCE, CPL):
            raise ValidationError(f"unknown load kind {self.kind!r}")
        object.__setattr__(
            self, "schedule", tuple((float(t), float(v)) for t, v in self.schedule)
        )
        for v in (self.value, *(v for _, v in self.schedule)):
            if not math.isfinite(v):
                raise ValidationError("load values must be finite")
            if self.kind == IMPEDANCE and v <= 0:
                raise ValidationError("R_imp must be > 0")
            if self.kind == CPL and v < 0:
                raise ValidationError("P_CPL must be >= 0")
        times = [t for t, _ in self.schedule]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValidationError("schedule times must be strictly increasing")
        if any(t < 0 for t in times):
            raise ValidationError("schedule times must be >= 0")

    @classmethod
    def impedance(cls, r_imp, schedule=()):
        return cls(IMPEDANCE, float(r_imp), tuple(schedule))

    @classmethod
    def cpl(cls, p_cpl, schedule=()):
        return cls(CPL, float(p_cpl), tuple(schedule))

    @property
    def is_cpl(self) -> bool:
        return self.kind == CPL

    def switch_steps(self, dt: float) -> list[tuple[int, float]]:
        return [(int(round(t / dt)), v) for t, v in self.schedule]

    def value_at_step(self, step: int, dt: float) -> float:
        value = self.value
        for s, v in self.switch_steps(dt):
            if step >= s:
                value = v
        return value

    def value_at(self, t: float, dt: float) -> float:
        return self.value_at_step(int(round(t / dt)), dt)

    def current(self, v_o: float, value: float | None = None) -> float:
        """Load current term drawn from the output node (negative when loading)."""
        value = self.value if value is None else value
        if self.kind == IMPEDANCE:
            return -v_o / value
        return -value / v_o

    def to_dict(self) -> dict:
        return {"kind": self.kind, "value": self.value, "schedule": [list(s) for s in self.schedule]}

    @classmethod
    def from_dict(cls, d: dict) -> "LoadDescriptor":
        return cls(d["kind"], float(d["value"]), tuple(tuple(s) for s in d.get("schedule", ())))


@dataclass(frozen=True)
class PlantConfig:
    """Plant parameters. Defaults are the nominal case-study values (50 V in, 2 mH, 1 mF)."""

    V_in: float = 50.0
    L_N: float = 2e-3
    C_N: float = 1e-3
    L_true: float | None = None
    C_true: float | None = None
    load: LoadDescriptor = field(default_factory=lambda: LoadDescriptor.impedance(4.037))
    sim_dt: float = 1e-6
    v_floor: float = 0.5

    def __post_init__(self):
        if self.L_true is None:
            object.__setattr__(self, "L_true", self.L_N)
        if self.C_true is None:
            object.__setattr__(self, "C_true", self.C_N)
        for name in ("V_in", "L_N", "C_N", "L_true", "C_true", "sim_dt"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValidationError(f"{name} must be finite and > 0, got {v!r}")
        if not (self.v_floor >= 0):
            raise ValidationError("v_floor must be >= 0")

    @property
    def delta_L(self) -> float:
        return self.L_true - self.L_N

    @property
    def delta_C(self) -> float:
        return self.C_true - self.C_N

    def with_load(self, load: LoadDescriptor) -> "PlantConfig":
        return replace(self, load=load)

    def to_dict(self) -> dict:
        return {
            "V_in": self.V_in, "L_N": self.L_N, "C_N": self.C_N,
            "L_true": self.L_true, "C_true": self.C_true,
            "load": self.load.to_dict(), "sim_dt": self.sim_dt, "v_floor": self.v_floor,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PlantConfig":
        d = dict(d)
        if "load" in d:
            d["load"] = LoadDescriptor.from_dict(d["load"])
        return cls(**d)


def _check_duty(duty: float) -> None:
    if not (0.0 <= duty <= 1.0):
        raise InvalidDuty(f"duty {duty!r} outside [0, 1]")


def _check_floor(v_o: float, cfg: PlantConfig) -> None:
    if cfg.load.is_cpl and not (v_o >= cfg.v_floor):
        raise DegenerateVoltage(f"v_o={v_o!r} below floor {cfg.v_floor} with CPL load")


def eta1(di_L_dt: float, cfg: PlantConfig) -> float:
    """Inductance uncertainty term: -dL * di_L/dt."""
    return -cfg.delta_L * di_L_dt


def eta2(state: StateVector, dv_o_dt: float, cfg: PlantConfig, load_value: float | None = None) -> float:
    """Load current plus capacitance uncertainty: load_current - dC * dv_o/dt."""
    _check_floor(state.v_o, cfg)
    return cfg.load.current(state.v_o, load_value) - cfg.delta_C * dv_o_dt


def derivatives(state: StateVector, duty: float, cfg: PlantConfig,
                load_value: float | None = None) -> tuple[float, float]:
    """Return (dv_o/dt, di_L/dt).

    Closed form of the implicit lumped-uncertainty model:
    L_N di/dt = -v + V_in u + eta1 with eta1 = -dL di/dt gives L_true di/dt = -v + V_in u,
    and likewise C_true dv/dt = i_L + load_current.
    """
    _check_duty(duty)
    _check_floor(state.v_o, cfg)
    value = cfg.load.value if load_value is None else load_value
    return _rhs(state.v_o, state.i_L, duty, cfg.V_in, cfg.L_true, cfg.C_true, cfg.load.is_cpl, value)


def _rhs(v, i, u, V_in, L, C, is_cpl, value):
    load = -value / v if is_cpl else -v / value
    return (i + load) / C, (V_in * u - v) / L


def _rk4(v, i, u, V_in, L, C, is_cpl, value, h):
    k1v, k1i = _rhs(v, i, u, V_in, L, C, is_cpl, value)
    k2v, k2i = _rhs(v + 0.5 * h * k1v, i + 0.5 * h * k1i, u, V_in, L, C, is_cpl, value)
    k3v, k3i = _rhs(v + 0.5 * h * k2v, i + 0.5 * h * k2i, u, V_in, L, C, is_cpl, value)
    k4v, k4i = _rhs(v + h * k3v, i + h * k3i, u, V_in, L, C, is_cpl, value)
    return (v + h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v),
            i + h / 6.0 * (k1i + 2 * k2i + 2 * k3i + k4i))


def integrate_step(state: StateVector, duty: float, cfg: PlantConfig, t: float = 0.0) -> StateVector:
    """Advance one ``sim_dt`` step with classical RK4; the load value is the one in effect at ``t``."""
    _check_duty(duty)
    _check_floor(state.v_o, cfg)
    value = cfg.load.value_at(t, cfg.sim_dt)
    v, i = _rk4(state.v_o, state.i_L, duty, cfg.V_in, cfg.L_true, cfg.C_true,
                cfg.load.is_cpl, value, cfg.sim_dt)
    out = StateVector(v, i)
    if not out.is_finite():
        raise NonFiniteState(f"non-finite state after step at t={t}")
    _check_floor(v, cfg)
    return out


@dataclass
class IntervalResult:
    state: StateVector
    mean_load_current: float
    steps: np.ndarray | None = None  # (nsteps, 3): v_o, i_L, load_value at each step start


def integrate_interval(state: StateVector, duty: float, cfg: PlantConfig, start_step: int,
                       nsteps: int, record: bool = False) -> IntervalResult:
    """Hold ``duty`` for ``nsteps`` RK4 steps starting at grid index ``start_step``.

    Also returns the mean load current over the interval (rectangle rule at step starts),
    which is the disturbance the discrete model sees over one control period.
    """
    _check_duty(duty)
    _check_floor(state.v_o, cfg)
    dt = cfg.sim_dt
    is_cpl = cfg.load.is_cpl
    V_in, L, C, floor = cfg.V_in, cfg.L_true, cfg.C_true, cfg.v_floor
    switches = cfg.load.switch_steps(dt)
    v, i = state.v_o, state.i_L
    load_sum = 0.0
    rec = np.empty((nsteps, 3)) if record else None
    value = cfg.load.value_at_step(start_step, dt)
    for k in range(nsteps):
        step = start_step + k
        for s, val in switches:
            if s == step:
                value = val
        load = -value / v if is_cpl else -v / value
        load_sum += load
        if record:
            rec[k, 0] = v
            rec[k, 1] = i
            rec[k, 2] = value
        v, i = _rk4(v, i, duty, V_in, L, C, is_cpl, value, dt)
        if not (math.isfinite(v) and math.isfinite(i)):
            raise NonFiniteState(f"non-finite state at grid step {step + 1}")
        if is_cpl and v < floor:
            raise DegenerateVoltage(f"v_o={v!r} below floor {floor} at grid step {step + 1}")
    return IntervalResult(StateVector(v, i), load_sum / nsteps if nsteps else 0.0, rec)


def simulate_open_loop(state: StateVector, duty: float, cfg: PlantConfig, duration: float) -> np.ndarray:
    """Constant-duty trajectory; rows are (t, v_o, i_L) including the initial point."""
    n = int(round(duration / cfg.sim_dt))
    res = integrate_interval(state, duty, cfg, 0, n, record=True)
    t = np.arange(n + 1) * cfg.sim_dt
    v = np.append(res.steps[:, 0], res.state.v_o)
    i = np.append(res.steps[:, 1], res.state.i_L)
    return np.column_stack([t, v, i])


def equilibrium(v_ref: float, cfg: PlantConfig, load_value: float | None = None) -> tuple[StateVector, float]:
    """Steady state (v_o = v_ref, i_L = load draw) and its duty."""
    i_L = -cfg.load.current(v_ref, load_value)
    return StateVector(v_ref, i_L), v_ref / cfg.V_in


def write_trajectory_csv(path, t: Sequence[float], v_o, i_L, duty, load_value, load_kind: str,
                         decimation: int = 1) -> None:
    if decimation < 1:
        raise ValidationError("decimation must be >= 1")
    with atomic_writer(path) as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_HEADER)
        for k in range(0, len(t), decimation):
            w.writerow((repr(float(t[k])), repr(float(v_o[k])), repr(float(i_L[k])),
                        repr(float(duty[k])), repr(float(load_value[k])), load_kind))


def read_trajectory_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if tuple(header) != TRAJECTORY_HEADER:
        raise ValidationError(f"unexpected trajectory header {header}")
    out: dict[str, Iterable] = {}
    for j, name in enumerate(header):
        col = [r[j] for r in body]
        out[name] = np.array(col) if name == "load_kind" else np.array(col, dtype=float)
    return out
