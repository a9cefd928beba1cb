import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from buckpinn.converter import (LoadDescriptor, PlantConfig, StateVector, derivatives, eta1, eta2,
                                equilibrium, integrate_interval, integrate_step, read_trajectory_csv,
                                simulate_open_loop, write_trajectory_csv)
from buckpinn.errors import DegenerateVoltage, InvalidDuty, ValidationError

from oracles import rk4_global_errors, slope


def test_resistive_equilibrium_derivatives_vanish():
    cfg = PlantConfig(load=LoadDescriptor.impedance(4.0))
    assert derivatives(StateVector(25.0, 6.25), 0.5, cfg) == (0.0, 0.0)


def test_zero_power_equilibrium():
    cfg = PlantConfig(load=LoadDescriptor.cpl(0.0))
    assert derivatives(StateVector(25.0, 0.0), 0.5, cfg) == (0.0, 0.0)


def test_cpl_equilibrium():
    cfg = PlantConfig(load=LoadDescriptor.cpl(100.0))
    assert derivatives(StateVector(25.0, 4.0), 0.5, cfg) == (0.0, 0.0)


@pytest.mark.parametrize("L_true, rate, expected", [(2e-3, 1000.0, 0.0), (2.5e-3, 1000.0, -0.5),
                                                    (3e-3, 0.0, 0.0)])
def test_eta1(L_true, rate, expected):
    assert eta1(rate, PlantConfig(L_true=L_true)) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("load, expected", [(LoadDescriptor.impedance(5.0), -5.0),
                                            (LoadDescriptor.cpl(100.0), -4.0),
                                            (LoadDescriptor.cpl(0.0), 0.0)])
def test_eta2(load, expected):
    assert eta2(StateVector(25.0, 0.0), 0.0, PlantConfig(load=load)) == expected


@given(st.floats(1e-3, 5e-3), st.floats(5e-4, 2e-3), st.floats(1.0, 40.0), st.floats(-5.0, 15.0),
       st.floats(0.0, 1.0), st.booleans(), st.floats(1.0, 200.0))
def test_closed_form_matches_lumped_terms(L, C, v, i, u, cpl, value):
    """The nominal model plus eta terms reproduces the true-parameter dynamics."""
    load = LoadDescriptor.cpl(value) if cpl else LoadDescriptor.impedance(value)
    cfg = PlantConfig(L_true=L, C_true=C, load=load)
    s = StateVector(v, i)
    dv, di = derivatives(s, u, cfg)
    # L_N di/dt = -v + V_in u + eta1 ; C_N dv/dt = i + eta2
    assert cfg.L_N * di == pytest.approx(-v + cfg.V_in * u + eta1(di, cfg), rel=1e-9, abs=1e-9)
    assert cfg.C_N * dv == pytest.approx(i + eta2(s, dv, cfg), rel=1e-9, abs=1e-9)


@given(st.floats(0.05, 0.95), st.floats(0.5, 50.0), st.booleans())
def test_equilibrium_is_fixed_point(u, value, cpl):
    load = LoadDescriptor.cpl(value) if cpl else LoadDescriptor.impedance(value)
    cfg = PlantConfig(load=load)
    x, duty = equilibrium(cfg.V_in * u, cfg)
    dv, di = derivatives(x, duty, cfg)
    assert abs(dv) <= 1e-9 * abs(x.i_L) / cfg.C_N + 1e-12
    assert di == 0.0


def test_integrate_step_holds_equilibrium():
    cfg = PlantConfig(load=LoadDescriptor.impedance(4.0))
    x = integrate_step(StateVector(25.0, 6.25), 0.5, cfg)
    assert abs(x.v_o - 25.0) < 1e-12 and abs(x.i_L - 6.25) < 1e-12


def test_cold_start_converges_to_equilibrium():
    cfg = PlantConfig(load=LoadDescriptor.impedance(4.0))
    traj = simulate_open_loop(StateVector(0.0, 0.0), 0.5, cfg, 0.08)
    assert abs(traj[-1, 1] - 25.0) < 1e-3
    assert abs(traj[-1, 2] - 6.25) < 1e-3
    # decaying envelope: peak error in each successive 10 ms window shrinks
    err = np.abs(traj[:, 1] - 25.0)
    windows = [err[k:k + 10_000].max() for k in range(10_000, 80_000, 10_000)]
    assert all(b < a for a, b in zip(windows, windows[1:]))


def test_rk4_fourth_order():
    h, e = rk4_global_errors()
    assert 3.5 <= slope(h, e) <= 4.5


def test_invalid_duty_rejected():
    cfg = PlantConfig()
    for u in (-0.01, 1.01, math.nan):
        with pytest.raises(InvalidDuty):
            integrate_step(StateVector(25.0, 6.0), u, cfg)


def test_cpl_floor_guard():
    cfg = PlantConfig(load=LoadDescriptor.cpl(100.0))
    with pytest.raises(DegenerateVoltage):
        derivatives(StateVector(0.4, 0.0), 0.5, cfg)
    # zero duty into a heavy CPL collapses the bus; the integrator stops at the floor
    with pytest.raises(DegenerateVoltage):
        simulate_open_loop(StateVector(5.0, 0.0), 0.0, PlantConfig(load=LoadDescriptor.cpl(500.0)), 0.05)


def test_schedule_switches_on_grid():
    load = LoadDescriptor.cpl(60.0, ((0.03, 120.0), (0.07, 60.0)))
    dt = 1e-6
    assert load.value_at_step(29_999, dt) == 60.0
    assert load.value_at_step(30_000, dt) == 120.0
    assert load.value_at_step(70_000, dt) == 60.0


def test_load_validation():
    with pytest.raises(ValidationError):
        LoadDescriptor.impedance(0.0)
    with pytest.raises(ValidationError):
        LoadDescriptor.cpl(-1.0)
    with pytest.raises(ValidationError):
        LoadDescriptor.cpl(10.0, ((0.02, 20.0), (0.01, 30.0)))


def test_plant_validation_and_derived_deltas():
    with pytest.raises(ValidationError):
        PlantConfig(C_true=-1e-3)
    with pytest.raises(ValidationError):
        PlantConfig(sim_dt=0.0)
    cfg = PlantConfig(L_true=2.5e-3, C_true=0.75e-3)
    assert cfg.delta_L == pytest.approx(0.5e-3)
    assert cfg.delta_C == pytest.approx(-0.25e-3)
    assert "delta_L" not in cfg.to_dict()
    assert PlantConfig.from_dict(cfg.to_dict()) == cfg


def test_mean_load_current_over_interval():
    cfg = PlantConfig(load=LoadDescriptor.impedance(4.0))
    res = integrate_interval(StateVector(25.0, 6.25), 0.5, cfg, 0, 50)
    assert res.mean_load_current == pytest.approx(-6.25, abs=1e-12)


def test_trajectory_csv_roundtrip(tmp_path):
    cfg = PlantConfig(load=LoadDescriptor.impedance(4.0))
    traj = simulate_open_loop(StateVector(0.0, 0.0), 0.5, cfg, 1e-4)
    n = len(traj)
    path = tmp_path / "traj.csv"
    write_trajectory_csv(path, traj[:, 0], traj[:, 1], traj[:, 2], np.full(n, 0.5), np.full(n, 4.0),
                         "impedance", decimation=10)
    assert path.read_text().splitlines()[0] == "t,v_o,i_L,duty,load_value,load_kind"
    back = read_trajectory_csv(path)
    np.testing.assert_array_equal(back["v_o"], traj[::10, 1])
    with pytest.raises(ValidationError):
        write_trajectory_csv(path, [0.0], [0.0], [0.0], [0.0], [0.0], "cpl", decimation=0)
