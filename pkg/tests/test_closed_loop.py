import numpy as np
import pytest

from buckpinn.closed_loop import (ExpertController, PiController, ise, peak_deviation, run_closed_loop,
                                  settling_time, steady_state_error)
from buckpinn.converter import LoadDescriptor, PlantConfig
from buckpinn.errors import ValidationError

CPL_STEP = PlantConfig(load=LoadDescriptor.cpl(60.0, ((0.03, 120.0), (0.07, 60.0))))


def test_settling_time_definition():
    t = np.arange(0, 10.0, 1.0)
    v = np.array([25, 20, 24, 25.6, 25.2, 25.1, 25, 25, 25, 25.0])
    assert settling_time(t, v, 25.0, 0.0) == 4.0  # 25.6 is outside the 0.5 V band, 25.2 inside
    assert settling_time(t, np.full(10, 25.0), 25.0) == 0.0
    assert settling_time(t, np.r_[np.full(9, 25.0), 30.0], 25.0) == float("inf")


def test_metric_values():
    t = np.array([0.0, 1.0, 2.0])
    v = np.array([24.0, 27.0, 25.0])
    assert ise(t, v, 25.0) == 1.0 + 4.0
    assert peak_deviation(t, v, 25.0) == 2.0
    assert steady_state_error(t, v, 25.0, window=0.5) == 0.0


def test_expert_beats_pi_on_cpl_step():
    res = {}
    for c in (ExpertController(), PiController()):
        tr = run_closed_loop(CPL_STEP, c, 0.1)
        res[c.name] = (settling_time(tr.t, tr.v_o, 25.0, 0.03, t_end=0.07),
                       peak_deviation(tr.t, tr.v_o, 25.0, 0.03, 0.07))
    assert res["expert"][0] < res["pi"][0]
    assert res["expert"][1] < res["pi"][1]


def test_duties_admissible_and_fine_record(tmp_path):
    tr = run_closed_loop(CPL_STEP, PiController(), 0.04, record_fine=True)
    d = tr.duty[:-1]
    assert np.all((d >= 0) & (d <= 1))
    assert tr.fine.shape == (40 * 50 * 20 + 1, 5)
    tr.write_csv(tmp_path / "t.csv", decimation=1000)
    assert len((tmp_path / "t.csv").read_text().splitlines()) == 1 + 41


def test_validation():
    with pytest.raises(ValidationError):
        run_closed_loop(CPL_STEP, PiController(), 0.0)
    with pytest.raises(ValidationError):
        run_closed_loop(CPL_STEP, PiController(), 0.01, T_ctrl=5.5e-6 / 2)
