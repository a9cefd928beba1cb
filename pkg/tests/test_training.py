import numpy as np
import pytest
from hypothesis import given, strategies as st

from buckpinn.converter import LoadDescriptor, PlantConfig
from buckpinn.errors import EmptyDataset, NonFiniteLoss, SimulationDiverged, ValidationError
from buckpinn.losses import LossConfig, LossWeights
from buckpinn.net import INPUT_CHANNELS, init_net, output_channel_names
from buckpinn.training import (Dataset, DatasetSpec, Scenario, TrainConfig, default_dataset_spec,
                               evaluate_losses, generate_dataset, make_net, percentage_error,
                               percentage_error_arrays, replay_sample, split_indices,
                               sweep_architecture, train, write_sweep_csv)


def test_small_dataset_shape(small_dataset, small_spec):
    assert len(small_dataset) == 600
    assert small_dataset.inputs.shape == (600, 12)
    assert small_dataset.X.shape == (600, 6, 2)
    assert np.isfinite(small_dataset.to_array()).all()
    # every run skips its warm-up samples
    assert small_dataset.step.min() == small_spec.warmup


def test_input_channels_consistent(small_dataset):
    s = small_dataset.inputs
    np.testing.assert_allclose(s[:, 2], s[:, 1] - s[:, 0])
    np.testing.assert_allclose(s[:, 5], s[:, 4] - s[:, 3])
    np.testing.assert_allclose(s[:, 7], small_dataset.y_ref - s[:, 1])
    np.testing.assert_allclose(s[:, 8], s[:, 7] - s[:, 6])
    assert np.all(s[:, 10] > 0) and np.all(s[:, 11] > 0)


def test_replay_small(small_dataset, small_spec):
    for j in range(0, 600, 7):
        r = replay_sample(small_dataset, j, small_spec)
        np.testing.assert_allclose(r, small_dataset.X[j], rtol=1e-9)


def test_targets_time_aligned(small_dataset):
    """Sample k's first target state is sample k+1's current state within a run."""
    ds = small_dataset
    same = (ds.scenario[1:] == ds.scenario[:-1]) & (ds.step[1:] == ds.step[:-1] + 1)
    np.testing.assert_array_equal(ds.X[:-1][same, 0, 0], ds.inputs[1:][same, 1])
    np.testing.assert_array_equal(ds.U[:-1][same, 0], ds.u_prev[1:][same])


def test_no_scenarios_rejected():
    with pytest.raises(EmptyDataset):
        generate_dataset(DatasetSpec(scenarios=(), count=10))


def test_divergence_carries_scenario_id():
    bad = Scenario("collapse", PlantConfig(load=LoadDescriptor.cpl(60.0, ((1e-4, 1e5),))))
    with pytest.raises(SimulationDiverged) as e:
        generate_dataset(DatasetSpec(scenarios=(bad,), count=200))
    assert e.value.scenario_id == "collapse"


def test_spec_validation():
    with pytest.raises(ValidationError):
        default_dataset_spec(count=100, split=1.0)


def test_dataset_deterministic(tmp_path):
    a = generate_dataset(default_dataset_spec(count=90, seed=4))
    b = generate_dataset(default_dataset_spec(count=90, seed=4))
    a.save_csv(tmp_path / "a.csv")
    b.save_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_csv_roundtrip_and_schema(small_dataset, tmp_path):
    path = tmp_path / "ds.csv"
    small_dataset.save_csv(path)
    header = path.read_text().splitlines()[0].split(",")
    assert header[:12] == list(INPUT_CHANNELS)
    assert header[12:38] == output_channel_names(6)
    back = Dataset.load_csv(path)
    np.testing.assert_array_equal(back.to_array(), small_dataset.to_array())
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ValidationError):
        Dataset.load_csv(path)


@given(st.integers(1, 5000), st.floats(0.05, 0.95), st.integers(0, 100))
def test_split_partition(N, frac, seed):
    tr, va = split_indices(N, frac, seed)
    assert len(np.intersect1d(tr, va)) == 0
    np.testing.assert_array_equal(np.union1d(tr, va), np.arange(N))
    assert abs(len(tr) - frac * N) <= 1


def test_split_default_sizes():
    tr, va = split_indices(18_000, 0.75, 0)
    assert (len(tr), len(va)) == (13_500, 4_500)


def test_normalization_ignores_validation(small_dataset):
    tr, va = split_indices(600, 0.75, 0)
    a = make_net(small_dataset, tr).norm
    ds2 = small_dataset.subset(np.arange(600))
    ds2.X[va] += 100.0
    ds2.U[va] -= 3.0
    b = make_net(ds2, tr).norm
    np.testing.assert_array_equal(a.out_mean, b.out_mean)
    np.testing.assert_array_equal(a.out_scale, b.out_scale)
    np.testing.assert_array_equal(a.out_range, b.out_range)


def test_percentage_error_examples():
    t = np.array([[0.0, 10.0], [2.0, 30.0]])
    rng = np.ptp(t, axis=0)
    assert percentage_error_arrays(t, t, rng) == 0.0
    mid = np.tile(t.mean(axis=0), (2, 1))
    assert percentage_error_arrays(mid, t, rng) == pytest.approx(50.0)


def test_percentage_error_midpoint_network(small_dataset):
    """A zero-weight net predicts the stored channel means; on a two-valued symmetric
    dataset those are the midpoints, giving 50 %."""
    ds = small_dataset.subset(np.arange(2))
    ds.X[1] = ds.X[0] + 1.0
    ds.U[1] = ds.U[0] + 0.2
    ds.D[1] = ds.D[0] - 1.0
    ds.theta[:] = [[0.9e-3, 1.8e-3], [1.1e-3, 2.2e-3]]
    net = make_net(ds, np.arange(2))
    net.params[:] = 0.0
    assert percentage_error(net, ds) == pytest.approx(50.0)


def test_memorize_ten_samples(small_dataset):
    idx = np.arange(0, 600, 60)
    loss = LossConfig(LossWeights(0.0, 0.0))
    cfg = TrainConfig(hidden=(32, 32), iterations=3000, batch_size=10, lr=3e-3, loss=loss,
                      checkpoints=(3000,))
    net, _ = train(small_dataset, idx, idx, cfg)
    assert evaluate_losses(net, small_dataset, idx, loss).data < 1e-4


def test_training_deterministic_and_logged(small_dataset, tmp_path):
    tr, va = split_indices(600, 0.75, 0)
    cfg = TrainConfig(hidden=(8,), iterations=300, seed=2)
    a, log_a = train(small_dataset, tr, va, cfg)
    b, log_b = train(small_dataset, tr, va, cfg)
    np.testing.assert_array_equal(a.params, b.params)
    assert log_a.rows == log_b.rows
    assert [r[0] for r in log_a.rows] == cfg.checkpoint_iters()
    log_a.write_csv(tmp_path / "conv.csv")
    assert (tmp_path / "conv.csv").read_text().splitlines()[0] == "iteration,avg_loss,pct_error"


def test_checkpoint_schedule_scales():
    assert TrainConfig(iterations=300_000).checkpoint_iters() == [10_000, 50_000, 150_000, 200_000,
                                                                   250_000, 300_000]
    assert TrainConfig(iterations=50_000).checkpoint_iters()[-1] == 50_000


def test_nonfinite_loss_aborts(small_dataset):
    tr, va = split_indices(600, 0.75, 0)
    net = make_net(small_dataset, tr, hidden=(4,))
    net.params[:] = np.nan
    with pytest.raises(NonFiniteLoss) as e:
        train(small_dataset, tr, va, TrainConfig(hidden=(4,), iterations=10), net=net)
    assert e.value.iteration == 1


def test_sweep_grid_shape(small_dataset, tmp_path):
    tr, va = split_indices(600, 0.75, 0)
    layers, neurons = (1, 2, 3, 4, 5, 6), (8, 16, 32, 64)
    table = sweep_architecture(small_dataset, tr, va, layers, neurons, iterations=5)
    assert table.shape == (4, 6)
    write_sweep_csv(tmp_path / "s.csv", table, layers, neurons)
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "neurons,1,2,3,4,5,6" and len(lines) == 5
    again = sweep_architecture(small_dataset, tr, va, layers[:1], neurons[:1], iterations=5)
    assert again[0, 0] == table[0, 0]


def test_sweep_wider_is_better(small_dataset):
    tr, va = split_indices(600, 0.75, 0)
    table = sweep_architecture(small_dataset, tr, va, (1, 2), (8, 32), iterations=1500)
    assert table[1].min() <= table[0].min()
