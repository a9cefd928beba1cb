"""Imitation dataset from expert-controlled simulations, training loop, and evaluation.

Dataset file schema (CSV, one row per sample, fixed column order):

    12 input channels        v_o_del, v_o, dv_o, i_L_del, i_L, di_L, y_del, y, dy, d_prev, C_prev, L_prev
    state targets            v_1, i_1, ..., v_n, i_n        (x at k+1..k+n)
    duty targets             u_1..u_n                       (expert duty applied over (k+j-1, k+j])
    disturbance targets      d_1..d_n                       (mean load current over the same intervals)
    parameter targets        C, L                           (true plant values)
    context                  u_prev, y_ref, scenario, step, t

``y`` is the tracking error v_ref - v_o. ``d_prev``, ``C_prev``, ``L_prev`` are the estimate
feedback channels. At deployment they carry the network's previous outputs. In the dataset they
carry the true previous values perturbed by ``d_noise``/``theta_noise``, so the network learns to
correct them from measurements instead of copying them; a ``cold_fraction`` of samples holds the
cold-start prior (zero disturbance, nominal parameters) instead.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .closed_loop import ExpertController, run_closed_loop
from .control import CostWeights
from .converter import LoadDescriptor, PlantConfig, StateVector, integrate_interval
from .errors import BuckPinnError, EmptyDataset, NonFiniteLoss, SimulationDiverged, ValidationError
from .io_utils import atomic_writer
from .losses import Batch, LossConfig, backprop, total_loss
from .net import INPUT_CHANNELS, NetModel, fit_normalization, init_net, output_channel_names, output_dim
from .physics import T_CTRL

TABLE_I_R = (4.037, 2.537, 5.759)
TABLE_I_CPL = (60.0, 150.0, 100.0)
# step targets: the CPL bus-test levels and the resistive/CPL hardware-test levels
STEP_TARGETS = {"impedance": (3.0, 7.0, 4.037, 2.537, 5.759), "cpl": (120.0, 200.0, 80.0, 180.0)}
PARAM_VARIANTS = {
    "nom": (1.0, 1.0),
    "L+25": (1.25, 1.0),
    "L-25": (0.75, 1.0),
    "C+25": (1.0, 1.25),
    "C-25": (1.0, 0.75),
}
CHECKPOINT_SCHEDULE = (1e4, 5e4, 1.5e5, 2e5, 2.5e5, 3e5)
FULL_BUDGET = 300_000


@dataclass(frozen=True)
class Scenario:
    id: str
    plant: PlantConfig


@dataclass(frozen=True)
class DatasetSpec:
    scenarios: tuple[Scenario, ...]
    count: int = 18_000
    split: float = 0.75
    seed: int = 0
    horizon: int = 6
    warmup: int = 9
    v_ref: float = 25.0
    T_ctrl: float = T_CTRL
    d_noise: float = 0.5          # A, std of the disturbance feedback perturbation
    theta_noise: float = 0.05     # std of the log-parameter feedback perturbation
    cold_fraction: float = 0.1    # share of samples whose feedback holds the cold-start prior
    cost: CostWeights = CostWeights()

    def __post_init__(self):
        if not (0.0 < self.split < 1.0):
            raise ValidationError("split fraction must be in (0, 1)")
        if not (0.0 <= self.cold_fraction <= 1.0):
            raise ValidationError("cold_fraction must be in [0, 1]")
        if self.count < 1:
            raise ValidationError("count must be >= 1")
        if self.warmup < 1:
            raise ValidationError("warmup must be >= 1 (inputs need one delayed sample)")
        if self.cost.n != self.horizon:
            raise ValidationError("cost horizon must equal dataset horizon")

    @property
    def per_run(self) -> int:
        if not self.scenarios:
            raise EmptyDataset("no scenarios")
        return math.ceil(self.count / len(self.scenarios))

    @property
    def run_steps(self) -> int:
        """Control steps simulated per scenario."""
        return self.warmup + self.per_run + self.horizon


def default_scenarios(count: int = 18_000, seed: int = 0, horizon: int = 6, warmup: int = 9,
                      event_period: float = 5e-3, T_ctrl: float = T_CTRL,
                      variants=PARAM_VARIANTS) -> tuple[Scenario, ...]:
    """Six case loads x parameter variants, each with load steps every ``event_period``.

    The load alternates between its base value and a step target drawn (seeded) from
    the family's step levels, starting one period into the run.
    """
    rng = np.random.default_rng(seed)
    bases = [("impedance", r) for r in TABLE_I_R] + [("cpl", p) for p in TABLE_I_CPL]
    n_runs = len(bases) * len(variants)
    steps = warmup + math.ceil(count / n_runs) + horizon
    duration = steps * T_ctrl
    scenarios = []
    for kind, base in bases:
        for vname, (fl, fc) in variants.items():
            sched = []
            t, on = event_period, True
            while t < duration:
                if on:
                    choices = [v for v in STEP_TARGETS[kind] if v != base]
                    sched.append((t, float(rng.choice(choices))))
                else:
                    sched.append((t, base))
                on = not on
                t += event_period
            load = LoadDescriptor(kind, base, tuple(sched))
            plant = PlantConfig(L_true=2e-3 * fl, C_true=1e-3 * fc, load=load)
            scenarios.append(Scenario(f"{kind}{base:g}_{vname}", plant))
    return tuple(scenarios)


def default_dataset_spec(count: int = 18_000, seed: int = 0, event_period: float = 5e-3,
                         **kw) -> DatasetSpec:
    horizon = kw.get("horizon", 6)
    warmup = kw.get("warmup", 9)
    scen = default_scenarios(count, seed, horizon, warmup, event_period)
    return DatasetSpec(scen, count=count, seed=seed, **kw)


@dataclass
class Dataset:
    inputs: np.ndarray     # (N, 12)
    X: np.ndarray          # (N, n, 2)
    U: np.ndarray          # (N, n)
    D: np.ndarray          # (N, n)
    theta: np.ndarray      # (N, 2)
    u_prev: np.ndarray     # (N,)
    y_ref: np.ndarray      # (N,)
    scenario: np.ndarray   # (N,) int index into the spec's scenarios
    step: np.ndarray       # (N,) int control-step index k within the run
    t: np.ndarray          # (N,)

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def horizon(self):
        return self.U.shape[1]

    @property
    def x_k(self):
        return self.inputs[:, [1, 4]]

    def targets_flat(self) -> np.ndarray:
        """(N, 4n) state/duty/disturbance targets in output-channel order."""
        N = len(self)
        return np.concatenate([self.X.reshape(N, -1), self.U, self.D], axis=1)

    def all_targets(self) -> np.ndarray:
        return np.concatenate([self.targets_flat(), self.theta], axis=1)

    def batch(self, idx=None) -> Batch:
        idx = slice(None) if idx is None else idx
        return Batch(self.inputs[idx], self.x_k[idx], self.u_prev[idx], self.y_ref[idx],
                     self.X[idx], self.U[idx], self.D[idx], self.theta[idx])

    def subset(self, idx) -> "Dataset":
        return Dataset(*(getattr(self, f)[idx] for f in _FIELDS))

    # -- file io --------------------------------------------------------------------

    def columns(self) -> list[str]:
        return list(INPUT_CHANNELS) + output_channel_names(self.horizon) + list(_CONTEXT)

    def to_array(self) -> np.ndarray:
        return np.column_stack([self.inputs, self.all_targets(), self.u_prev, self.y_ref,
                                self.scenario, self.step, self.t])

    def save_csv(self, path) -> None:
        with atomic_writer(path) as fh:
            w = csv.writer(fh)
            w.writerow(self.columns())
            ints = {len(self.columns()) - 3, len(self.columns()) - 2}
            for row in self.to_array():
                w.writerow([str(int(v)) if j in ints else repr(float(v)) for j, v in enumerate(row)])

    @classmethod
    def load_csv(cls, path) -> "Dataset":
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = next(r)
            data = np.array([[float(v) for v in row] for row in r], dtype=float)
        n = (len(header) - len(INPUT_CHANNELS) - len(_CONTEXT) - 2) // 4
        if header != list(INPUT_CHANNELS) + output_channel_names(n) + list(_CONTEXT):
            raise ValidationError(f"{path}: unexpected dataset header")
        if data.size == 0:
            raise EmptyDataset(f"{path}: no rows")
        return cls.from_array(data, n)

    @classmethod
    def from_array(cls, data, n) -> "Dataset":
        N = data.shape[0]
        o = len(INPUT_CHANNELS)
        inputs = data[:, :o]
        X = data[:, o: o + 2 * n].reshape(N, n, 2)
        o += 2 * n
        U = data[:, o: o + n]
        o += n
        D = data[:, o: o + n]
        o += n
        theta = data[:, o: o + 2]
        o += 2
        return cls(inputs, X, U, D, theta, data[:, o], data[:, o + 1],
                   data[:, o + 2].astype(int), data[:, o + 3].astype(int), data[:, o + 4])


_FIELDS = ("inputs", "X", "U", "D", "theta", "u_prev", "y_ref", "scenario", "step", "t")
_CONTEXT = ("u_prev", "y_ref", "scenario", "step", "t")


def build_inputs(v_del, v, i_del, i, v_ref, d_prev, C_prev, L_prev):
    """Assemble input-set rows from (arrays of) measurements and feedback values."""
    y_del, y = v_ref - v_del, v_ref - v
    return np.column_stack(np.broadcast_arrays(
        v_del, v, v - v_del, i_del, i, i - i_del, y_del, y, y - y_del, d_prev, C_prev, L_prev))


def _scenario_rows(spec: DatasetSpec, s_idx: int, sc: Scenario):
    expert = ExpertController(spec.cost, theta=None, T_ctrl=spec.T_ctrl)
    K = spec.run_steps
    try:
        tr = run_closed_loop(sc.plant, expert, K * spec.T_ctrl, spec.v_ref, T_ctrl=spec.T_ctrl)
    except BuckPinnError as e:
        raise SimulationDiverged(sc.id, e) from e
    n, m = spec.horizon, spec.per_run
    k = np.arange(spec.warmup, spec.warmup + m)
    rng = np.random.default_rng([spec.seed, s_idx])
    C, L = sc.plant.C_true, sc.plant.L_true
    d_prev = tr.load_mean[k - 1] + spec.d_noise * rng.standard_normal(m)
    C_prev = C * np.exp(spec.theta_noise * rng.standard_normal(m))
    L_prev = L * np.exp(spec.theta_noise * rng.standard_normal(m))
    cold = rng.random(m) < spec.cold_fraction
    d_prev[cold] = 0.0
    C_prev[cold] = sc.plant.C_N
    L_prev[cold] = sc.plant.L_N
    inputs = build_inputs(tr.v_o[k - 1], tr.v_o[k], tr.i_L[k - 1], tr.i_L[k], spec.v_ref,
                          d_prev, C_prev, L_prev)
    fut = k[:, None] + np.arange(1, n + 1)
    X = np.stack([tr.v_o[fut], tr.i_L[fut]], axis=2)
    U = tr.duty[fut - 1]
    D = tr.load_mean[fut - 1]
    theta = np.tile([C, L], (m, 1))
    return Dataset(inputs, X, U, D, theta, tr.duty[k - 1], np.full(m, spec.v_ref),
                   np.full(m, s_idx), k, tr.t[k])


def generate_dataset(spec: DatasetSpec) -> Dataset:
    """Closed-loop expert rollouts over every scenario, truncated to exactly ``spec.count``."""
    if not spec.scenarios:
        raise EmptyDataset("dataset spec has no scenarios")
    parts = [_scenario_rows(spec, j, sc) for j, sc in enumerate(spec.scenarios)]
    full = Dataset(*(np.concatenate([getattr(p, f) for p in parts]) for f in _FIELDS))
    return full.subset(np.arange(spec.count))


def split_indices(N: int, fraction: float = 0.75, seed: int = 0):
    """Seeded random partition into (train, validation) index arrays."""
    if not (0.0 < fraction < 1.0):
        raise ValidationError("split fraction must be in (0, 1)")
    perm = np.random.default_rng(seed).permutation(N)
    n_train = int(round(fraction * N))
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def replay_sample(ds: Dataset, j: int, spec: DatasetSpec) -> np.ndarray:
    """Re-simulate sample ``j`` from its logged state with its logged duties; returns (n, 2)."""
    sc = spec.scenarios[int(ds.scenario[j])]
    sub = int(round(spec.T_ctrl / sc.plant.sim_dt))
    x = StateVector(ds.inputs[j, 1], ds.inputs[j, 4])
    k = int(ds.step[j])
    out = np.empty((ds.horizon, 2))
    for m in range(ds.horizon):
        x = integrate_interval(x, float(ds.U[j, m]), sc.plant, (k + m) * sub, sub).state
        out[m] = (x.v_o, x.i_L)
    return out


# -- evaluation ---------------------------------------------------------------------------

def predictions_flat(net: NetModel, inputs) -> np.ndarray:
    p = net.predict(inputs)
    N = p.U.shape[0]
    return np.concatenate([p.X.reshape(N, -1), p.U, p.D, p.theta], axis=1)


def percentage_error(net: NetModel, ds: Dataset, idx=None) -> float:
    """Mean over samples and output channels of |pred - target| / range * 100.

    Ranges are the per-channel spans of the training split stored with the network.
    """
    sub = ds if idx is None else ds.subset(idx)
    if len(sub) == 0:
        raise EmptyDataset("no samples to evaluate")
    return percentage_error_arrays(predictions_flat(net, sub.inputs), sub.all_targets(),
                                   net.norm.out_range)


def percentage_error_arrays(pred, target, out_range) -> float:
    pred, target = np.atleast_2d(pred), np.atleast_2d(target)
    if pred.shape != target.shape:
        raise ValidationError(f"prediction shape {pred.shape} != target shape {target.shape}")
    err = np.abs(pred - target) / np.maximum(out_range, 1e-9)
    return float(100.0 * err.mean())


# -- training -----------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    hidden: tuple[int, ...] = (32, 32)
    iterations: int = 50_000
    batch_size: int = 256
    lr: float = 1e-3
    lr_final: float | None = 1e-5   # cosine decay from lr to lr_final; None keeps lr constant
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    loss: LossConfig = LossConfig()
    checkpoints: tuple[int, ...] | None = None  # default: loss-table schedule scaled to budget

    def checkpoint_iters(self) -> list[int]:
        if self.checkpoints is not None:
            return sorted({int(c) for c in self.checkpoints if 0 < c <= self.iterations})
        scale = self.iterations / FULL_BUDGET
        return sorted({max(1, int(round(c * scale))) for c in CHECKPOINT_SCHEDULE})


@dataclass
class ConvergenceLog:
    rows: list[tuple[int, float, float]] = field(default_factory=list)

    def add(self, iteration, avg_loss, pct):
        self.rows.append((int(iteration), float(avg_loss), float(pct)))

    def write_csv(self, path):
        with atomic_writer(path) as fh:
            w = csv.writer(fh)
            w.writerow(("iteration", "avg_loss", "pct_error"))
            for it, loss, pct in self.rows:
                w.writerow((it, repr(loss), repr(pct)))


class Adam:
    def __init__(self, size, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params, grad):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mhat = self.m / (1 - self.b1 ** self.t)
        vhat = self.v / (1 - self.b2 ** self.t)
        params -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def make_net(ds: Dataset, train_idx, hidden=(32, 32), seed: int = 0,
             theta_nominal=(1e-3, 2e-3)) -> NetModel:
    tr = ds.subset(train_idx)
    norm = fit_normalization(tr.inputs, tr.targets_flat(), tr.theta, ds.horizon)
    sizes = [len(INPUT_CHANNELS), *hidden, output_dim(ds.horizon)]
    return init_net(sizes, ds.horizon, norm, seed=seed, theta_nominal=theta_nominal)


def train(ds: Dataset, train_idx, val_idx, cfg: TrainConfig = TrainConfig(), net: NetModel | None = None,
          log=None) -> tuple[NetModel, ConvergenceLog]:
    """Mini-batch Adam on the hybrid loss; returns the best-validation checkpoint and the log."""
    if len(train_idx) == 0:
        raise EmptyDataset("empty training split")
    net = make_net(ds, train_idx, cfg.hidden, cfg.seed) if net is None else net
    opt = Adam(net.param_count, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    rng = np.random.default_rng(cfg.seed)
    full = ds.batch()
    train_idx = np.asarray(train_idx)
    bs = min(cfg.batch_size, len(train_idx))
    checkpoints = set(cfg.checkpoint_iters())
    conv = ConvergenceLog()
    best = (math.inf, net.params.copy())
    perm, pos = rng.permutation(train_idx), 0
    running, count = 0.0, 0
    t0 = time.time()
    eval_idx = val_idx if len(val_idx) else train_idx
    for it in range(1, cfg.iterations + 1):
        if pos + bs > len(perm):
            perm, pos = rng.permutation(train_idx), 0
        idx = perm[pos: pos + bs]
        pos += bs
        value, grad, _ = backprop(net, full.take(idx), cfg.loss)
        if not (math.isfinite(value) and np.all(np.isfinite(grad))):
            raise NonFiniteLoss(it, value)
        if cfg.lr_final is not None:
            frac = (it - 1) / max(cfg.iterations - 1, 1)
            opt.lr = cfg.lr_final + 0.5 * (cfg.lr - cfg.lr_final) * (1 + math.cos(math.pi * frac))
        opt.step(net.params, grad)
        running += value
        count += 1
        if it in checkpoints:
            pct = percentage_error(net, ds, eval_idx)
            conv.add(it, running / count, pct)
            running, count = 0.0, 0
            if pct < best[0]:
                best = (pct, net.params.copy())
            if log:
                log(f"iter {it:>7d}  loss {conv.rows[-1][1]:.4g}  val% {pct:.3f}  ({time.time() - t0:.0f}s)")
    out = net.copy()
    out.set_params(best[1])
    out.meta.update({"best_val_pct": best[0], "iterations": cfg.iterations,
                     "lambda_phy": cfg.loss.weights.lambda_phy,
                     "lambda_ctrl": cfg.loss.weights.lambda_ctrl,
                     "expert_grad": cfg.loss.expert_grad, "seed": cfg.seed})
    return out, conv


def evaluate_losses(net: NetModel, ds: Dataset, idx, cfg: LossConfig = LossConfig()):
    pred = net.predict(ds.inputs[idx])
    br, _ = total_loss(pred, ds.batch(idx), net.norm, cfg)
    return br


def sweep_architecture(ds: Dataset, train_idx, val_idx, layers=(1, 2, 3, 4, 5, 6),
                       neurons=(8, 16, 32, 64), iterations: int = 5_000, seed: int = 0,
                       loss: LossConfig = LossConfig(), log=None) -> np.ndarray:
    """Validation percentage error for every (neurons, layers) cell under an equal budget."""
    table = np.empty((len(neurons), len(layers)))
    for a, width in enumerate(neurons):
        for b, depth in enumerate(layers):
            cfg = TrainConfig(hidden=(width,) * depth, iterations=iterations, seed=seed, loss=loss,
                              checkpoints=(iterations,))
            net, _ = train(ds, train_idx, val_idx, cfg)
            table[a, b] = percentage_error(net, ds, val_idx)
            if log:
                log(f"{width:>3d} neurons x {depth} layers: {table[a, b]:.2f}%")
    return table


def write_sweep_csv(path, table, layers, neurons) -> None:
    with atomic_writer(path) as fh:
        w = csv.writer(fh)
        w.writerow(["neurons", *[str(l) for l in layers]])
        for width, row in zip(neurons, table):
            w.writerow([str(width), *[repr(float(v)) for v in row]])
