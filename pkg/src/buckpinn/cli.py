"""Command-line entry point: simulate, gen-data, train, eval, sweep, bound.

Configuration is one JSON document (see ``--dump-config`` for the full default).
Exit status: 0 success, 1 validation/config error, 2 runtime fault.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .analysis import bound_report
from .closed_loop import (ExpertController, PiController, Trajectory, peak_deviation, ise,
                          run_closed_loop, settling_time, steady_state_error)
from .control import CostWeights, PiConfig
from .converter import LoadDescriptor, PlantConfig
from .errors import BuckPinnError, ValidationError
from .io_utils import atomic_writer
from .losses import LossConfig, LossWeights
from .net import load_checkpoint, save_checkpoint
from .physics import T_CTRL


# -- configuration ------------------------------------------------------------------------

@dataclass
class ScenarioConfig:
    name: str = "cpl_60_120"
    plant: PlantConfig = field(default_factory=lambda: PlantConfig(
        load=LoadDescriptor.cpl(60.0, ((0.03, 120.0), (0.07, 60.0)))))
    controller: str = "expert"      # expert | pi | pinn:<checkpoint>
    duration: float = 0.1
    v_ref: float = 25.0
    seed: int = 0
    trajectory: str | None = None   # default <out>/<name>_<controller>.csv

    def __post_init__(self):
        if not self.duration > 0:
            raise ValidationError("duration must be > 0")
        if not self.v_ref > 0:
            raise ValidationError("v_ref must be > 0")
        kind = self.controller.split(":", 1)[0]
        if kind not in ("expert", "pi", "pinn"):
            raise ValidationError(f"unknown controller {self.controller!r}")
        if kind == "pinn" and not self.controller[5:]:
            raise ValidationError("pinn controller needs a checkpoint path: pinn:<path>")


def _step_scenario(name, kind, base, high, t_up=0.03, t_down=0.07, duration=0.1):
    load = LoadDescriptor(kind, base, ((t_up, high), (t_down, base)))
    return ScenarioConfig(name=name, plant=PlantConfig(load=load), duration=duration)


def default_eval_scenarios() -> list[ScenarioConfig]:
    return [
        _step_scenario("cpl_60_120", "cpl", 60.0, 120.0),
        _step_scenario("cpl_60_200", "cpl", 60.0, 200.0),
        _step_scenario("r_3_7", "impedance", 3.0, 7.0),
        _step_scenario("cpl_80_180", "cpl", 80.0, 180.0),
    ]


@dataclass
class DatasetSection:
    count: int = 18_000
    split: float = 0.75
    d_noise: float = 0.5
    theta_noise: float = 0.05
    cold_fraction: float = 0.1
    path: str | None = None         # default <out>/dataset.csv


@dataclass
class TrainSection:
    hidden: list = field(default_factory=lambda: [32, 32])
    iterations: int = 50_000
    batch_size: int = 256
    lr: float = 1e-3
    lr_final: float | None = 1e-5
    lambda_phy: float = 0.6
    lambda_ctrl: float = 10.0
    expert_grad: str = "stop"
    checkpoint: str | None = None   # default <out>/net.json


@dataclass
class SweepSection:
    layers: list = field(default_factory=lambda: [1, 2, 3, 4, 5, 6])
    neurons: list = field(default_factory=lambda: [8, 16, 32, 64])
    iterations: int = 5_000


@dataclass
class BoundSection:
    layer_sizes: list = field(default_factory=lambda: [15, 32, 32, 28])
    m: int = 14_500
    delta: float = 0.05
    R_test: float | None = 0.0303
    R_emp: float | None = 0.019


@dataclass
class AppConfig:
    seed: int = 0
    out: str = "out"
    plot: bool = False
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    eval_scenarios: list = field(default_factory=default_eval_scenarios)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    train: TrainSection = field(default_factory=TrainSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    bound: BoundSection = field(default_factory=BoundSection)
    pi: PiConfig = field(default_factory=PiConfig)
    cost: CostWeights = field(default_factory=CostWeights)


def _scenario_to_dict(s: ScenarioConfig) -> dict:
    d = asdict(s)
    d["plant"] = s.plant.to_dict()
    return d


def config_to_dict(cfg: AppConfig) -> dict:
    d = {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg)}
    d["scenario"] = _scenario_to_dict(cfg.scenario)
    d["eval_scenarios"] = [_scenario_to_dict(s) for s in cfg.eval_scenarios]
    for k in ("dataset", "train", "sweep", "bound", "pi", "cost"):
        d[k] = asdict(d[k])
    return d


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ValidationError(f"{where}: expected an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValidationError(f"{where}: unknown field(s) {', '.join(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as e:
        raise ValidationError(f"{where}: {e}") from e


def _scenario_from_dict(d, where) -> ScenarioConfig:
    if not isinstance(d, dict):
        raise ValidationError(f"{where}: expected an object")
    d = dict(d)
    if "plant" in d:
        p = d["plant"]
        if not isinstance(p, dict) or not set(p) <= {f.name for f in dataclasses.fields(PlantConfig)}:
            raise ValidationError(f"{where}.plant: unknown or malformed fields")
        try:
            d["plant"] = PlantConfig.from_dict(p)
        except (KeyError, TypeError, ValueError) as e:
            raise ValidationError(f"{where}.plant: {e}") from e
    return _build(ScenarioConfig, d, where)


def config_from_dict(d: dict) -> AppConfig:
    if not isinstance(d, dict):
        raise ValidationError("config: top level must be an object")
    base = AppConfig()
    unknown = sorted(set(d) - {f.name for f in dataclasses.fields(AppConfig)})
    if unknown:
        raise ValidationError(f"config: unknown field(s) {', '.join(unknown)}")
    kw = {}
    for k in ("seed", "out", "plot"):
        if k in d:
            kw[k] = d[k]
    if "scenario" in d:
        kw["scenario"] = _scenario_from_dict(d["scenario"], "scenario")
    if "eval_scenarios" in d:
        if not isinstance(d["eval_scenarios"], list):
            raise ValidationError("eval_scenarios: expected a list")
        kw["eval_scenarios"] = [_scenario_from_dict(s, f"eval_scenarios[{j}]")
                                for j, s in enumerate(d["eval_scenarios"])]
    sections = {"dataset": DatasetSection, "train": TrainSection, "sweep": SweepSection,
                "bound": BoundSection, "pi": PiConfig, "cost": CostWeights}
    for k, cls in sections.items():
        if k in d:
            kw[k] = _build(cls, d[k], k)
    if not isinstance(kw.get("seed", 0), int) or kw.get("seed", 0) < 0:
        raise ValidationError("seed: expected a nonnegative integer")
    return dataclasses.replace(base, **kw)


def load_config(path) -> AppConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ValidationError(f"cannot read config {path}: {e}") from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from e
    return config_from_dict(data)


# -- helpers ------------------------------------------------------------------------------

def _out(cfg: AppConfig, name: str | None, default: str) -> Path:
    p = Path(name) if name else Path(cfg.out) / default
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def make_controller(spec: str, cfg: AppConfig):
    kind, _, arg = spec.partition(":")
    if kind == "expert":
        return ExpertController(cfg.cost)
    if kind == "pi":
        return PiController(cfg.pi)
    from .pinn_controller import PinnController
    if not Path(arg).is_file():
        raise ValidationError(f"checkpoint {arg} does not exist")
    return PinnController(load_checkpoint(arg))


def event_times(plant: PlantConfig) -> list[float]:
    return [float(t) for t, _ in plant.load.schedule]


def summarize(tr: Trajectory, sc: ScenarioConfig) -> dict:
    """Worst-case settling time and peak deviation over the load events (or the whole run)."""
    events = [t for t in event_times(sc.plant) if t < sc.duration] or [0.0]
    ends = events[1:] + [None]
    settle = max(settling_time(tr.t, tr.v_o, sc.v_ref, a, t_end=b) for a, b in zip(events, ends))
    return {
        "settling_time": settle,
        "peak_deviation": peak_deviation(tr.t, tr.v_o, sc.v_ref, events[0]),
        "ise": ise(tr.t, tr.v_o, sc.v_ref),
        "steady_state_error": steady_state_error(tr.t, tr.v_o, sc.v_ref),
        "v_min": float(np.min(tr.v_o)),
        "v_max": float(np.max(tr.v_o)),
    }


def run_scenario(sc: ScenarioConfig, cfg: AppConfig, controller_spec: str | None = None):
    spec = controller_spec or sc.controller
    ctrl = make_controller(spec, cfg)
    try:
        tr = run_closed_loop(sc.plant, ctrl, sc.duration, sc.v_ref, T_ctrl=T_CTRL)
    except BuckPinnError as e:
        if isinstance(e, ValidationError):
            raise
        raise RuntimeError(f"scenario {sc.name} ({spec}): {e}") from e
    return tr, ctrl


def plot_traces(path, traces: dict, v_ref: float) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(7, 5))
    for name, tr in traces.items():
        ax1.plot(tr.t * 1e3, tr.v_o, label=name, lw=1)
        ax2.plot(tr.t * 1e3, tr.i_L, label=name, lw=1)
    ax1.axhline(v_ref, color="k", lw=0.5, ls=":")
    ax1.set_ylabel("v_o [V]")
    ax2.set_ylabel("i_L [A]")
    ax2.set_xlabel("t [ms]")
    ax1.legend(loc="best")
    fig.tight_layout()
    tmp = Path(path).with_suffix(".tmp.svg")
    fig.savefig(tmp, format="svg")
    plt.close(fig)
    tmp.replace(path)


def _write_rows(path, header, rows):
    import csv
    with atomic_writer(path) as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


# -- commands -----------------------------------------------------------------------------

def cmd_simulate(cfg: AppConfig) -> int:
    sc = cfg.scenario
    tr, ctrl = run_scenario(sc, cfg)
    label = sc.controller.split(":", 1)[0]
    path = _out(cfg, sc.trajectory, f"{sc.name}_{label}.csv")
    tr.write_csv(path, fine=False)
    if label == "pinn":
        ctrl.write_telemetry(path.with_name(path.stem + "_telemetry.csv"))
    s = summarize(tr, sc)
    print(f"scenario {sc.name}, controller {sc.controller}, {sc.duration:g} s")
    for k, v in s.items():
        print(f"  {k:<19s} {v:.6g}")
    print(f"  trajectory          {path}")
    if cfg.plot:
        plot_traces(path.with_suffix(".svg"), {label: tr}, sc.v_ref)
    return 0


def _dataset_spec(cfg: AppConfig):
    from .training import default_dataset_spec
    d = cfg.dataset
    return default_dataset_spec(d.count, cfg.seed, split=d.split, d_noise=d.d_noise,
                                theta_noise=d.theta_noise, cold_fraction=d.cold_fraction,
                                cost=cfg.cost, horizon=cfg.cost.n)


def cmd_gen_data(cfg: AppConfig) -> int:
    from .training import generate_dataset, split_indices
    spec = _dataset_spec(cfg)
    ds = generate_dataset(spec)
    path = _out(cfg, cfg.dataset.path, "dataset.csv")
    ds.save_csv(path)
    tr, va = split_indices(len(ds), spec.split, cfg.seed)
    print(f"{len(ds)} samples from {len(spec.scenarios)} scenarios -> {path}")
    print(f"split: {len(tr)} train / {len(va)} validation")
    return 0


def _load_or_generate(cfg: AppConfig):
    from .training import Dataset, generate_dataset
    path = _out(cfg, cfg.dataset.path, "dataset.csv")
    if path.is_file():
        return Dataset.load_csv(path)
    print(f"{path} not found; generating")
    ds = generate_dataset(_dataset_spec(cfg))
    ds.save_csv(path)
    return ds


def _loss_config(cfg: AppConfig) -> LossConfig:
    t = cfg.train
    return LossConfig(LossWeights(t.lambda_phy, t.lambda_ctrl), cfg.cost, t.expert_grad)


def cmd_train(cfg: AppConfig) -> int:
    from .training import TrainConfig, percentage_error, split_indices, train
    ds = _load_or_generate(cfg)
    tr, va = split_indices(len(ds), cfg.dataset.split, cfg.seed)
    t = cfg.train
    tc = TrainConfig(hidden=tuple(t.hidden), iterations=t.iterations, batch_size=t.batch_size,
                     lr=t.lr, lr_final=t.lr_final, seed=cfg.seed, loss=_loss_config(cfg))
    net, log = train(ds, tr, va, tc, log=print)
    ck = _out(cfg, t.checkpoint, "net.json")
    save_checkpoint(net, ck)
    log.write_csv(ck.with_name("convergence.csv"))
    print(f"train {percentage_error(net, ds, tr):.3f}%  validation {percentage_error(net, ds, va):.3f}%")
    print(f"checkpoint -> {ck}")
    return 0


def cmd_eval(cfg: AppConfig) -> int:
    ck = _out(cfg, cfg.train.checkpoint, "net.json")
    controllers = ["pinn:" + str(ck), "pi", "expert"]
    if not ck.is_file():
        raise ValidationError(f"checkpoint {ck} does not exist; run train first")
    rows = []
    for sc in cfg.eval_scenarios:
        traces = {}
        for spec in controllers:
            label = spec.split(":", 1)[0]
            tr, _ = run_scenario(sc, cfg, spec)
            traces[label] = tr
            tr.write_csv(_out(cfg, None, f"traces/{sc.name}_{label}.csv"), fine=False)
            s = summarize(tr, sc)
            rows.append([sc.name, label, s["settling_time"], s["peak_deviation"], s["ise"],
                         s["steady_state_error"], s["v_min"], s["v_max"]])
            print(f"{sc.name:<12s} {label:<7s} settle {s['settling_time'] * 1e3:7.3f} ms  "
                  f"dev {s['peak_deviation']:.3f} V  ISE {s['ise']:.4g}")
        if cfg.plot:
            plot_traces(_out(cfg, None, f"traces/{sc.name}.svg"), traces, sc.v_ref)
    path = _out(cfg, None, "comparison.csv")
    _write_rows(path, ["scenario", "controller", "settling_time", "peak_deviation", "ise",
                       "steady_state_error", "v_min", "v_max"], rows)
    print(f"comparison -> {path}")
    return 0


def cmd_sweep(cfg: AppConfig) -> int:
    from .training import split_indices, sweep_architecture, write_sweep_csv
    ds = _load_or_generate(cfg)
    tr, va = split_indices(len(ds), cfg.dataset.split, cfg.seed)
    s = cfg.sweep
    table = sweep_architecture(ds, tr, va, tuple(s.layers), tuple(s.neurons), s.iterations,
                               cfg.seed, _loss_config(cfg), log=print)
    path = _out(cfg, None, "sweep.csv")
    write_sweep_csv(path, table, s.layers, s.neurons)
    print(f"sweep -> {path}")
    return 0


def cmd_bound(cfg: AppConfig, as_csv: bool = False) -> int:
    b = cfg.bound
    rep = bound_report(b.layer_sizes, b.m, b.delta, b.R_test, b.R_emp)
    print(rep.csv_row() if as_csv else rep.text(), end="\n" if not as_csv else "")
    return 0


COMMANDS = {"simulate": cmd_simulate, "gen-data": cmd_gen_data, "train": cmd_train,
            "eval": cmd_eval, "sweep": cmd_sweep, "bound": cmd_bound}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS keeps a flag given before the subcommand from being reset by the subparser
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--dump-config", action="store_true",
                        help="print the effective config as JSON and exit")
    common.add_argument("--plot", action="store_true", help="also write SVG plots")
    p = _Parser(prog="buckpinn", description=__doc__.splitlines()[0], parents=[common])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "simulate":
            sp.add_argument("--controller", help="expert | pi | pinn:<checkpoint>")
            sp.add_argument("--duration", type=float)
        if name == "train":
            sp.add_argument("--iterations", type=int)
        if name == "bound":
            sp.add_argument("--csv", action="store_true", help="machine-readable CSV row")
            sp.add_argument("--m", type=int)
            sp.add_argument("--delta", type=float)
    return p


def resolve_config(args) -> AppConfig:
    cfg = load_config(args.config) if args.config else AppConfig()
    upd = {}
    if args.seed is not None:
        if args.seed < 0:
            raise ValidationError("--seed must be nonnegative")
        upd["seed"] = args.seed
    if args.out is not None:
        upd["out"] = args.out
    if args.plot:
        upd["plot"] = True
    cfg = dataclasses.replace(cfg, **upd)
    if getattr(args, "controller", None) or getattr(args, "duration", None) is not None:
        sc = cfg.scenario
        cfg.scenario = dataclasses.replace(
            sc, controller=args.controller or sc.controller,
            duration=sc.duration if args.duration is None else args.duration)
    if getattr(args, "iterations", None) is not None:
        cfg.train = dataclasses.replace(cfg.train, iterations=args.iterations)
    if getattr(args, "m", None) is not None or getattr(args, "delta", None) is not None:
        b = cfg.bound
        cfg.bound = dataclasses.replace(b, m=args.m if args.m is not None else b.m,
                                        delta=args.delta if args.delta is not None else b.delta)
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # usage errors exit 1 (see _Parser.error), --help exits 0
        return int(e.code or 0)
    for k, v in (("config", None), ("seed", None), ("out", None), ("dump_config", False), ("plot", False)):
        if not hasattr(args, k):
            setattr(args, k, v)
    try:
        cfg = resolve_config(args)
        if args.dump_config:
            print(json.dumps(config_to_dict(cfg), indent=2))
            return 0
        if args.command == "bound":
            return cmd_bound(cfg, args.csv)
        return COMMANDS[args.command](cfg)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (BuckPinnError, RuntimeError, ArithmeticError, OSError) as e:
        print(f"fault: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
