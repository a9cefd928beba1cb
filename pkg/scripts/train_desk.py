"""Generate the 18,000-sample imitation dataset and train the default 2x32 network.

Writes dataset.csv, net.json and convergence.csv under --out.
"""
import argparse
import time
from pathlib import Path

from buckpinn.net import save_checkpoint
from buckpinn.training import (TrainConfig, default_dataset_spec, generate_dataset,
                               percentage_error, split_indices, train)


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default="runs/desk")
    p.add_argument("--iterations", type=int, default=50_000)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    t0 = time.time()
    spec = default_dataset_spec(18_000, args.seed)
    ds = generate_dataset(spec)
    ds.save_csv(out / "dataset.csv")
    print(f"dataset: {len(ds)} samples in {time.time() - t0:.1f} s")

    tr, va = split_indices(len(ds), spec.split, args.seed)
    cfg = TrainConfig(iterations=args.iterations, seed=args.seed)
    net, log = train(ds, tr, va, cfg, log=print)
    save_checkpoint(net, out / "net.json")
    log.write_csv(out / "convergence.csv")
    print(f"train {percentage_error(net, ds, tr):.2f}%  validation {percentage_error(net, ds, va):.2f}%")


if __name__ == "__main__":
    main()
