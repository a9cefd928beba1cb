"""Architecture sweep: validation error for 1..6 hidden layers x {8, 16, 32, 64} neurons."""
import argparse
from pathlib import Path

from buckpinn.training import (Dataset, default_dataset_spec, generate_dataset, split_indices,
                               sweep_architecture, write_sweep_csv)


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--dataset", default="runs/desk/dataset.csv")
    p.add_argument("--iterations", type=int, default=5_000)
    p.add_argument("--out", default="runs/sweep.csv")
    args = p.parse_args()
    path = Path(args.dataset)
    ds = Dataset.load_csv(path) if path.is_file() else generate_dataset(default_dataset_spec())
    tr, va = split_indices(len(ds), 0.75, 0)
    layers, neurons = (1, 2, 3, 4, 5, 6), (8, 16, 32, 64)
    table = sweep_architecture(ds, tr, va, layers, neurons, args.iterations, log=print)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(args.out, table, layers, neurons)


if __name__ == "__main__":
    main()
