"""Complexity, Hoeffding epsilon and gap audit for the reported architecture and for ours."""
import argparse

from buckpinn.analysis import bound_report


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--m", type=int, default=14_500)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--r-test", type=float, default=0.0303)
    p.add_argument("--r-emp", type=float, default=0.019)
    args = p.parse_args()
    for sizes in ([15, 32, 32, 28], [12, 32, 32, 26]):
        print(bound_report(sizes, args.m, args.delta, args.r_test, args.r_emp).text())
        print()


if __name__ == "__main__":
    main()
