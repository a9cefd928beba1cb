"""Run PINN, PI and expert on the load-step scenarios and print the comparison table.

Needs a checkpoint from train_desk.py. Traces and (with --plot) SVG figures go to --out.
"""
import argparse
import json
import sys
import tempfile

from buckpinn.cli import AppConfig, config_to_dict, main as cli_main


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--checkpoint", default="runs/desk/net.json")
    p.add_argument("--out", default="runs/compare")
    p.add_argument("--plot", action="store_true")
    args = p.parse_args()
    cfg = config_to_dict(AppConfig())
    cfg["train"]["checkpoint"] = args.checkpoint
    cfg["out"] = args.out
    cfg["plot"] = args.plot
    with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as fh:
        json.dump(cfg, fh)
    sys.exit(cli_main(["eval", "--config", fh.name]))


if __name__ == "__main__":
    main()
