"""Shared argument handling for the experiment scripts."""
import argparse
import json
import sys


def parser(description: str, default_seeds: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--seeds", default=default_seeds, help="comma-separated seeds")
    p.add_argument("--epochs", type=int, default=None, help="override the number of training epochs")
    p.add_argument("--json", action="store_true", help="print the raw result as JSON")
    return p


def seeds(text: str) -> list:
    return [int(s) for s in text.split(",") if s.strip()]


def dump(result) -> None:
    json.dump(result, sys.stdout, indent=1, default=str)
    sys.stdout.write("\n")
