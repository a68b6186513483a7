#!/usr/bin/env python3
"""Run the worked three-level example end to end.

Prints the closed-form truth-object membership conditions for the default
weights, then replays the full scenario through the verification engine and
writes reports to ``reports/example_c3``.
"""
import pathlib
import sys

from toposkms.cli import main

HERE = pathlib.Path(__file__).resolve().parent
SCENARIO = HERE / "scenarios" / "example_c3.json"


def run() -> int:
    rc = main(["example-c3", "--a", "0.5,0.3,0.2", "--r", "0.45"])
    if rc != 0:
        return rc
    print()
    return main([
        "run",
        "--scenario", str(SCENARIO),
        "--out-dir", "reports/example_c3",
    ])


if __name__ == "__main__":
    sys.exit(run())
