#!/usr/bin/env python3
"""Run the whole scenario corpus and summarise the verdicts.

Each scenario carries an expected exit status: the pure-state negative
control is supposed to fail its dynamical checks, everything else is
supposed to pass.  The script exits nonzero if any scenario deviates from
its expected status.
"""
import pathlib
import sys
import time

from toposkms.cli import main

HERE = pathlib.Path(__file__).resolve().parent
SCENARIOS = HERE / "scenarios"

# scenario name -> expected exit status of `toposkms run`
EXPECTED = {
    "example_c3": 0,
    "gibbs_external": 0,
    "gibbs_internal": 0,
    "modular_suite": 0,
    "reconstruction": 0,
    "underdetermined": 0,
    "negative_control": 1,
}


def run() -> int:
    bad = []
    for name, want in EXPECTED.items():
        path = SCENARIOS / f"{name}.json"
        print(f"--- {name}")
        t0 = time.perf_counter()
        rc = main([
            "run",
            "--scenario", str(path),
            "--out-dir", f"reports/{name}",
        ])
        dt = time.perf_counter() - t0
        status = "as expected" if rc == want else f"EXPECTED exit {want}"
        print(f"    exit {rc} ({status}), {dt:.2f}s\n")
        if rc != want:
            bad.append(name)
    if bad:
        print("unexpected verdicts:", ", ".join(bad))
        return 1
    print("all scenarios behaved as expected")
    return 0


if __name__ == "__main__":
    sys.exit(run())
