#!/usr/bin/env python3
"""Benchmark the closed-loop kernel: numba JIT vs pure-Python fallback.

Each path runs in its own subprocess so the import-time kernel selection
(TIVALOOP_NUMBA) is exercised exactly as a user would hit it. The timed
section is the 13-patient, 60-minute standard scenario after a warm-up run,
so JIT compilation is not billed to the numba path.

Usage: python benchmarks/benchmark_kernels.py [repeats]
"""

import json
import os
import subprocess
import sys
import tempfile

CHILD = r"""
import json, sys, time
import numpy as np
from tivaloop import ControllerConfig, builtin_cohort
from tivaloop.engine import run_cohort
from tivaloop.scenario import standard_scenario
from tivaloop import _kernels

repeats = int(sys.argv[1])
out_path = sys.argv[2]

cfg = ControllerConfig()
scenario = standard_scenario()
cohort = builtin_cohort()

run_cohort(cohort[:1], scenario, cfg, master_seed=42)  # warm-up / JIT compile

best = float("inf")
for _ in range(repeats):
    t0 = time.perf_counter()
    result = run_cohort(cohort, scenario, cfg, master_seed=42)
    best = min(best, time.perf_counter() - t0)

bis = np.concatenate([tr.bis_measured for tr in result.traces])
with open(out_path, "w") as fh:
    json.dump({"numba": _kernels.USE_NUMBA, "best_seconds": best,
               "bis_checksum": bis.tolist()}, fh)
"""


def run_child(numba_enabled: bool, repeats: int) -> dict:
    env = dict(os.environ, TIVALOOP_NUMBA="1" if numba_enabled else "0")
    with tempfile.NamedTemporaryFile(suffix=".json", delete=False) as tmp:
        out_path = tmp.name
    try:
        subprocess.run([sys.executable, "-c", CHILD, str(repeats), out_path],
                       env=env, check=True)
        with open(out_path) as fh:
            return json.load(fh)
    finally:
        os.unlink(out_path)


def main() -> int:
    repeats = int(sys.argv[1]) if len(sys.argv) > 1 else 3
    print(f"closed-loop benchmark: 13-patient standard scenario, "
          f"best of {repeats} (warm)")
    results = {}
    for enabled, label in ((True, "numba"), (False, "numpy fallback")):
        res = run_child(enabled, repeats)
        mode = "numba" if res["numba"] else "numpy fallback"
        if (mode == "numba") != enabled:
            print(f"  note: requested {label} but ran {mode} "
                  f"(numba unavailable?)")
        results[label] = res
        print(f"  {label:<16} {res['best_seconds']*1e3:9.1f} ms")

    a = results["numba"]
    b = results["numpy fallback"]
    if a["numba"] and not b["numba"]:
        speedup = b["best_seconds"] / a["best_seconds"]
        diff = max(abs(x - y) for x, y in zip(a["bis_checksum"], b["bis_checksum"]))
        print(f"  speedup          {speedup:9.1f}x")
        print(f"  max |BIS diff|   {diff:9.3e}  (paths must agree)")
        return 0 if diff == 0.0 else 1
    print("  (numba path unavailable; no comparison)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
