"""Time the compiled geometry core against the pure-Python fallback.

The backend is chosen once at import, so each measurement runs in a child
process with ``LANGGRASP_GEOM_BACKEND`` forced; one invocation times both
and prints a side-by-side table.

    python3 benchmarks/bench_geometry.py
"""

import argparse
import json
import os
import subprocess
import sys
import time

EXACT_PAIRS = 20_000
MC_PAIRS = 200
MC_SAMPLES = 100_000


def _random_pairs(seed, count):
    import numpy as np

    rng = np.random.default_rng(seed)
    lo = [0.2, 0.2, 0.08, 0.08, -90.0]
    hi = [0.8, 0.8, 0.40, 0.40, 90.0]
    return [rng.uniform(lo, hi, (2, 5)) for _ in range(count)]


def measure():
    from langgrasp.geometry import GEOM_BACKEND, GraspRect, mc_rotated_iou, rotated_iou

    pairs = [
        (GraspRect(*p[0]), GraspRect(*p[1])) for p in _random_pairs(11, EXACT_PAIRS)
    ]
    start = time.perf_counter()
    checksum = 0.0
    for a, b in pairs:
        checksum += rotated_iou(a, b)
    exact_s = time.perf_counter() - start

    start = time.perf_counter()
    for a, b in pairs[:MC_PAIRS]:
        checksum += mc_rotated_iou(a, b, samples=MC_SAMPLES, seed=3)
    mc_s = time.perf_counter() - start

    json.dump(
        {"backend": GEOM_BACKEND, "exact_s": exact_s, "mc_s": mc_s,
         "checksum": checksum},
        sys.stdout,
    )
    print()


def compare():
    rows = []
    for backend in ("compiled", "python"):
        env = dict(os.environ, LANGGRASP_GEOM_BACKEND=backend)
        proc = subprocess.run(
            [sys.executable, __file__, "--measure"],
            env=env, capture_output=True, text=True, check=True,
        )
        rows.append(json.loads(proc.stdout))
    if rows[0]["backend"] == rows[1]["backend"]:
        raise SystemExit("backend forcing failed; both children report "
                         f"{rows[0]['backend']!r}")
    if abs(rows[0]["checksum"] - rows[1]["checksum"]) > 1e-6 * EXACT_PAIRS:
        raise SystemExit("backends disagree on the workload checksums: "
                         f"{rows[0]['checksum']} vs {rows[1]['checksum']}")

    compiled, python = rows
    print(f"exact IoU, {EXACT_PAIRS} random pairs")
    print(f"  compiled  {compiled['exact_s']:8.3f} s")
    print(f"  python    {python['exact_s']:8.3f} s"
          f"   ({python['exact_s'] / compiled['exact_s']:.1f}x slower)")
    print(f"Monte-Carlo IoU, {MC_PAIRS} pairs x {MC_SAMPLES} samples")
    print(f"  compiled  {compiled['mc_s']:8.3f} s")
    print(f"  python    {python['mc_s']:8.3f} s"
          f"   ({python['mc_s'] / compiled['mc_s']:.1f}x slower)")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--measure", action="store_true",
                        help="time the currently selected backend and emit JSON")
    args = parser.parse_args()
    if args.measure:
        measure()
    else:
        compare()


if __name__ == "__main__":
    main()
