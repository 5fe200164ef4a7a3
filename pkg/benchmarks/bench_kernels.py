"""Compare the compiled kernels with the NumPy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each kernel is timed on workloads sized like codec training (a batch of
latents against a 512-entry codebook) and metric evaluation (all cells of
a set of 80x28 sequences). Outputs are checked for agreement first.
"""

from __future__ import annotations

import argparse
import json
import platform
import timeit

import numpy as np

from text2pressure import kernels


def workloads(rng: np.random.Generator) -> dict:
    lat = rng.standard_normal((16 * 30, 64))
    cb = rng.standard_normal((512, 64))
    idx = rng.integers(0, 512, size=lat.shape[0])
    pred = rng.random(64 * 120 * 80 * 28 // 8)
    target = rng.random(pred.shape[0])
    return {
        "nearest_codes (480x64 vs K=512)": lambda m: m.nearest_codes(lat, cb),
        "scatter_sums (480x64, K=512)": lambda m: m.scatter_sums(lat, idx, 512),
        "r2_sums (2.15M cells)": lambda m: m.r2_sums(pred, target),
        "mask_r2_sums (2.15M cells)": lambda m: m.mask_r2_sums(pred, target, 0.02),
    }


def _same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    a, b = np.asarray(a), np.asarray(b)
    if a.dtype.kind in "iu":
        return bool(np.array_equal(a, b))
    return bool(np.allclose(a, b, rtol=1e-9, atol=1e-9))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write results to this file")
    args = ap.parse_args()

    if kernels.compiled is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation` first")

    rng = np.random.default_rng(0)
    rows = []
    for name, fn in workloads(rng).items():
        if not _same(fn(kernels.compiled), fn(kernels.fallback)):
            raise SystemExit(f"{name}: backends disagree")
        t_c = min(timeit.repeat(lambda: fn(kernels.compiled), number=1, repeat=args.repeat))
        t_p = min(timeit.repeat(lambda: fn(kernels.fallback), number=1, repeat=args.repeat))
        rows.append({"kernel": name, "compiled_ms": 1e3 * t_c, "python_ms": 1e3 * t_p, "speedup": t_p / t_c})

    print(f"{'kernel':<36} {'compiled ms':>12} {'numpy ms':>10} {'speedup':>8}")
    for r in rows:
        print(f"{r['kernel']:<36} {r['compiled_ms']:>12.2f} {r['python_ms']:>10.2f} {r['speedup']:>7.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"machine": platform.platform(), "numpy": np.__version__, "rows": rows}, fh, indent=2)


if __name__ == "__main__":
    main()
