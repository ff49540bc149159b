"""Compare the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]
"""
import argparse
import json
import sys
import timeit

import numpy as np

from unfairgen import kernels
from unfairgen.attrspace import planted_landscape


def cases(rng):
    d = 16
    bits = rng.integers(0, 2, size=(20000, d)).astype(np.uint8)
    codes = np.arange(1 << d, dtype=np.int64)
    y = rng.gamma(1.0, 0.3, size=2000)
    w = rng.integers(1, 5, size=2000).astype(np.float64)
    split_bits = bits[:2000]
    allowed = np.ones(d, dtype=np.uint8)
    land_args = planted_landscape(d, seed=0).kernel_args()
    x = rng.normal(size=200000)
    return {
        "pack_bits 20000x16": lambda b: b.pack_bits(bits),
        "unpack_codes 65536x16": lambda b: b.unpack_codes(codes, d),
        "best_split 2000x16": lambda b: b.best_split(split_bits, y, w, allowed, 1),
        "eval_landscape 65536": lambda b: b.eval_landscape_codes(codes, *land_args),
        "expand_completions 2^12": lambda b: b.expand_completions(0b1111, 0b1010, d),
        "softplus 200000": lambda b: b.softplus(x),
    }


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--number", type=int, default=3)
    parser.add_argument("--json", help="write timings to this file")
    args = parser.parse_args(argv)

    backends = {"python": kernels.python_backend}
    if kernels.compiled_backend is not None:
        backends["cython"] = kernels.compiled_backend
    else:
        print("compiled kernels not built; timing the numpy fallback only", file=sys.stderr)

    results = {}
    for name, fn in cases(np.random.default_rng(0)).items():
        row = {}
        for bname, backend in backends.items():
            t = min(timeit.repeat(lambda: fn(backend), number=args.number, repeat=args.repeat)) / args.number
            row[bname] = t
        results[name] = row
        speed = f"  x{row['python'] / row['cython']:.1f}" if "cython" in row else ""
        cols = "  ".join(f"{b}={t * 1e3:8.3f} ms" for b, t in row.items())
        print(f"{name:26s} {cols}{speed}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2, sort_keys=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
