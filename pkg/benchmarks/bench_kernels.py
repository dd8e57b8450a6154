"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from subbit import kernels
from subbit.allocation import NMRatio
from subbit.pipeline import QuantConfig, quantize_layer
from subbit.quantizer import trisection_grid
from subbit.tensorio import synth_layer


def cases(rows, width):
    rng = np.random.default_rng(0)
    absw = np.abs(rng.standard_t(3, size=(rows, width)))
    support = rng.random((rows, width)) < 0.5
    p1s, p2s = trisection_grid(float(absw.max()))
    order = rng.permutation(width)
    values = rng.integers(0, 8, size=rows * width // 2, dtype=np.uint32)
    blob = kernels.pack_bits(values, 3, backend="python")
    rec = synth_layer(rows, 4 * width, 128, seed=0, correlation=0.5)
    config = QuantConfig(block_size=width)
    return {
        "trisection_errors": lambda b: kernels.trisection_errors(absw, support, p1s, p2s, backend=b),
        "prefix_errors": lambda b: kernels.prefix_errors(absw, support, order, width * 3 // 10, backend=b),
        "pack_bits": lambda b: kernels.pack_bits(values, 3, backend=b),
        "unpack_bits": lambda b: kernels.unpack_bits(blob, values.size, 3, backend=b),
        "quantize_layer": lambda b: quantize_layer(rec.weight, rec.calibration, NMRatio(4, 8), config,
                                                   backend=b),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=256)
    ap.add_argument("--width", type=int, default=128)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = kernels.available_backends()
    print(f"rows={args.rows} block width={args.width}; best of {args.repeat}")
    print(f"{'kernel':<20}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}")
    for name, fn in cases(args.rows, args.width).items():
        times = {b: min(timeit.repeat(lambda: fn(b), number=1, repeat=args.repeat)) for b in backends}
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{name:<20}" + "".join(f"{times[b] * 1e3:>10.2f}ms" for b in backends) + f"{speed:>9.1f}x")


if __name__ == "__main__":
    main()
