"""Time the compiled matmul kernel against the numpy fallback.

Both backends use the same fixed accumulation order, so the script also
checks that their outputs are bitwise identical before timing them.

    python3 benchmarks/bench_matmul.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from hdnn import linalg

# (rows, inner, cols): minibatch layer, gate product, output layer, square
SHAPES = [(128, 140, 32), (128, 32, 32), (128, 32, 50), (128, 600, 512), (512, 512, 512)]


def bench(shape, repeat):
    m, k, n = shape
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(m, k)), rng.normal(size=(k, n))
    row = {}
    outputs = {}
    for backend in linalg.available_backends():
        linalg.set_backend(backend)
        outputs[backend] = linalg.matmul(a, b)
        number = max(1, int(2e7 // (m * k * n)))
        best = min(timeit.repeat(lambda: linalg.matmul(a, b), number=number, repeat=repeat))
        row[backend] = best / number
    same = len({o.tobytes() for o in outputs.values()}) == 1
    return row, same


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    initial = linalg.BACKEND
    backends = linalg.available_backends()
    print(f"backends: {', '.join(backends)}")
    header = f"{'shape':>16s}" + "".join(f"{b:>14s}" for b in backends)
    if len(backends) > 1:
        header += f"{'speedup':>10s}"
    print(header + "  identical")
    try:
        for shape in SHAPES:
            row, same = bench(shape, args.repeat)
            line = f"{'x'.join(map(str, shape)):>16s}" + "".join(f"{row[b] * 1e3:>12.3f}ms" for b in backends)
            if len(backends) > 1:
                line += f"{row['python'] / row['compiled']:>9.1f}x"
            print(f"{line}  {same}")
    finally:
        linalg.set_backend(initial)


if __name__ == "__main__":
    main()
