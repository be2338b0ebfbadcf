"""Compare the compiled and NumPy kernel backends: agreement, then speed.

Runs every kernel on identical random inputs through both implementations,
reports the worst absolute disagreement, and times each backend (best of
``--repeats`` runs). Exits non-zero if the backends disagree beyond 1e-9 or
if the compiled extension is missing.

Usage::

    python benchmarks/bench_kernels.py [--repeats N] [--scale small|large]
"""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from flowcast._kernels import backends

AGREE_TOL = 1e-9


def _time(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _ring(n_vertices: int, rng: np.random.Generator) -> np.ndarray:
    angles = np.sort(rng.uniform(0.0, 2.0 * np.pi, size=n_vertices))
    radii = rng.uniform(0.5, 1.5, size=n_vertices)
    return np.column_stack([radii * np.cos(angles), radii * np.sin(angles)])


def _cases(scale: str):
    rng = np.random.default_rng(0)
    if scale == "small":
        b, c_in, c_out, t, n, k = 4, 16, 16, 48, 16, 3
        n_pts, n_vert = 20_000, 24
    else:
        b, c_in, c_out, t, n, k = 16, 64, 64, 168, 64, 3
        n_pts, n_vert = 200_000, 48
    x = rng.normal(size=(b, c_in, t, n))
    w = rng.normal(size=(c_out, c_in, k))
    bias = rng.normal(size=c_out)
    g = rng.normal(size=(b, c_out, t - k + 1, n))
    ring = _ring(n_vert, rng)
    pts = rng.uniform(-1.6, 1.6, size=(n_pts, 2))
    return [
        ("conv1d_forward", lambda m: m.conv1d_forward(x, w, bias)),
        ("conv1d_grad_input", lambda m: m.conv1d_grad_input(g, w, t)),
        ("conv1d_grad_weights", lambda m: m.conv1d_grad_weights(x, g)),
        ("points_in_ring", lambda m: m.points_in_ring(ring, pts)),
    ]


def _worst_diff(a, b) -> float:
    if isinstance(a, tuple):
        return max(_worst_diff(ai, bi) for ai, bi in zip(a, b))
    return float(np.max(np.abs(np.asarray(a, dtype=np.float64)
                               - np.asarray(b, dtype=np.float64))))


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--scale", choices=("small", "large"), default="large")
    args = parser.parse_args(argv)

    impls = backends()
    if "compiled" not in impls:
        print("compiled backend unavailable; build the extension first "
              "(pip install -e . --no-build-isolation)", file=sys.stderr)
        return 1
    npk, ckern = impls["numpy"], impls["compiled"]

    header = f"{'kernel':<22}{'max |diff|':>12}{'numpy (ms)':>14}{'compiled (ms)':>16}{'speedup':>10}"
    print(header)
    print("-" * len(header))
    ok = True
    for name, call in _cases(args.scale):
        diff = _worst_diff(call(npk), call(ckern))
        t_np = _time(lambda: call(npk), args.repeats) * 1e3
        t_ck = _time(lambda: call(ckern), args.repeats) * 1e3
        ok = ok and diff <= AGREE_TOL
        flag = "" if diff <= AGREE_TOL else "  DISAGREES"
        print(f"{name:<22}{diff:>12.2e}{t_np:>14.3f}{t_ck:>16.3f}{t_np / t_ck:>9.2f}x{flag}")
    if not ok:
        print(f"\nbackends disagree beyond {AGREE_TOL}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
