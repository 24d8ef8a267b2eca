"""Benchmark the compiled kernels against the pure-Python reference backend.

Run from the repository root::

    python3 benchmarks/bench_kernels.py [--repeats N]

The script times the three hot kernels (multilinear interpolation, Simpson
segment integrals, and the frame-transport integrator) on workloads shaped
like the 3D reconstruction pipeline, and prints both backends' timings with
the speedup and a cross-check of the numerical agreement.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from powerdense.kernels import _ref

try:
    from powerdense import _kernels as _compiled
except ImportError:  # pragma: no cover - benchmark requires the extension
    _compiled = None


def _time(fn, repeats):
    best = np.inf
    result = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - t0)
    return best, result


def _setup(rng):
    counts = (49, 49, 49)
    origin = np.zeros(3)
    spacing = 1.0 / (np.array(counts) - 1)

    interp_vals = rng.standard_normal(counts + (31,))
    interp_pts = rng.random((200_000, 3))

    seg_vals = rng.standard_normal(counts + (3,))
    m = 4096
    seg_starts = rng.random((m, 3))
    seg_ends = rng.random((m, 3))
    seg_steps = rng.integers(20, 100, m)

    ode_vals = 0.2 * rng.standard_normal(counts + (31,))
    lanes = 512
    ode_starts = rng.random((lanes, 3)) * 0.9
    ode_ends = rng.random((lanes, 3)) * 0.9
    ode_steps = rng.integers(40, 120, lanes)
    q, _ = np.linalg.qr(rng.standard_normal((lanes, 3, 3)))
    q[:, :, 0] *= np.linalg.det(q)[:, None]
    r0 = np.swapaxes(q, 1, 2).reshape(lanes, 9)
    ls0 = rng.standard_normal(lanes)

    return {
        "interp_many": (interp_vals, origin, spacing, interp_pts),
        "segment_integrals": (seg_vals, origin, spacing, seg_starts, seg_ends, seg_steps),
        "rotation_ode": (ode_vals, origin, spacing, ode_starts, ode_ends, ode_steps, r0, ls0),
    }


def _gap(a, b):
    if isinstance(a, dict):
        return max(_gap(a[k], b[k]) for k in a)
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=3, help="timing repeats (best-of)")
    args = parser.parse_args()

    if _compiled is None:
        print("compiled backend not built; install the package first")
        return 1

    rng = np.random.default_rng(20240901)
    workloads = _setup(rng)

    header = f"{'kernel':<20} {'python (s)':>12} {'compiled (s)':>13} {'speedup':>9} {'max gap':>11}"
    print(header)
    print("-" * len(header))
    for name, argv in workloads.items():
        t_py, out_py = _time(lambda: getattr(_ref, name)(*argv), args.repeats)
        t_c, out_c = _time(lambda: getattr(_compiled, name)(*argv), args.repeats)
        gap = _gap(out_py, out_c)
        print(f"{name:<20} {t_py:>12.4f} {t_c:>13.4f} {t_py / t_c:>8.1f}x {gap:>11.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
