"""Benchmark the compiled kernels against the NumPy fallback.

Runs every hot kernel on pipeline-shaped workloads and prints a table of
per-call times for both implementations. Optionally (``--pipeline``) also
times a full synthetic detection run in two subprocesses, one with
``SPINEPIPE_PURE_PYTHON=1`` and one without.

Usage::

    python benchmarks/bench_kernels.py [--repeat N] [--sizes 448x448,896x448]
                                       [--pipeline]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from spinepipe.kernels import _fallback

try:
    from spinepipe.kernels import _native
except ImportError:
    _native = None


def parse_sizes(text: str) -> list[tuple[int, int]]:
    sizes = []
    for token in text.split(","):
        r, _, c = token.strip().partition("x")
        sizes.append((int(r), int(c)))
    return sizes


def time_call(fn, repeat: int) -> float:
    """Best-of-``repeat`` wall time in seconds, after one warmup call."""
    fn()
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_workloads(sizes: list[tuple[int, int]]):
    """(name, callable-factory) pairs shaped like real pipeline calls."""
    rng = np.random.default_rng(0)
    workloads = []

    patch = rng.normal(size=(13, 224, 224))
    for out_r, out_c in sizes:
        workloads.append(
            (
                f"resample 13x224x224 -> {out_r}x{out_c}",
                lambda impl, p=patch, r=out_r, c=out_c: impl.resample3(p, r, c),
            )
        )

    image = rng.normal(size=(896, 448))
    rows = rng.uniform(0, 895, size=112 * 224 * 9)
    cols = rng.uniform(0, 447, size=112 * 224 * 9)
    workloads.append(
        (
            "sample_points 225k (one IVV)",
            lambda impl: impl.sample_points(image, rows, cols),
        )
    )

    points = np.ascontiguousarray(rng.uniform(40, 400, size=(23, 2)))
    sigma2 = np.full(23, 1.6)
    def peaks(impl):
        out = np.zeros((896, 448))
        impl.render_peaks(out, points, sigma2)
        return out
    workloads.append(("render_peaks 23 VBs on 896x448", peaks))

    anchors = np.ascontiguousarray(rng.uniform(40, 400, size=(23, 2)))
    targets = anchors + rng.uniform(-12, 12, size=(23, 2))
    radii = np.full(23, 8.0)
    def field(impl):
        out = np.zeros((2, 896, 448))
        best = np.full((896, 448), np.inf)
        impl.render_field(out, best, anchors, targets, radii)
        return out
    workloads.append(("render_field 23 VBs on 896x448", field))
    return workloads


def bench_kernels(repeat: int, sizes: list[tuple[int, int]]) -> None:
    impls = [("python", _fallback)]
    if _native is not None:
        impls.insert(0, ("native", _native))
    else:
        print("native extension not built; timing the fallback only\n")

    header = f"{'kernel':<38}" + "".join(f"{name:>12}" for name, _ in impls)
    if len(impls) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for name, fn in kernel_workloads(sizes):
        times = [time_call(lambda impl=impl: fn(impl), repeat) for _, impl in impls]
        row = f"{name:<38}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times)
        if len(times) == 2:
            row += f"{times[1] / times[0]:>9.1f}x"
        print(row)


_PIPELINE_DRIVER = """
import time
from spinepipe.backends import OracleBackend
from spinepipe.config import PipelineConfig
from spinepipe.kernels import BACKEND
from spinepipe.labelling import LEVELS
from spinepipe.pipeline import run_detection_pipeline
from spinepipe.synthetic import build_spine_scan

volume, anns = build_spine_scan(levels=LEVELS[:8], dims=(8, 512, 256), slice_band=(2, 5))
config = PipelineConfig.for_mode("wholespine")
backend = OracleBackend(volume, anns, config)
t0 = time.perf_counter()
report = run_detection_pipeline(volume, backend, config)
elapsed = time.perf_counter() - t0
assert len(report.vertebrae) == 8
print(f"{BACKEND}: {elapsed:.2f}s for one 8x512x256 detection run")
"""


def bench_pipeline() -> None:
    print("\nfull pipeline comparison (separate processes):")
    sys.stdout.flush()  # keep ordering ahead of the subprocess output
    for pure in (False, True):
        env = dict(os.environ)
        env.pop("SPINEPIPE_PURE_PYTHON", None)
        if pure:
            env["SPINEPIPE_PURE_PYTHON"] = "1"
        subprocess.run([sys.executable, "-c", _PIPELINE_DRIVER], env=env, check=True)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5, help="timing repeats")
    parser.add_argument(
        "--sizes",
        type=parse_sizes,
        default=parse_sizes("448x448,896x448"),
        help="comma-separated HxW stitch targets for the resample workload",
    )
    parser.add_argument(
        "--pipeline", action="store_true", help="also time a full detection run"
    )
    args = parser.parse_args(argv)
    bench_kernels(args.repeat, args.sizes)
    if args.pipeline:
        bench_pipeline()
    return 0


if __name__ == "__main__":
    sys.exit(main())
