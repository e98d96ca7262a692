"""Timing comparison of the compiled and pure-numpy spmm kernels.

Times the raw kernel on mesh-sized adjacency matrices at the feature
widths the network actually pushes through it, checks the two backends
agree bit for bit, then times a whole forward pass under each backend
(the other backend runs in a subprocess because the choice is fixed at
import).

Run:  python3 benchmarks/bench_spmm.py [--repeats 200]
"""

import argparse
import os
import statistics
import subprocess
import sys
import time

import numpy as np

from meshgcn.graph import normalize_adjacency
from meshgcn.nn import GraphNetConfig, forward_graph, init_params
from meshgcn.sparse import spmm_backend, spmm_compiled, spmm_python
from meshgcn.synthgen import SynthConfig, generate


def median_time(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def mesh_sample(nodes):
    return generate(SynthConfig(num_samples=1, target_nodes=nodes, seed=0))[0]


def bench_kernels(repeats):
    print(f"spmm kernel, median of {repeats} calls (microseconds)")
    print(f"{'nodes':>6} {'width':>6} {'python':>10} {'compiled':>10} {'speedup':>8}")
    rng = np.random.default_rng(1)
    for nodes in (256, 1024):
        adj = normalize_adjacency(mesh_sample(nodes).graph.adjacency).matrix
        for width in (64, 128, 512):
            x = rng.standard_normal((nodes, width))
            ref = spmm_python(adj, x)
            assert np.array_equal(ref, spmm_compiled(adj, x)), \
                "backends disagree"
            t_py = median_time(lambda: spmm_python(adj, x), repeats) * 1e6
            t_c = median_time(lambda: spmm_compiled(adj, x), repeats) * 1e6
            print(f"{nodes:>6} {width:>6} {t_py:>10.1f} {t_c:>10.1f} "
                  f"{t_py / t_c:>7.1f}x")


def bench_forward(repeats):
    sample = mesh_sample(1024)
    model = init_params(GraphNetConfig(), seed=0)
    run = lambda: forward_graph(model, sample.graph, sample.aux)
    run()
    ms = median_time(run, repeats) * 1e3
    print(f"forward pass N=1024, backend={spmm_backend()}: {ms:.2f} ms")
    return ms


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=200)
    parser.add_argument("--forward-only", action="store_true",
                        help="time only the forward pass (used internally)")
    args = parser.parse_args(argv)

    if args.forward_only:
        bench_forward(max(args.repeats // 4, 10))
        return 0

    if spmm_backend() != "compiled":
        print("compiled extension not active; build it or unset MESHGCN_PURE")
        return 1
    bench_kernels(args.repeats)
    bench_forward(max(args.repeats // 4, 10))
    sys.stdout.flush()
    env = dict(os.environ, MESHGCN_PURE="1")
    subprocess.run(
        [sys.executable, os.path.abspath(__file__), "--forward-only",
         "--repeats", str(args.repeats)],
        env=env, check=True,
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
