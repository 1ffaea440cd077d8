"""Compare the compiled and numpy chain-evaluation kernels.

    python3 benchmarks/bench_kernels.py [--repeat N]

Workloads: the corp example's firewalls over the full check
universe, and synthetic tables with jump/return sub-chains.
"""

import argparse
import time
from pathlib import Path

import numpy as np

from polref import kernels
from polref.backends import ACCEPT, DROP, JUMP, RETURN, emit_files, read_first_match
from polref.oracle import build_universe
from polref.parser import parse_policy
from polref.refinement import compile_policy

CORPUS = Path(__file__).resolve().parent.parent / "corpus"


def corp_workload():
    pol = parse_policy((CORPUS / "corp.xml").read_bytes())
    dep = compile_policy(pol)
    uni = build_universe(pol, dep, exhaustive=True)
    files = emit_files(dep, ("first-match",))
    tables = [read_first_match(text) for text in files.values()]
    return tables, uni.packets


def synthetic_workload(n_rules, n_packets, seed=0):
    rng = np.random.default_rng(seed)
    n_sub = n_rules // 4
    rows = []

    def box():
        s = np.sort(rng.integers(0, 1 << 16, 2))
        d = np.sort(rng.integers(0, 1 << 16, 2))
        p = np.sort(rng.integers(0, 1024, 2))
        return [s[0], s[1], d[0], d[1], rng.integers(-1, 4), p[0], p[1]]

    main = n_rules - 2 * n_sub
    for i in range(main):
        if i < n_sub:
            rows.append(box() + [JUMP, 1 + i])
        else:
            rows.append(box() + [rng.choice([DROP, ACCEPT]), -1])
    starts, ends = [0], [main]
    for _ in range(n_sub):
        starts.append(len(rows))
        rows.append(box() + [RETURN, -1])
        rows.append([0, 1 << 16, 0, 1 << 16, -1, 0, 1024, ACCEPT, -1])
        ends.append(len(rows))
    packets = np.column_stack([
        rng.integers(0, 1 << 16, n_packets), rng.integers(0, 1 << 16, n_packets),
        rng.integers(0, 4, n_packets), rng.integers(0, 1024, n_packets),
    ]).astype(np.int64)
    table = (np.array(rows, dtype=np.int64), np.array(starts, dtype=np.int64), np.array(ends, dtype=np.int64))
    return table, packets


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    names = sorted(kernels.BACKENDS)
    print(f"kernels available: {', '.join(names)} (default {kernels.BACKEND})")
    if "cython" not in names:
        print("compiled extension not built; only the numpy kernel is timed")

    tables, packets = corp_workload()
    results = {}
    for name in names:
        ev = kernels.get_backend(name).eval_chains

        def run():
            return [ev(t.rows, t.chain_start, t.chain_end, packets) for t in tables]

        results[name] = run()
        secs = best_of(run, args.repeat)
        n = len(tables) * len(packets)
        print(f"corp  {name:7s} {len(tables)} tables x {len(packets)} packets: "
              f"{secs * 1e3:8.2f} ms  ({n / secs / 1e6:6.2f} M evals/s)")
    if len(names) > 1:
        same = all((a == b).all() for a, b in zip(*results.values()))
        print(f"corp  verdicts identical across kernels: {same}")

    for n_rules in (16, 128, 1024):
        (rows, starts, ends), pk = synthetic_workload(n_rules, 100_000)
        timings = {}
        outs = {}
        for name in names:
            ev = kernels.get_backend(name).eval_chains
            outs[name] = ev(rows, starts, ends, pk)
            timings[name] = best_of(lambda: ev(rows, starts, ends, pk), args.repeat)
        line = "  ".join(f"{k} {v * 1e3:8.2f} ms" for k, v in timings.items())
        if "cython" in timings:
            line += f"  speedup x{timings['python'] / timings['cython']:.1f}"
            assert (outs["cython"] == outs["python"]).all()
        print(f"synthetic {n_rules:5d} rules x 100000 packets: {line}")


if __name__ == "__main__":
    main()
