"""Timing comparison of the numba and pure-python kernel backends.

Runs itself twice through subprocesses with SPHERELAB_BACKEND set, times the
raw search kernels on pre-triangularized systems (isolating the code the
backend switch affects), and checks that the two backends return
bit-identical results.

Usage: python benchmarks/bench_kernels.py [--trials N]
"""

import argparse
import json
import os
import subprocess
import sys
import time


def prepare_case(kind, M, L, K, db, trials, fs_taps=0):
    import numpy as np

    from spherelab.detectors import fp_radius
    from spherelab.model import (
        make_constellation, random_symbols, realify, sample_flat_rayleigh,
        toeplitz_from_taps, total_snr_db_to_rho, transmit,
    )
    from spherelab.numerics import Rng, qr_decompose

    const = make_constellation(kind, M)
    rng = Rng(12345)
    rho = total_snr_db_to_rho(db, K)
    systems = []
    for t in range(trials):
        r = rng.derive(t)
        if fs_taps:
            taps = (r.standard_normal(fs_taps) + 1j * r.standard_normal(fs_taps)) / np.sqrt(2)
            ch = toeplitz_from_taps(taps, K)
        else:
            ch = sample_flat_rayleigh(L, K, r)
        H, axis = realify(ch, const)
        s = random_symbols(axis, H.shape[1], r)
        model, _ = transmit(H, s, rho, r, const, axis)
        Q, R = qr_decompose(model.H)
        yt = Q.T @ model.y
        systems.append((np.ascontiguousarray(R), yt, model.axis_alphabet,
                        fp_radius(model.m, rho, 0.01)))
    return systems


def run_workloads(trials):
    from spherelab import _kernels

    _kernels.warmup()
    cases = [
        ("bpsk4x4_low_snr_fp", ("pam", 2, 4, 4, -8.0, trials, 0), False),
        ("qam4_6x6_low_snr_fp", ("qam", 4, 6, 6, -2.22, trials, 0), False),
        ("qam4_6x6_mid_snr_se", ("qam", 4, 6, 6, 7.78, trials, 0), True),
        ("qam16_fs_8sym_se", ("qam", 16, 14, 8, 9.0, trials, 7), True),
    ]
    results = {"backend": _kernels.backend_name(), "workloads": {}}
    for name, spec, zigzag in cases:
        systems = prepare_case(*spec)
        t0 = time.perf_counter()
        nodes = 0
        digest = 0.0
        for R, yt, axis, radius in systems:
            if zigzag:
                radius = float(yt @ yt) + 1.0  # generous start, shrinks immediately
            status, s_hat, metric, visited, restarts = _kernels.sphere_search(
                R, yt, axis, radius, zigzag, 2.0, 30)
            nodes += visited
            digest += float(s_hat.sum()) + metric
        dt = time.perf_counter() - t0
        results["workloads"][name] = {
            "seconds": dt,
            "per_trial_us": dt / trials * 1e6,
            "mean_nodes": nodes / trials,
            "digest": digest,
        }
    return results


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--trials", type=int, default=300)
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()

    if args.child:
        print(json.dumps(run_workloads(args.trials)))
        return

    reports = {}
    for backend in ("numba", "python"):
        env = dict(os.environ, SPHERELAB_BACKEND=backend)
        proc = subprocess.run(
            [sys.executable, os.path.abspath(__file__), "--child", "--trials", str(args.trials)],
            env=env, capture_output=True, text=True, check=True,
        )
        reports[backend] = json.loads(proc.stdout.strip().splitlines()[-1])

    print(f"{'workload':24s} {'mean nodes':>11s} {'numba us':>10s} {'python us':>10s} {'speedup':>8s}")
    for name in reports["numba"]["workloads"]:
        a = reports["numba"]["workloads"][name]
        b = reports["python"]["workloads"][name]
        if a["digest"] != b["digest"] or a["mean_nodes"] != b["mean_nodes"]:
            print(f"!! backend results differ on {name}", file=sys.stderr)
            sys.exit(1)
        print(f"{name:24s} {a['mean_nodes']:11.1f} {a['per_trial_us']:10.1f} "
              f"{b['per_trial_us']:10.1f} {b['per_trial_us'] / a['per_trial_us']:7.1f}x")
    print("backends agree bit-for-bit on all workloads")


if __name__ == "__main__":
    main()
