"""Command-line surface: calibrate, sweep, mac, verify, version.

Exit codes: 0 success, 1 validation error, 2 runtime error, 3 verification
failure.  The environment variable ``SPHERELAB_SEED`` overrides the config
seed.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import __version__
from .errors import ConfigError, SpherelabError, TableMismatch


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits 2; bad usage is a validation error
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    p = _Parser(prog="spherelab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("calibrate", help="calibrate reliability thresholds to a table file")
    c.add_argument("--config", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--method", default="exact",
                   choices=["exact", "suboptimal", "high-snr-approx"])

    s = sub.add_parser("sweep", help="run an error-rate / visited-nodes sweep")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--svg", default=None)

    m = sub.add_parser("mac", help="estimate the minimum achievable complexity curve")
    m.add_argument("--config", required=True)
    m.add_argument("--info-set", required=True,
                   choices=["radius-li", "radius-ld", "zf-point", "mmse-point"])
    m.add_argument("--out", required=True)

    sub.add_parser("verify", help="run the built-in oracle-equivalence suite")
    sub.add_parser("version", help="print the package version")
    return p


def _seed_override():
    raw = os.environ.get("SPHERELAB_SEED")
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"SPHERELAB_SEED must be an integer, got {raw!r}") from None


def _cmd_calibrate(args) -> int:
    from .harness import load_config, run_calibration
    from .lsr import save_table, table_from_stats

    cfg = load_config(args.config, _seed_override())
    table, stats = run_calibration(cfg, Path(args.config).parent)
    if args.method != "exact":
        table = table_from_stats(stats, args.method,
                                 scale=float(cfg.calibration.get("scale", 2.0)))
    save_table(table, args.out)
    print(f"wrote {args.method} threshold table ({len(table.snr_grid_db)} SNR points) "
          f"to {args.out}")
    return 0


def _cmd_sweep(args) -> int:
    from .harness import emit_csv, emit_svg, load_config, run_sweep

    cfg = load_config(args.config, _seed_override())
    result = run_sweep(cfg, Path(args.config).parent)
    emit_csv(result, args.out)
    print(f"wrote {len(result.rows)} rows to {args.out}")
    if args.svg:
        emit_svg(result, args.svg)
        print(f"wrote plot to {args.svg}")
    return 0


def _cmd_mac(args) -> int:
    from .harness import emit_mac_csv, load_config, run_mac

    cfg = load_config(args.config, _seed_override())
    curve = run_mac(cfg, args.info_set, Path(args.config).parent)
    emit_mac_csv(curve, args.out)
    print(f"wrote MAC curve ({len(curve.snr_grid_db)} SNR points) to {args.out}")
    return 0


def _cmd_verify() -> int:
    import numpy as np

    from .detectors import RadiusPolicy, brute_force_ml, sphere_decode
    from .lsr import reduce_problem
    from .model import (
        make_constellation, random_symbols, realify, sample_flat_rayleigh,
        total_snr_db_to_rho, transmit,
    )
    from .numerics import Rng, chi_square_cdf, chi_square_quantile, qr_decompose

    failures = 0

    def check(name, ok):
        nonlocal failures
        print(f"{'ok  ' if ok else 'FAIL'} {name}")
        if not ok:
            failures += 1

    rng = Rng(20260501)
    # QR reconstruction / orthonormality
    worst = 0.0
    for i in range(200):
        r = rng.derive(0, i)
        n = int(r.integers(2, 13))
        m = int(r.integers(1, n + 1))
        A = r.standard_normal(n * m).reshape(n, m)
        Q, R = qr_decompose(A)
        worst = max(worst,
                    np.linalg.norm(A - Q @ R) / max(np.linalg.norm(A), 1e-30),
                    np.linalg.norm(Q.T @ Q - np.eye(m)))
    check(f"qr reconstruction/orthonormality (worst {worst:.2e})", worst <= 1e-10)

    # chi-square round trip
    worst = 0.0
    for dof in (1, 2, 4, 8, 16):
        for p in (0.01, 0.1, 0.5, 0.9, 0.99):
            q = chi_square_quantile(p, dof)
            worst = max(worst, abs(chi_square_cdf(q, dof) - p))
    check(f"chi-square cdf/quantile round trip (worst {worst:.2e})", worst <= 1e-8)

    # sphere decoders against brute force
    mismatches = 0
    trials = 0
    for cidx, (kind, M, L, K) in enumerate([("pam", 2, 4, 4), ("qam", 4, 4, 4), ("qam", 16, 2, 2)]):
        const = make_constellation(kind, M)
        for j, db in enumerate((-8.0, 8.0, 24.0)):
            rho = total_snr_db_to_rho(db, K)
            for t in range(60):
                r = rng.derive(1, cidx, j, t)
                H, axis = realify(sample_flat_rayleigh(L, K, r), const)
                s = random_symbols(axis, H.shape[1], r)
                model, _ = transmit(H, s, rho, r, const, axis)
                ml = brute_force_ml(model)
                fp = sphere_decode(model, RadiusPolicy("lattice-independent"), mode="fp")
                se = sphere_decode(model, RadiusPolicy("lattice-dependent"), mode="se")
                trials += 1
                if not (np.array_equal(ml.s_hat, fp.s_hat) and np.array_equal(ml.s_hat, se.s_hat)):
                    mismatches += 1
    check(f"fp/se sphere decoders match brute force on {trials} instances", mismatches == 0)

    # reduction metric identity
    const = make_constellation("qam", 4)
    worst = 0.0
    for t in range(50):
        r = rng.derive(2, t)
        H, axis = realify(sample_flat_rayleigh(4, 4, r), const)
        s = random_symbols(axis, H.shape[1], r)
        model, _ = transmit(H, s, total_snr_db_to_rho(6.0, 4), r, const, axis)
        s_ld = random_symbols(axis, H.shape[1], r)
        G = tuple(int(v) for v in np.nonzero(r.integers(0, 2, 4))[0])
        reduced, kept, relied = reduce_problem(model, G, s_ld)
        cand = random_symbols(axis, len(kept), r)
        full = np.empty(model.m)
        full[relied] = s_ld[relied]
        full[kept] = cand
        m_red = float(np.sum((reduced.y - reduced.H @ cand) ** 2))
        m_full = float(np.sum((model.y - model.H @ full) ** 2))
        worst = max(worst, abs(m_red - m_full) / max(m_full, 1e-30))
    check(f"reduction metric identity (worst {worst:.2e})", worst <= 1e-12)

    print("verification", "FAILED" if failures else "passed")
    return 3 if failures else 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "version":
            print(__version__)
            return 0
        if args.command == "verify":
            return _cmd_verify()
        if args.command == "calibrate":
            return _cmd_calibrate(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "mac":
            return _cmd_mac(args)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, TableMismatch, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SpherelabError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
