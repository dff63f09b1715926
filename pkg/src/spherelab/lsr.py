"""Lossless size reduction: reliability thresholds, problem reduction, and the
reduction-aided sphere decoder.

A linear detector's per-symbol decisions are trusted wherever the
post-equalization SNR clears a calibrated threshold; the trusted columns are
struck from the system and only the remainder is searched.  Thresholds are
calibrated offline so that trusting a symbol never costs error performance:
the joint probability of a linear-detector error above the threshold is
matched to the joint probability of an exhaustive-search error above it, and
the smallest crossing is kept.  Two cheaper threshold rules (an inverse-CDF
root and a closed-form high-SNR approximation) come out of the same
calibration pass.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .detectors import (
    DetectorOutput,
    RadiusPolicy,
    babai_point,
    brute_force_ml,
    detect_mmse,
    detect_zf,
    sphere_decode,
)
from .errors import InsufficientTrials, InvalidSer, TableMismatch
from .model import (
    Constellation,
    RealModel,
    make_constellation,
    per_symbol_snr,
    random_symbols,
    realify,
    sample_flat_rayleigh,
    symbol_errors,
    toeplitz_from_taps,
    total_snr_db_to_rho,
    transmit,
)
from .numerics import Rng, gaussian_q

logger = logging.getLogger(__name__)

__all__ = [
    "ThresholdTable",
    "ReliableSet",
    "CalibrationSetup",
    "CalibrationStats",
    "reliable_set",
    "reduce_problem",
    "lsr_detect",
    "conditional_qam_ser",
    "calibrate_exact",
    "calibration_stats",
    "table_from_stats",
    "threshold_suboptimal",
    "threshold_high_snr",
    "save_table",
    "load_table",
    "lookup_eta",
    "qam_alpha_beta",
]

TABLE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ThresholdTable:
    """Per-SNR, per-symbol normalized reliability thresholds eta_k/rho.

    ``inf`` entries mean "never rely on this index at this SNR".  A table only
    applies to a model matching its metadata.
    """

    snr_grid_db: tuple
    eta_over_rho: tuple   # one tuple of K values per grid point
    method: str           # "exact" | "suboptimal" | "high-snr-approx"
    modulation_kind: str
    modulation_M: int
    K: int
    L: int
    channel_model: str
    trials: int
    seed: int

    def row(self, idx: int) -> np.ndarray:
        return np.asarray(self.eta_over_rho[idx], dtype=np.float64)


@dataclass(frozen=True)
class ReliableSet:
    G: tuple              # reliable symbol indices, ascending
    K: int                # total symbol count

    @property
    def search_space_size_exponent(self) -> int:
        """|S| = M^(K - |G|); returns the exponent K - |G|."""
        return self.K - len(self.G)


def reliable_set(snr_per_symbol: np.ndarray, eta_per_symbol: np.ndarray) -> ReliableSet:
    """Indices whose SNR strictly exceeds the threshold; inf never admits."""
    snr = np.asarray(snr_per_symbol, dtype=np.float64)
    eta = np.asarray(eta_per_symbol, dtype=np.float64)
    if snr.shape != eta.shape:
        raise ValueError("snr and eta vectors must have equal length")
    G = tuple(int(k) for k in np.nonzero(snr > eta)[0])
    return ReliableSet(G, len(snr))


def _symbol_coords(model: RealModel, k: int):
    """Real coordinate indices carrying complex symbol k."""
    if model.constellation.kind == "qam":
        K = model.n_symbols
        return (k, K + k)
    return (k,)


def reduce_problem(model: RealModel, G, s_ld: np.ndarray):
    """Strike the relied columns out of the system.

    Returns ``(reduced_model, kept_coords, relied_coords)`` where the reduced
    observation is y - H_v s_v over the relied coordinate values of ``s_ld``.
    For QAM both real coordinates of a relied symbol are removed together.
    """
    G = sorted(int(g) for g in G)
    relied_coords = [c for k in G for c in _symbol_coords(model, k)]
    kept_symbols = [k for k in range(model.n_symbols) if k not in G]
    if model.constellation.kind == "qam":
        K = model.n_symbols
        kept_coords = [k for k in kept_symbols] + [K + k for k in kept_symbols]
    else:
        kept_coords = kept_symbols
    s_ld = np.asarray(s_ld, dtype=np.float64)
    if relied_coords:
        y_r = model.y - model.H[:, relied_coords] @ s_ld[relied_coords]
    else:
        y_r = model.y.copy()
    H_r = np.ascontiguousarray(model.H[:, kept_coords])
    reduced = RealModel(y_r, H_r, model.rho, model.constellation, model.axis_alphabet)
    return reduced, kept_coords, relied_coords


def per_symbol_snr_of_model(model: RealModel, equalizer: str):
    """Per-complex-symbol (SNR, x) from the real model's Gram matrix.

    The real stacking of a QAM channel duplicates each symbol's diagonal
    entry, so the first K of the 2K values are returned.
    """
    snr, x = per_symbol_snr(model.H, model.rho, equalizer)
    K = model.n_symbols
    return snr[:K], x[:K]


def lsr_detect(
    model: RealModel,
    initial: str,
    table: ThresholdTable,
    sd_mode: str = "se",
    policy: RadiusPolicy | None = None,
) -> DetectorOutput:
    """Reduction-aided exact search seeded by a linear detector.

    Computes the initial point and per-symbol SNRs, freezes every symbol whose
    SNR clears the table threshold at the nearest grid SNR, sphere-decodes the
    residual system (Babai start), and splices the two parts.  The visited
    count covers only the reduced search; full reliance visits nothing.
    """
    check_applicable(table, model)
    initial = initial.lower()
    if initial == "mmse":
        ld = detect_mmse(model)
    elif initial == "zf":
        ld = detect_zf(model)
    else:
        raise ValueError(f"unknown initial point {initial!r}")

    _, x = per_symbol_snr_of_model(model, initial)
    eta_over_rho = lookup_eta(table, 10.0 * math.log10(model.rho * model.n_symbols))
    rel = reliable_set(x, eta_over_rho)  # SNR_k > eta_k <=> x_k > eta_k/rho

    if len(rel.G) == model.n_symbols:
        return DetectorOutput(ld.s_hat, 0, ld.metric, rel.G)

    reduced, kept_coords, relied_coords = reduce_problem(model, rel.G, ld.s_hat)
    if sd_mode == "se":
        pol = policy or RadiusPolicy("lattice-dependent")
        start = babai_point(reduced).s_hat
        out = sphere_decode(reduced, pol, mode="se", start=start)
    else:
        pol = policy or RadiusPolicy("lattice-independent")
        out = sphere_decode(reduced, pol, mode="fp")

    s_hat = np.empty(model.m)
    s_hat[relied_coords] = ld.s_hat[relied_coords]
    s_hat[kept_coords] = out.s_hat
    d = model.y - model.H @ s_hat
    return DetectorOutput(s_hat, out.visited_nodes, float(d @ d), rel.G)


def qam_alpha_beta(M: int):
    """Constants of the per-axis error law: alpha = 3/(M-1), beta = 2(1-1/sqrt(M)).

    BPSK (M=2) is not a square QAM; its error law Q(sqrt(2 rho x)) maps onto
    the same exponential template with alpha = 2, beta = 1/2.
    """
    if M == 2:
        return 2.0, 0.5
    root = int(round(math.sqrt(M)))
    if root * root != M:
        raise InvalidSer(f"no closed-form error law for M={M}")
    return 3.0 / (M - 1.0), 2.0 * (1.0 - 1.0 / root)


def conditional_qam_ser(x: float, rho: float, M: int) -> float:
    """Symbol error probability of an M-ary decision at normalized gain x.

    Square QAM uses 2 beta Q(sqrt(alpha rho x)) - beta^2 Q^2(...); BPSK uses
    Q(sqrt(2 rho x)).  Monotone decreasing in x, and 1 - 1/M at x = 0.
    """
    if x < 0:
        raise ValueError("x must be nonnegative")
    if M == 2:
        return gaussian_q(math.sqrt(2.0 * rho * x))
    alpha, beta = qam_alpha_beta(M)
    q = gaussian_q(math.sqrt(alpha * rho * x))
    return 2.0 * beta * q - beta * beta * q * q


def threshold_suboptimal(x_samples: np.ndarray, ser_ld_k: float, ser_ml_k: float, M: int) -> float:
    """Inverse-CDF threshold eta/rho = F_x^{-1}((M/(M-1)) (P_LD - P_ML)).

    Negative differences clamp to zero (threshold 0) and arguments >= 1 map
    to +inf (no finite quantile).
    """
    x_samples = np.asarray(x_samples, dtype=np.float64)
    arg = (M / (M - 1.0)) * max(0.0, ser_ld_k - ser_ml_k)
    if arg >= 1.0:
        return math.inf
    if arg <= 0.0:
        return 0.0
    return float(np.quantile(x_samples, arg))


def threshold_high_snr(M: int, ser_ml_k: float, scale: float = 2.0) -> float:
    """Closed-form threshold eta = scale * (2/alpha) ln(beta / P_ML).

    Needs 0 < P_ML < beta; the default scale of two is what the sweeps use.
    Returns eta itself (divide by rho for a normalized table entry).
    """
    alpha, beta = qam_alpha_beta(M)
    if not 0.0 < ser_ml_k < beta:
        raise InvalidSer(f"ser_ml_k={ser_ml_k} outside (0, {beta})")
    return scale * (2.0 / alpha) * math.log(beta / ser_ml_k)


# ---------------------------------------------------------------------------
# calibration


@dataclass
class CalibrationSetup:
    """What to calibrate: channel ensemble, modulation, grid, and budgets."""

    scenario: str                  # "flat-mimo" | "freq-selective"
    L: int
    K: int
    modulation_kind: str
    modulation_M: int
    snr_grid_db: list
    trials: int
    initial: str = "mmse"
    L_c: int = 1
    eta_grid_size: int = 64
    min_error_events: int = 30
    pool_across_k: bool | None = None   # default: pool for i.i.d. flat channels
    ml_oracle: str = "auto"             # "brute" | "sphere" | "auto"
    bf_cap: int = 2 ** 24

    def pooled(self) -> bool:
        if self.pool_across_k is None:
            return self.scenario == "flat-mimo"
        return self.pool_across_k


@dataclass
class CalibrationStats:
    """Raw joint samples per grid SNR: gains, LD errors, oracle errors."""

    setup: CalibrationSetup
    seed: int
    x: list = field(default_factory=list)        # per point: (trials, K)
    err_ld: list = field(default_factory=list)   # per point: (trials, K) bool
    err_ml: list = field(default_factory=list)
    ser_ld: list = field(default_factory=list)   # per point: (K,) rates
    ser_ml: list = field(default_factory=list)
    sign_changes: list = field(default_factory=list)  # per point: (K,) ints


def _draw_channel(setup: CalibrationSetup, rng: Rng):
    if setup.scenario == "flat-mimo":
        return sample_flat_rayleigh(setup.L, setup.K, rng)
    taps = (rng.standard_normal(setup.L_c) + 1j * rng.standard_normal(setup.L_c)) / math.sqrt(2.0)
    return toeplitz_from_taps(taps, setup.K)


def _ml_oracle(setup: CalibrationSetup, model: RealModel):
    mode = setup.ml_oracle
    if mode == "auto":
        mode = "brute" if len(model.axis_alphabet) ** model.m <= setup.bf_cap else "sphere"
    if mode == "brute":
        return brute_force_ml(model, setup.bf_cap)
    return sphere_decode(model, RadiusPolicy("lattice-dependent"), mode="se")


def calibration_stats(setup: CalibrationSetup, rng: Rng) -> CalibrationStats:
    """Joint Monte-Carlo pass recording (x_k, LD error, exact-search error).

    One fresh channel per trial; the exact-search reference is the brute-force
    argmin when the candidate grid fits the cap, otherwise the (equivalent)
    zig-zag sphere decoder.
    """
    const = make_constellation(setup.modulation_kind, setup.modulation_M)
    stats = CalibrationStats(setup, rng.seed)
    for g, db in enumerate(setup.snr_grid_db):
        rho = total_snr_db_to_rho(db, setup.K)
        xs = np.empty((setup.trials, setup.K))
        eld = np.empty((setup.trials, setup.K), dtype=bool)
        eml = np.empty((setup.trials, setup.K), dtype=bool)
        for t in range(setup.trials):
            r = rng.derive(g, t)
            channel = _draw_channel(setup, r)
            H_r, axis = realify(channel, const)
            s_true = random_symbols(axis, H_r.shape[1], r)
            model, _ = transmit(H_r, s_true, rho, r, const, axis)
            ld = detect_mmse(model) if setup.initial == "mmse" else detect_zf(model)
            ml = _ml_oracle(setup, model)
            _, x = per_symbol_snr_of_model(model, setup.initial)
            xs[t] = x
            eld[t] = symbol_errors(ld.s_hat, s_true, const)
            eml[t] = symbol_errors(ml.s_hat, s_true, const)
        stats.x.append(xs)
        stats.err_ld.append(eld)
        stats.err_ml.append(eml)
        stats.ser_ld.append(eld.mean(axis=0))
        stats.ser_ml.append(eml.mean(axis=0))
        stats.sign_changes.append(np.zeros(setup.K, dtype=int))
    return stats


def _eta_candidates(x: np.ndarray, n: int) -> np.ndarray:
    """{0} + n log-spaced points over the positive sample range (+inf is implicit)."""
    lo = float(x.min())
    hi = float(x.max())
    lo = max(lo, 1e-12)
    grid = np.geomspace(lo, hi, n)
    return np.concatenate([[0.0], grid])


def _tail_counts(ts: np.ndarray, x: np.ndarray, err: np.ndarray) -> np.ndarray:
    """Number of samples with ``err`` set and x > t, for each t."""
    order = np.argsort(x, kind="stable")
    xs = x[order]
    es = err[order].astype(np.float64)
    tail = np.concatenate([[0.0], np.cumsum(es[::-1])])[::-1]  # events with x >= xs[i]
    idx = np.searchsorted(xs, ts, side="right")                # first sample index with x > t
    return tail[idx]


_CROSSING_Z = 2.0


def _crossing(ts, ld_cnt, ml_cnt, discord_cnt, floor):
    """Smallest eta/rho where the LD joint falls to the oracle joint.

    The root is zero when the gap at t = 0 is within ``_CROSSING_Z`` paired
    standard errors of zero (the count difference of paired indicators has
    variance equal to the discordant count); without that allowance a
    one-event surplus at an SNR extreme, where the two detectors err on
    essentially the same trials, would push the threshold far from the true
    root at zero.  A statistically real gap at zero is resolved by the strict
    first crossing of the raw curves, which over-shoots the true root and is
    therefore performance-safe.  Returns (eta_over_rho, sign_change_count).
    """
    n_ld_errors = int(ld_cnt[0])
    n_ml_errors = int(ml_cnt[0])
    if n_ld_errors == 0:
        return 0.0, 0
    if np.array_equal(ld_cnt, ml_cnt):
        return 0.0, 0
    if n_ld_errors < floor:
        raise InsufficientTrials(
            f"only {n_ld_errors} linear-detector error events (< {floor})"
        )
    if 0 < n_ml_errors < floor:
        raise InsufficientTrials(
            f"only {n_ml_errors} exact-search error events (< {floor})"
        )
    diff = ld_cnt - ml_cnt
    nz = diff[diff != 0.0]
    changes = int(np.count_nonzero(np.sign(nz[1:]) != np.sign(nz[:-1]))) if nz.size > 1 else 0
    if diff[0] <= _CROSSING_Z * math.sqrt(discord_cnt[0]):
        # indistinguishable from (or below) the oracle curve already at zero
        return 0.0, changes
    below = np.nonzero(diff <= 0.0)[0]
    if below.size == 0:
        return math.inf, changes
    i = int(below[0])
    t0, t1 = ts[i - 1], ts[i]
    d0, d1 = diff[i - 1], diff[i]
    eta = t0 + d0 * (t1 - t0) / (d0 - d1)  # linear interpolation of the crossing
    return float(eta), changes


def table_from_stats(stats: CalibrationStats, method: str = "exact", scale: float = 2.0) -> ThresholdTable:
    """Build a threshold table from a calibration pass.

    ``exact`` locates the joint-probability crossing per the calibration
    target; ``suboptimal`` inverts the empirical gain CDF at the clamped SER
    difference; ``high-snr-approx`` applies the scaled closed form to the
    measured exact-search SER.
    """
    setup = stats.setup
    pooled = setup.pooled()
    rows = []
    for g in range(len(setup.snr_grid_db)):
        x, eld, eml = stats.x[g], stats.err_ld[g], stats.err_ml[g]
        rho = total_snr_db_to_rho(setup.snr_grid_db[g], setup.K)
        etas = np.empty(setup.K)
        if method == "exact":
            if pooled:
                ts = _eta_candidates(x, setup.eta_grid_size)
                ld_c = _tail_counts(ts, x.ravel(), eld.ravel())
                ml_c = _tail_counts(ts, x.ravel(), eml.ravel())
                dc = _tail_counts(ts, x.ravel(), (eld ^ eml).ravel())
                eta, ch = _crossing(ts, ld_c, ml_c, dc, setup.min_error_events)
                etas[:] = eta
                stats.sign_changes[g][:] = ch
            else:
                for k in range(setup.K):
                    ts = _eta_candidates(x[:, k], setup.eta_grid_size)
                    ld_c = _tail_counts(ts, x[:, k], eld[:, k])
                    ml_c = _tail_counts(ts, x[:, k], eml[:, k])
                    dc = _tail_counts(ts, x[:, k], eld[:, k] ^ eml[:, k])
                    etas[k], ch = _crossing(ts, ld_c, ml_c, dc, setup.min_error_events)
                    stats.sign_changes[g][k] = ch
            if np.any(stats.sign_changes[g] > 1):
                logger.debug("multiple joint-curve sign changes at %s dB: %s",
                             setup.snr_grid_db[g], stats.sign_changes[g])
        elif method == "suboptimal":
            if pooled:
                etas[:] = threshold_suboptimal(x.ravel(), float(eld.mean()), float(eml.mean()),
                                               setup.modulation_M)
            else:
                for k in range(setup.K):
                    etas[k] = threshold_suboptimal(x[:, k], stats.ser_ld[g][k],
                                                   stats.ser_ml[g][k], setup.modulation_M)
        elif method == "high-snr-approx":
            for k in range(setup.K):
                ser_ml = float(eml.mean()) if pooled else stats.ser_ml[g][k]
                ser_ld = float(eld.mean()) if pooled else stats.ser_ld[g][k]
                if ser_ml <= 0.0:
                    # no observable reference error rate: rely fully only if the
                    # linear detector is also clean, otherwise never rely
                    etas[k] = 0.0 if ser_ld <= 0.0 else math.inf
                else:
                    etas[k] = threshold_high_snr(setup.modulation_M, ser_ml, scale) / rho
        else:
            raise ValueError(f"unknown threshold method {method!r}")
        rows.append(tuple(float(e) for e in etas))
    return ThresholdTable(
        snr_grid_db=tuple(float(v) for v in setup.snr_grid_db),
        eta_over_rho=tuple(rows),
        method=method,
        modulation_kind=setup.modulation_kind,
        modulation_M=setup.modulation_M,
        K=setup.K,
        L=setup.L,
        channel_model="flat-rayleigh" if setup.scenario == "flat-mimo" else "toeplitz-zp",
        trials=setup.trials,
        seed=stats.seed,
    )


def calibrate_exact(setup: CalibrationSetup, rng: Rng) -> ThresholdTable:
    """Monte-Carlo lookup-table calibration (the exact method)."""
    return table_from_stats(calibration_stats(setup, rng), "exact")


# ---------------------------------------------------------------------------
# table application and persistence


def lookup_eta(table: ThresholdTable, rho_t_db: float) -> np.ndarray:
    """Thresholds at the nearest grid SNR (no interpolation)."""
    grid = np.asarray(table.snr_grid_db)
    idx = int(np.argmin(np.abs(grid - rho_t_db)))
    return table.row(idx)


def check_applicable(table: ThresholdTable, model: RealModel, channel_model: str | None = None):
    c = model.constellation
    L = model.n // 2
    problems = []
    if table.modulation_kind != c.kind or table.modulation_M != c.M:
        problems.append(
            f"modulation {table.modulation_kind}{table.modulation_M} vs {c.kind}{c.M}")
    if table.K != model.n_symbols:
        problems.append(f"K {table.K} vs {model.n_symbols}")
    if table.L != L:
        problems.append(f"L {table.L} vs {L}")
    if channel_model is not None and table.channel_model != channel_model:
        problems.append(f"channel {table.channel_model} vs {channel_model}")
    if problems:
        raise TableMismatch("; ".join(problems))


def _encode_eta(v: float):
    return "inf" if math.isinf(v) else v


def _decode_eta(v):
    return math.inf if v == "inf" else float(v)


def save_table(table: ThresholdTable, path):
    doc = {
        "format_version": TABLE_FORMAT_VERSION,
        "method": table.method,
        "modulation": {"kind": table.modulation_kind, "M": table.modulation_M},
        "K": table.K,
        "L": table.L,
        "channel_model": table.channel_model,
        "snr_grid_db": list(table.snr_grid_db),
        "eta_over_rho": [[_encode_eta(v) for v in row] for row in table.eta_over_rho],
        "trials": table.trials,
        "seed": table.seed,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_table(path) -> ThresholdTable:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != TABLE_FORMAT_VERSION:
        raise TableMismatch(f"unsupported table format {doc.get('format_version')!r}")
    return ThresholdTable(
        snr_grid_db=tuple(float(v) for v in doc["snr_grid_db"]),
        eta_over_rho=tuple(tuple(_decode_eta(v) for v in row) for row in doc["eta_over_rho"]),
        method=doc["method"],
        modulation_kind=doc["modulation"]["kind"],
        modulation_M=int(doc["modulation"]["M"]),
        K=int(doc["K"]),
        L=int(doc["L"]),
        channel_model=doc["channel_model"],
        trials=int(doc["trials"]),
        seed=int(doc["seed"]),
    )
