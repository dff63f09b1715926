"""Monte-Carlo estimation of the minimum achievable search complexity for a
given initial-information set.

Two estimator families, matching what the information actually pins down:

* radius information (``radius-li``, ``radius-ld``): the typical candidate set
  at depth d is the set of depth-d prefixes admitted by the radius, so the
  estimate is the expected per-level count of admitted prefixes on the exact
  search tree.  The lattice-independent radius is the noise-quantile radius;
  the lattice-dependent radius is the full Babai residual, realized per trial.
* point information (``zf-point``, ``mmse-point``): conditioning on the
  detected point leaves genuine uncertainty about the exact-search outcome,
  measured by plug-in entropies of its per-depth prefixes grouped exactly by
  the detected point's value, one conditional law per channel realization.
  Summing the alphabet raised to each prefix entropy gives the per-level
  typical-set sizes.

The reduction-aware variant weights the point-conditioned estimate by the
realized reduced problem size: symbols whose gain clears the threshold table
drop out, and full reliance contributes zero.

Entropies are plug-in estimates without small-sample (Miller-Madow style)
bias correction; the inner trial count controls that bias and is recorded in
the curve metadata.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .detectors import fp_radius
from .errors import InsufficientBinOccupancy, SearchSpaceTooLarge
from .lsr import ThresholdTable, lookup_eta
from .model import (
    make_constellation,
    per_symbol_snr,
    realify,
    sample_flat_rayleigh,
    toeplitz_from_taps,
    total_snr_db_to_rho,
)
from .numerics import Rng, qr_decompose

__all__ = [
    "InfoSetSpec",
    "MacConfig",
    "MacCurve",
    "ConditionalLawEstimate",
    "estimate_conditional_entropy",
    "theorem1_limits",
    "mac_sd",
    "mac_lsr",
]

_INFO_KINDS = ("radius-li", "radius-ld", "zf-point", "mmse-point")


@dataclass(frozen=True)
class InfoSetSpec:
    kind: str
    epsilon: float = 0.01  # coverage failure probability of the lattice-independent radius

    def __post_init__(self):
        if self.kind not in _INFO_KINDS:
            raise ValueError(f"unknown info set kind {self.kind!r}")


@dataclass
class MacConfig:
    scenario: str
    L: int
    K: int
    modulation_kind: str
    modulation_M: int
    snr_grid_db: list
    outer: int = 200
    inner: int = 10000
    L_c: int = 1
    min_cell_count: int = 25
    bf_cap: int = 2 ** 24


@dataclass(frozen=True)
class MacCurve:
    snr_grid_db: tuple
    mac_values: tuple
    info_set: InfoSetSpec
    trials_outer: int
    trials_inner: int
    seed: int
    notes: str = "plug-in prefix entropies, no Miller-Madow correction"


@dataclass(frozen=True)
class ConditionalLawEstimate:
    """Per-depth empirical laws of exact-search prefixes under one conditioning."""

    levels: tuple  # tuple of probability arrays, depth 1 first
    M: int         # entropy base (source alphabet order)


def estimate_conditional_entropy(law: ConditionalLawEstimate, k: int) -> float:
    """Plug-in entropy (base M) of the depth-k prefix law; 0 log 0 = 0."""
    p = np.asarray(law.levels[k - 1], dtype=np.float64)
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("law is not normalized")
    return _entropy_from_probs(p, law.M)


def _entropy_from_probs(p: np.ndarray, M: int) -> float:
    p = p[p > 0.0]
    return float(-(p * np.log(p)).sum() / math.log(M))


def theorem1_limits(K: int):
    """(low-SNR bound, high-SNR value) for a K-symbol binary problem."""
    if K < 1:
        raise ValueError("K must be positive")
    return 2 * (2 ** K - 1), K


def _tree_order_leaves(axis: np.ndarray, m: int, cap: int) -> np.ndarray:
    """All candidates as columns, ordered so leaves sharing their last d
    coordinates (the first d tree levels) form contiguous blocks."""
    na = len(axis)
    ncand = na ** m
    if ncand > cap:
        raise SearchSpaceTooLarge(f"{na}^{m} = {ncand} exceeds cap {cap}")
    S = np.empty((m, ncand))
    for j in range(m):  # digit j: most significant = coordinate m-1
        S[m - 1 - j] = axis[(np.arange(ncand) // na ** (m - 1 - j)) % na]
    return S


def _draw_channel(cfg: MacConfig, rng: Rng):
    if cfg.scenario == "flat-mimo":
        return sample_flat_rayleigh(cfg.L, cfg.K, rng)
    taps = (rng.standard_normal(cfg.L_c) + 1j * rng.standard_normal(cfg.L_c)) / math.sqrt(2.0)
    return toeplitz_from_taps(taps, cfg.K)


def _batched_babai(R: np.ndarray, YT: np.ndarray, axis: np.ndarray) -> np.ndarray:
    """Quantized back-substitution for a batch of triangular observations."""
    n_tr, m = YT.shape
    mids = 0.5 * (axis[1:] + axis[:-1])
    s = np.zeros((n_tr, m))
    for lvl in range(m - 1, -1, -1):
        r = YT[:, lvl] - s[:, lvl + 1:] @ R[lvl, lvl + 1:]
        c = r / R[lvl, lvl]
        s[:, lvl] = axis[np.searchsorted(mids, c, side="left")]
    return s


def _admitted_prefix_counts(cum: np.ndarray, radius, na: int) -> np.ndarray:
    """Per-trial sum over depths of admitted-prefix counts.

    ``cum[t, d-1, i]`` is the depth-d partial metric of leaf i; leaves sharing
    a depth-d prefix are contiguous blocks, so sampling one representative per
    block counts distinct prefixes.
    """
    n_tr, m, ncand = cum.shape
    radius = np.asarray(radius, dtype=np.float64).reshape(-1, 1)
    total = np.zeros(n_tr, dtype=np.int64)
    for d in range(1, m + 1):
        stride = na ** (m - d)
        vals = cum[:, d - 1, ::stride]
        total += (vals <= radius).sum(axis=1)
    return total


_THIN_CELL_TOLERANCE = 0.02


def _grouped_level_costs(ml_idx, group_codes, m_levels, na, M, min_cell, n_inner):
    """Average over conditioning groups of sum_d M^(prefix entropy at depth d).

    ``ml_idx`` are tree-ordered leaf indices of the exact-search outcome, so
    the depth-d prefix code is ``ml_idx // na^(m-d)``.  Cells holding fewer
    than ``min_cell`` samples carry noisy plug-in entropies; they are kept
    (their weight bounds the bias) unless they collectively exceed a small
    fraction of the sample, which signals a data-starved conditioning.
    """
    total = 0.0
    codes, counts = np.unique(group_codes, return_counts=True)
    thin = int(counts[counts < min_cell].sum())
    if thin > _THIN_CELL_TOLERANCE * n_inner:
        raise InsufficientBinOccupancy(
            f"{thin}/{n_inner} samples sit in conditioning cells below the "
            f"{min_cell}-sample floor"
        )
    for code, n_g in zip(codes, counts):
        sel = ml_idx[group_codes == code]
        c_sum = 0.0
        for d in range(1, m_levels + 1):
            pref = sel // (na ** (m_levels - d))
            cnt = np.bincount(pref, minlength=na ** d).astype(np.float64)
            h = _entropy_from_probs(cnt / n_g, M)
            c_sum += M ** h
        total += (n_g / n_inner) * c_sum
    return total


def _point_filter(H: np.ndarray, rho: float, initial: str):
    """Linear detector matrix (and bias correction) on the real model."""
    m = H.shape[1]
    G = H.T @ H
    if initial == "zf":
        W = np.linalg.solve(G, H.T)
        gamma = None
    else:
        W = np.linalg.solve(G + (1.0 / rho) * np.eye(m), H.T)
        gamma = 1.0 - np.diag(np.linalg.inv(rho * G + np.eye(m)))
    return W, gamma


def mac_sd(spec: InfoSetSpec, cfg: MacConfig, rng: Rng) -> MacCurve:
    """Minimum-achievable-complexity curve for a plain sphere search.

    Outer loop draws channels; the inner loop draws (s, n) and realizes the
    information: admitted-prefix counts for radius kinds, point-conditioned
    prefix entropies for point kinds (full problem, no reduction).
    """
    const = make_constellation(cfg.modulation_kind, cfg.modulation_M)
    values = []
    for g, db in enumerate(cfg.snr_grid_db):
        rho = total_snr_db_to_rho(db, cfg.K)
        sigma = math.sqrt(0.5 / rho)
        acc = 0.0
        for o in range(cfg.outer):
            r = rng.derive(g, o)
            channel = _draw_channel(cfg, r)
            H, axis = realify(channel, const)
            n_dim, m = H.shape
            na = len(axis)
            S = _tree_order_leaves(axis, m, cfg.bf_cap)
            ncand = S.shape[1]
            Q, R = qr_decompose(H)
            RS = R @ S
            HS = H @ S
            sidx = r.integers(0, ncand, size=cfg.inner)
            noise = r.standard_normal(cfg.inner * n_dim).reshape(cfg.inner, n_dim) * sigma
            Y = HS[:, sidx].T + noise
            YT = Y @ Q
            sq = (YT[:, :, None] - RS[None, :, :]) ** 2
            cum = np.cumsum(sq[:, ::-1, :], axis=1)
            if spec.kind == "radius-li":
                radius = np.full(cfg.inner, fp_radius(m, rho, spec.epsilon))
                acc += _admitted_prefix_counts(cum, radius, na).mean()
            elif spec.kind == "radius-ld":
                s_b = _batched_babai(R, YT, axis)
                D = Y - s_b @ H.T
                radius = np.einsum("ij,ij->i", D, D)
                acc += _admitted_prefix_counts(cum, radius, na).mean()
            else:
                initial = "zf" if spec.kind == "zf-point" else "mmse"
                W, gamma = _point_filter(H, rho, initial)
                est = Y @ W.T
                if gamma is not None:
                    est = est / gamma
                mids = 0.5 * (axis[1:] + axis[:-1])
                ld_digits = np.searchsorted(mids, est, side="left")
                group_codes = (ld_digits * (na ** np.arange(m))).sum(axis=1)
                ml_idx = np.argmin(cum[:, m - 1, :], axis=1)
                acc += _grouped_level_costs(
                    ml_idx, group_codes, m, na, cfg.modulation_M, cfg.min_cell_count, cfg.inner
                )
        values.append(acc / cfg.outer)
    return MacCurve(tuple(cfg.snr_grid_db), tuple(values), spec, cfg.outer, cfg.inner, rng.seed)


def mac_lsr(spec: InfoSetSpec, cfg: MacConfig, rng: Rng, table: ThresholdTable) -> MacCurve:
    """Reduction-aware MAC: point-conditioned entropies on the reduced problem,
    weighted by the realized reduced size under the threshold table.

    The reliable set is a function of the channel alone (gains do not depend
    on the noise), so each outer realization contributes either zero (full
    reliance) or its reduced-problem conditional cost.
    """
    if spec.kind not in ("zf-point", "mmse-point"):
        raise ValueError("reduction-aware MAC needs a point information set")
    initial = "zf" if spec.kind == "zf-point" else "mmse"
    const = make_constellation(cfg.modulation_kind, cfg.modulation_M)
    values = []
    for g, db in enumerate(cfg.snr_grid_db):
        rho = total_snr_db_to_rho(db, cfg.K)
        sigma = math.sqrt(0.5 / rho)
        eta = lookup_eta(table, db)
        acc = 0.0
        for o in range(cfg.outer):
            r = rng.derive(g, o)
            channel = _draw_channel(cfg, r)
            H, axis = realify(channel, const)
            n_dim, m = H.shape
            na = len(axis)
            K = m // 2 if const.kind == "qam" else m
            _, x = per_symbol_snr(H, rho, initial)
            x = x[:K]
            relied_syms = np.nonzero(x > eta)[0]
            if len(relied_syms) == K:
                continue  # zero search cost for this realization
            if const.kind == "qam":
                relied_coords = list(relied_syms) + [K + k for k in relied_syms]
                kept_syms = [k for k in range(K) if k not in set(relied_syms)]
                kept_coords = kept_syms + [K + k for k in kept_syms]
            else:
                relied_coords = list(relied_syms)
                kept_coords = [k for k in range(K) if k not in set(relied_syms)]
            m_red = len(kept_coords)

            S = _tree_order_leaves(axis, m, cfg.bf_cap)
            ncand = S.shape[1]
            HS = H @ S
            H_red = np.ascontiguousarray(H[:, kept_coords])
            Q_r, R_r = qr_decompose(H_red)
            S_red = _tree_order_leaves(axis, m_red, cfg.bf_cap)
            RS_red = R_r @ S_red

            W, gamma = _point_filter(H, rho, initial)
            mids = 0.5 * (axis[1:] + axis[:-1])

            sidx = r.integers(0, ncand, size=cfg.inner)
            noise = r.standard_normal(cfg.inner * n_dim).reshape(cfg.inner, n_dim) * sigma
            Y = HS[:, sidx].T + noise
            est = Y @ W.T
            if gamma is not None:
                est = est / gamma
            ld_digits = np.searchsorted(mids, est, side="left")
            ld_vals = axis[ld_digits]
            group_codes = (ld_digits * (na ** np.arange(m))).sum(axis=1)

            Yr = Y - ld_vals[:, relied_coords] @ H[:, relied_coords].T
            YTr = Yr @ Q_r
            sq = (YTr[:, :, None] - RS_red[None, :, :]) ** 2
            full = sq.sum(axis=1)
            ml_idx = np.argmin(full, axis=1)
            acc += _grouped_level_costs(
                ml_idx, group_codes, m_red, na, cfg.modulation_M, cfg.min_cell_count, cfg.inner
            )
        values.append(acc / cfg.outer)
    return MacCurve(tuple(cfg.snr_grid_db), tuple(values), spec, cfg.outer, cfg.inner, rng.seed)
