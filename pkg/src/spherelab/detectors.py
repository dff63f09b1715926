"""Baseline detectors, the exhaustive ML oracle, and the exact sphere decoders.

Every detector consumes a ``RealModel`` and returns a ``DetectorOutput`` whose
``metric`` is the full residual ||y - H s_hat||^2.  ``visited_nodes`` counts
partial candidates whose accumulated tree metric was evaluated and admitted by
the current search radius; linear detectors report 0 and the Babai descent
reports one node per level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import RankDeficient, RestartOverflow, SearchSpaceTooLarge, ZeroColumn
from .model import RealModel
from .numerics import chi_square_quantile, qr_decompose

__all__ = [
    "DetectorOutput",
    "RadiusPolicy",
    "quantize",
    "quantize_vector",
    "detect_zf",
    "detect_mmse",
    "detect_mrc",
    "babai_point",
    "brute_force_ml",
    "fp_radius",
    "sphere_decode",
    "BRUTE_FORCE_CAP",
]

BRUTE_FORCE_CAP = 2 ** 24
_MAX_RADIUS_DOUBLINGS = 30


@dataclass(frozen=True)
class DetectorOutput:
    s_hat: np.ndarray
    visited_nodes: int
    metric: float
    relied_indices: tuple = ()


@dataclass(frozen=True)
class RadiusPolicy:
    """Initial-radius rule for the sphere search.

    ``lattice-independent`` draws the radius from the noise statistics alone
    (covers the projected noise with probability 1-epsilon); ``lattice-dependent``
    starts from the residual of a detected point.  On an empty sphere the
    radius is regrown multiplicatively.
    """

    kind: str = "lattice-dependent"
    epsilon: float = 0.01
    restart_growth: float = 2.0

    def __post_init__(self):
        if self.kind not in ("lattice-independent", "lattice-dependent"):
            raise ValueError(f"unknown radius policy {self.kind!r}")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.restart_growth <= 1.0:
            raise ValueError("restart_growth must exceed 1")


def quantize(axis, value: float) -> float:
    """Nearest axis point; exact midpoints resolve to the smaller value."""
    axis = np.asarray(axis)
    best = 0
    bd = abs(value - axis[0])
    for j in range(1, len(axis)):
        d = abs(value - axis[j])
        if d < bd:
            bd = d
            best = j
    return float(axis[best])


def quantize_vector(axis: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Vectorized nearest-point map with the same tie rule as ``quantize``."""
    axis = np.asarray(axis)
    mids = 0.5 * (axis[1:] + axis[:-1])
    idx = np.searchsorted(mids, values, side="left")
    return axis[idx]


def _full_metric(model: RealModel, s: np.ndarray) -> float:
    d = model.y - model.H @ s
    return float(d @ d)


def detect_zf(model: RealModel) -> DetectorOutput:
    """Quantized least-squares solution; requires full column rank."""
    Q, R = qr_decompose(model.H)
    est = _solve_upper(R, Q.T @ model.y)
    s = quantize_vector(model.axis_alphabet, est)
    return DetectorOutput(s, 0, _full_metric(model, s))


def _solve_upper(R: np.ndarray, b: np.ndarray) -> np.ndarray:
    m = R.shape[0]
    x = np.zeros(m)
    for i in range(m - 1, -1, -1):
        x[i] = (b[i] - R[i, i + 1:] @ x[i + 1:]) / R[i, i]
    return x


def detect_mmse(model: RealModel) -> DetectorOutput:
    """Bias-corrected MMSE estimate, then coordinatewise quantization.

    The regularized inverse exists for any channel; at infinite SNR the
    regularizer vanishes and the decisions coincide with ZF.
    """
    H, y, rho = model.H, model.y, model.rho
    m = H.shape[1]
    G = H.T @ H
    hty = H.T @ y
    if math.isinf(rho):
        est = np.linalg.solve(G, hty)
    else:
        est = np.linalg.solve(G + (1.0 / rho) * np.eye(m), hty)
        gamma = 1.0 - np.diag(np.linalg.inv(rho * G + np.eye(m)))
        est = est / gamma
    s = quantize_vector(model.axis_alphabet, est)
    return DetectorOutput(s, 0, _full_metric(model, s))


def detect_mrc(model: RealModel) -> DetectorOutput:
    """Per-column matched filter [H^T y]_i / ||h_i||^2, quantized."""
    H, y = model.H, model.y
    norms = np.einsum("ij,ij->j", H, H)
    if np.any(norms == 0.0):
        raise ZeroColumn("matched filter undefined for an all-zero column")
    est = (H.T @ y) / norms
    s = quantize_vector(model.axis_alphabet, est)
    return DetectorOutput(s, 0, _full_metric(model, s))


def babai_point(model: RealModel) -> DetectorOutput:
    """Quantized back-substitution (ZF-DF) in natural order; visits one node per level."""
    Q, R = qr_decompose(model.H)
    yt = Q.T @ model.y
    s = _kernels.babai_descent(np.ascontiguousarray(R), yt, model.axis_alphabet)
    return DetectorOutput(s, model.m, _full_metric(model, s))


_BLOCK_CACHE: dict = {}
_BLOCK_CACHE_LIMIT = 32


def _candidate_block(axis: np.ndarray, m: int, start: int, stop: int) -> np.ndarray:
    """Candidates ``start:stop`` of the lexicographic enumeration, as (m, n) columns.

    Coordinate 0 is the most significant digit and axis values ascend, so
    column order is the lexicographic order of the candidate vectors.  Grids
    that fit one chunk are cached; rebuilding them dominated small searches.
    """
    na = len(axis)
    key = (axis.tobytes(), m, start, stop)
    hit = _BLOCK_CACHE.get(key)
    if hit is not None:
        return hit
    idx = np.arange(start, stop, dtype=np.int64)
    out = np.empty((m, len(idx)))
    for i in range(m):
        out[i] = axis[(idx // na ** (m - 1 - i)) % na]
    if len(_BLOCK_CACHE) < _BLOCK_CACHE_LIMIT:
        _BLOCK_CACHE[key] = out
    return out


def brute_force_ml(model: RealModel, cap: int = BRUTE_FORCE_CAP) -> DetectorOutput:
    """Exact argmin over the full candidate grid.

    Ties resolve to the lexicographically smallest candidate vector.
    ``visited_nodes`` is the number of candidates enumerated.
    """
    na = len(model.axis_alphabet)
    m = model.m
    ncand = na ** m
    if ncand > cap:
        raise SearchSpaceTooLarge(f"{na}^{m} = {ncand} exceeds cap {cap}")
    H, y = model.H, model.y
    best_s = None
    best_metric = np.inf
    chunk = 1 << 14
    for start in range(0, ncand, chunk):
        stop = min(start + chunk, ncand)
        S = _candidate_block(model.axis_alphabet, m, start, stop)
        D = y[:, None] - H @ S
        metrics = np.einsum("ij,ij->j", D, D)
        j = int(np.argmin(metrics))  # first minimum = lexicographically smallest
        if metrics[j] < best_metric:
            best_metric = float(metrics[j])
            best_s = S[:, j].copy()
    return DetectorOutput(best_s, ncand, best_metric)


def fp_radius(k_real: int, rho: float, epsilon: float) -> float:
    """Squared radius covering the projected noise norm with probability 1-epsilon.

    For a depth-``k_real`` search tree the relevant noise is the triangular
    system's residual, a chi-square with ``k_real`` degrees of freedom scaled
    by sigma^2/2; the radius is that quantile and scales as 1/rho at fixed
    epsilon.
    """
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    if math.isinf(rho):
        return 0.0
    sigma2 = 1.0 / rho
    return 0.5 * sigma2 * chi_square_quantile(1.0 - epsilon, k_real)


def sphere_decode(
    model: RealModel,
    policy: RadiusPolicy | None = None,
    mode: str | None = None,
    start: np.ndarray | None = None,
    initial_radius: float | None = None,
) -> DetectorOutput:
    """Exact sphere decoder; returns the brute-force argmin with node accounting.

    ``mode='fp'`` enumerates level candidates in natural (ascending) order and
    defaults to the lattice-independent radius; ``mode='se'`` enumerates
    zig-zag around the unconstrained per-level solution and defaults to the
    lattice-dependent radius ||y - H s_start||^2 (Babai start unless given).
    Both modes shrink the radius at each improved full-length candidate, so
    enlarging the initial radius never changes the returned vector, only the
    visited-node count.
    """
    policy = policy or RadiusPolicy()
    if mode is None:
        mode = "fp" if policy.kind == "lattice-independent" else "se"
    if mode not in ("fp", "se"):
        raise ValueError(f"unknown sphere decoder mode {mode!r}")

    Q, R = qr_decompose(model.H)
    R = np.ascontiguousarray(R)
    yt = Q.T @ model.y
    axis = model.axis_alphabet

    if initial_radius is not None:
        radius0 = float(initial_radius)
    elif policy.kind == "lattice-independent":
        radius0 = fp_radius(model.m, model.rho, policy.epsilon)
    else:
        s0 = start if start is not None else _kernels.babai_descent(R, yt, axis)
        # tree metric in kernel summation order plus the nonnegative projection
        # residual, so the start leaf is always admitted on the first pass
        proj = model.y - Q @ yt
        radius0 = _kernels.tree_metric(R, yt, np.asarray(s0, dtype=np.float64)) + float(proj @ proj)

    # floor keeps a zero radius (noiseless lattice-independent case) searchable
    radius0 = max(radius0, 1e-13 * (1.0 + float(yt @ yt)))

    status, s_hat, _, visited, restarts = _kernels.sphere_search(
        R, yt, axis, radius0, mode == "se", policy.restart_growth, _MAX_RADIUS_DOUBLINGS
    )
    if status != 0:
        raise RestartOverflow(
            f"no lattice point found after {restarts} radius doublings from {radius0:.3e}"
        )
    return DetectorOutput(s_hat, int(visited), _full_metric(model, s_hat))
