"""Constellations, channel draws, the real-valued transmit model, and
per-symbol post-equalization SNR.

All detectors in this package consume the real model produced by
``realify``/``transmit``; complex channels exist only on the way in.
Conventions: a complex noise entry has total variance ``sigma^2 = 1/rho``,
split half/half across real and imaginary parts, and every experiment axis
reports total SNR ``rho_T = K * rho`` in dB.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidOrder, RankDeficient
from .numerics import Rng

__all__ = [
    "Constellation",
    "ComplexChannel",
    "RealModel",
    "TransmitRecord",
    "make_constellation",
    "sample_flat_rayleigh",
    "toeplitz_from_taps",
    "realify",
    "transmit",
    "per_symbol_snr",
    "random_symbols",
    "symbol_errors",
    "total_snr_db_to_rho",
]


@dataclass(frozen=True)
class Constellation:
    kind: str  # "pam" | "qam"
    M: int
    points: np.ndarray      # (M,) real for PAM, complex for QAM; unit average energy
    pam_levels: np.ndarray  # the per-axis real alphabet, ascending

    @property
    def bits_per_symbol(self) -> int:
        return int(round(math.log2(self.M)))


@dataclass(frozen=True)
class ComplexChannel:
    L: int
    K: int
    entries: np.ndarray  # (L, K) complex
    model_tag: str = "flat-rayleigh"


@dataclass(frozen=True)
class RealModel:
    """Real linear observation y = H s + n with per-coordinate alphabet."""

    y: np.ndarray
    H: np.ndarray
    rho: float                       # SNR per symbol, linear (= 1/sigma^2)
    constellation: Constellation
    axis_alphabet: np.ndarray        # ascending real levels searched per coordinate

    @property
    def n(self) -> int:
        return self.H.shape[0]

    @property
    def m(self) -> int:
        return self.H.shape[1]

    @property
    def n_symbols(self) -> int:
        """Number of complex source symbols (m/2 for QAM, m for PAM)."""
        return self.m // 2 if self.constellation.kind == "qam" else self.m


@dataclass(frozen=True)
class TransmitRecord:
    s_true: np.ndarray
    noise_norm_sq: float


def _is_power_of_two(v: int) -> bool:
    return v >= 1 and (v & (v - 1)) == 0


def make_constellation(kind: str, M: int) -> Constellation:
    """Unit-average-energy M-PAM or square M-QAM alphabet.

    PAM levels are the odd integers scaled by sqrt(3/(M^2-1)); a QAM grid is
    the Cartesian square of the sqrt(M)-PAM axis scaled by sqrt(3/(2(M-1))).
    """
    kind = kind.lower()
    if kind == "pam":
        if M < 2 or not _is_power_of_two(M):
            raise InvalidOrder(f"PAM order must be a power of 2, got {M}")
        levels = (2 * np.arange(M) - (M - 1)) * math.sqrt(3.0 / (M * M - 1.0))
        return Constellation("pam", M, levels.copy(), levels)
    if kind == "qam":
        root = int(round(math.sqrt(M)))
        if root * root != M or not _is_power_of_two(root) or M < 4:
            raise InvalidOrder(f"QAM order must be the square of a power of 2, got {M}")
        levels = (2 * np.arange(root) - (root - 1)) * math.sqrt(3.0 / (2.0 * (M - 1.0)))
        re, im = np.meshgrid(levels, levels, indexing="ij")
        points = (re + 1j * im).ravel()
        return Constellation("qam", M, points, levels)
    raise InvalidOrder(f"unknown constellation kind {kind!r}")


def sample_flat_rayleigh(L: int, K: int, rng: Rng) -> ComplexChannel:
    """L x K i.i.d. circularly symmetric complex Gaussian entries, unit variance."""
    re = rng.standard_normal(L * K)
    im = rng.standard_normal(L * K)
    entries = ((re + 1j * im) / math.sqrt(2.0)).reshape(L, K)
    return ComplexChannel(L, K, entries, "flat-rayleigh")


def toeplitz_from_taps(h: np.ndarray, K: int) -> ComplexChannel:
    """Banded Toeplitz (K+L_c-1) x K convolution matrix of taps ``h``.

    Column j carries the taps shifted down by j; multiplying by a block of K
    symbols realizes zero-padded single-carrier block transmission.
    """
    h = np.asarray(h, dtype=np.complex128).ravel()
    L_c = h.size
    L = K + L_c - 1
    entries = np.zeros((L, K), dtype=np.complex128)
    for j in range(K):
        entries[j : j + L_c, j] = h
    return ComplexChannel(L, K, entries, "toeplitz-zp")


def realify(channel: ComplexChannel, constellation: Constellation):
    """Real decomposition of a complex channel; returns (H_r, axis_alphabet).

    QAM sources map to the 2L x 2K stacking [[Re, -Im], [Im, Re]] with the
    per-axis PAM levels as the coordinate alphabet; real PAM sources map to
    the 2L x K stacking [[Re], [Im]].  Euclidean metrics are preserved.
    """
    Hc = channel.entries
    if constellation.kind == "qam":
        H = np.block([[Hc.real, -Hc.imag], [Hc.imag, Hc.real]])
    else:
        H = np.vstack([Hc.real, Hc.imag])
    return np.ascontiguousarray(H), constellation.pam_levels.copy()


def transmit(H_r: np.ndarray, s_true: np.ndarray, rho: float, rng: Rng,
             constellation: Constellation, axis_alphabet: np.ndarray):
    """Observe y = H_r s + n; per-real-coordinate noise variance is sigma^2/2.

    ``rho = inf`` is the noiseless path (n = 0 exactly).
    """
    s_true = np.asarray(s_true, dtype=np.float64)
    n_dim = H_r.shape[0]
    if math.isinf(rho):
        noise = np.zeros(n_dim)
    else:
        sigma2 = 1.0 / rho
        noise = rng.standard_normal(n_dim) * math.sqrt(sigma2 / 2.0)
    y = H_r @ s_true + noise
    model = RealModel(y, H_r, rho, constellation, np.asarray(axis_alphabet, dtype=np.float64))
    return model, TransmitRecord(s_true.copy(), float(noise @ noise))


def random_symbols(model_axis: np.ndarray, m: int, rng: Rng) -> np.ndarray:
    """Uniform draw over the per-coordinate alphabet."""
    idx = rng.integers(0, len(model_axis), size=m)
    return np.asarray(model_axis)[idx]


def _gram(H) -> np.ndarray:
    H = np.asarray(H)
    return H.conj().T @ H if np.iscomplexobj(H) else H.T @ H


def per_symbol_snr(H_or_channel, rho: float, equalizer: str = "mmse"):
    """Post-equalization SNR per detected index, plus the normalized gain x.

    ZF:   SNR_k = rho / [(H^H H)^{-1}]_kk
    MMSE: SNR_k = rho / [(H^H H + I/rho)^{-1}]_kk - 1

    Accepts a ComplexChannel, a complex matrix, or the real model matrix; the
    real stacking of a QAM channel reproduces the complex Gram values with
    each symbol's two coordinates duplicated, in which case callers collapse
    the pair.  Second return is x_k = SNR_k / rho.
    """
    if isinstance(H_or_channel, ComplexChannel):
        H = H_or_channel.entries
    else:
        H = np.asarray(H_or_channel)
    G = _gram(H)
    K = G.shape[0]
    equalizer = equalizer.lower()
    if equalizer == "zf":
        diag = np.abs(np.diag(G))
        if diag.max() == 0:
            raise RankDeficient("zero channel")
        try:
            inv = np.linalg.inv(G)
        except np.linalg.LinAlgError as exc:
            raise RankDeficient(str(exc)) from None
        d = np.diag(inv).real
        if not np.all(np.isfinite(d)) or np.any(d <= 0) or np.linalg.cond(G) > 1e14:
            raise RankDeficient("Gram matrix numerically singular for ZF")
        snr = rho / d
    elif equalizer == "mmse":
        inv = np.linalg.inv(G + (1.0 / rho) * np.eye(K, dtype=G.dtype))
        snr = rho / np.diag(inv).real - 1.0
    else:
        raise ValueError(f"unknown equalizer {equalizer!r}")
    return snr, snr / rho


def symbol_errors(s_hat: np.ndarray, s_true: np.ndarray, constellation: Constellation) -> np.ndarray:
    """Per-source-symbol error indicators on real coordinate vectors.

    For QAM a complex symbol is in error when either of its two real
    coordinates differs.
    """
    diff = s_hat != s_true
    if constellation.kind == "qam":
        K = len(s_true) // 2
        return diff[:K] | diff[K:]
    return diff


def total_snr_db_to_rho(rho_t_db: float, K: int) -> float:
    """Per-symbol linear SNR from total SNR in dB (rho_T = K rho)."""
    return 10.0 ** (rho_t_db / 10.0) / K
