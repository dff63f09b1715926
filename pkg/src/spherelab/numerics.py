"""Self-contained numeric kernel: Householder QR, chi-square special functions,
Gaussian tail probability, and seeded/splittable random sampling.

Everything here is pure given its inputs.  A single ``Rng`` must not be shared
across workers; derive one child stream per worker or per trial instead.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import NonConvergence, RankDeficient

__all__ = [
    "Rng",
    "qr_decompose",
    "chi_square_cdf",
    "chi_square_quantile",
    "gaussian_q",
    "sample_standard_normal",
]

_RANK_TOL = 1e-12


class Rng:
    """Counter-based random stream (Philox) with cheap derived substreams.

    ``Rng(seed).derive(i, j)`` is a stream that depends only on
    ``(seed, i, j)``, so parallel trials can draw independent, reproducible
    streams without coordination.
    """

    def __init__(self, seed: int, _path: tuple = ()):
        self.seed = int(seed)
        self._path = tuple(int(p) for p in _path)
        self._gen = np.random.Generator(
            np.random.Philox(np.random.SeedSequence((self.seed,) + self._path))
        )

    def derive(self, *indices: int) -> "Rng":
        """Child stream for (seed, *path, *indices); independent of draws made here."""
        return Rng(self.seed, self._path + tuple(indices))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def standard_normal(self, n: int) -> np.ndarray:
        return self._gen.standard_normal(n)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def __repr__(self):  # pragma: no cover
        return f"Rng(seed={self.seed}, path={self._path})"


def sample_standard_normal(rng: Rng, n: int) -> np.ndarray:
    """n i.i.d. standard normal draws; bit-reproducible for a fixed stream."""
    return rng.standard_normal(n)


def qr_decompose(A: np.ndarray):
    """Thin QR of a real rows >= cols matrix via Householder reflections.

    Returns (Q, R) with Q (n, m) having orthonormal columns and R (m, m)
    upper triangular with nonnegative diagonal.  Raises ``RankDeficient``
    when the diagonal of R collapses below ``1e-12`` of its largest entry,
    the triangular stand-in for a singular-value rank test.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError("expected a 2-d array")
    n, m = A.shape
    if n < m:
        raise ValueError(f"need rows >= cols, got {n}x{m}")

    R = A.copy()
    vs = []
    for j in range(m):
        x = R[j:, j]
        normx = math.sqrt(float(x @ x))
        if normx == 0.0:
            raise RankDeficient(f"column {j} is zero below the diagonal")
        v = x.copy()
        v[0] += math.copysign(normx, x[0])
        v /= math.sqrt(float(v @ v))
        R[j:, j:] -= 2.0 * np.outer(v, v @ R[j:, j:])
        vs.append(v)

    Q = np.eye(n, m)
    for j in range(m - 1, -1, -1):
        v = vs[j]
        Q[j:, :] -= 2.0 * np.outer(v, v @ Q[j:, :])

    R = np.triu(R[:m, :])
    # flip signs so diag(R) >= 0
    d = np.sign(np.diag(R))
    d[d == 0] = 1.0
    R *= d[:, None]
    Q *= d[None, :]

    diag = np.abs(np.diag(R))
    if diag.min() <= _RANK_TOL * diag.max():
        raise RankDeficient(
            f"diagonal ratio {diag.min():.3e}/{diag.max():.3e} below rank tolerance"
        )
    return Q, R


def _gamma_p(s: float, x: float) -> float:
    """Regularized lower incomplete gamma P(s, x), series + continued fraction."""
    if x < 0.0 or s <= 0.0:
        raise ValueError("domain: x >= 0, s > 0")
    if x == 0.0:
        return 0.0
    lg = math.lgamma(s)
    if x < s + 1.0:
        # series expansion around 0
        term = 1.0 / s
        total = term
        k = s
        for _ in range(500):
            k += 1.0
            term *= x / k
            total += term
            if abs(term) < abs(total) * 1e-17:
                break
        else:  # pragma: no cover
            raise NonConvergence("incomplete gamma series did not converge")
        return total * math.exp(-x + s * math.log(x) - lg)
    # modified Lentz continued fraction for Q(s, x)
    tiny = 1e-300
    b = x + 1.0 - s
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 500):
        an = -i * (i - s)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    else:  # pragma: no cover
        raise NonConvergence("incomplete gamma continued fraction did not converge")
    q = math.exp(-x + s * math.log(x) - lg) * h
    return 1.0 - q


def chi_square_cdf(x: float, dof: int) -> float:
    """CDF of a chi-squared variable with ``dof`` degrees of freedom."""
    if x < 0:
        raise ValueError("x must be nonnegative")
    if dof < 1:
        raise ValueError("dof must be a positive count")
    return _gamma_p(0.5 * dof, 0.5 * x)


def chi_square_quantile(p: float, dof: int, max_iter: int = 400) -> float:
    """Inverse chi-squared CDF by bracketed bisection.

    Raises ``NonConvergence`` if the bracket does not tighten within the
    iteration cap (which would indicate a broken CDF, not a hard input).
    """
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie strictly inside (0, 1)")
    lo = 0.0
    hi = dof + 10.0 * math.sqrt(2.0 * dof) + 10.0
    grow = 0
    while chi_square_cdf(hi, dof) < p:
        hi *= 2.0
        grow += 1
        if grow > 200:
            raise NonConvergence("quantile bracket failed to capture p")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if chi_square_cdf(mid, dof) < p:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13 * max(1.0, hi):
            return 0.5 * (lo + hi)
    raise NonConvergence("quantile bisection exceeded the iteration cap")


def gaussian_q(x: float) -> float:
    """Gaussian tail probability Q(x) = P(N(0,1) > x), via erfc."""
    return 0.5 * math.erfc(x / math.sqrt(2.0))
