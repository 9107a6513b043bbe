"""Orthonormal polynomial families for the normal, gamma and lognormal laws.

Each basis stores its monomial coefficients (row ``k`` holds ``q_k0..q_kk``)
but is evaluated through the family's three-term recurrence where one exists,
which is both faster and far better conditioned than summing monomials.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import linalg, special, stats

from .errors import (BasisOverflow, DegreeTooLarge, MomentMatrixSingular,
                     ValidationError)

K_MAX = 40
K_MAX_LOGNORMAL = 20
GH_MAX_ORDER = 128

# log of the largest/smallest coefficient magnitude stored for the lognormal family
_LOG_RANGE = 700.0


@dataclass(frozen=True)
class Normal:
    mu: float
    sigma2: float

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValidationError("normal variance must be positive")

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    def pdf(self, x):
        return stats.norm.pdf(x, loc=self.mu, scale=self.sigma)

    def moments(self, count: int) -> np.ndarray:
        return np.array([stats.norm.moment(j, loc=self.mu, scale=self.sigma)
                         for j in range(count)])


@dataclass(frozen=True)
class Gamma:
    """Gamma law with shape ``r`` and scale ``m``."""

    r: float
    m: float

    def __post_init__(self):
        if not (self.r > 0 and self.m > 0):
            raise ValidationError("gamma shape and scale must be positive")

    def pdf(self, x):
        return stats.gamma.pdf(x, self.r, scale=self.m)

    def logpdf(self, x):
        return stats.gamma.logpdf(x, self.r, scale=self.m)

    def moments(self, count: int) -> np.ndarray:
        j = np.arange(count)
        return np.exp(special.gammaln(self.r + j) - special.gammaln(self.r) + j * np.log(self.m))


@dataclass(frozen=True)
class Lognormal:
    mu: float
    sigma2: float

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValidationError("lognormal variance must be positive")

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    def pdf(self, x):
        return stats.lognorm.pdf(x, self.sigma, scale=math.exp(self.mu))

    def moments(self, count: int) -> np.ndarray:
        j = np.arange(count, dtype=float)
        return np.exp(j * self.mu + 0.5 * j * j * self.sigma2)


ReferenceDistribution = Union[Normal, Gamma, Lognormal]


@dataclass(frozen=True, eq=False)
class OrthonormalBasis:
    reference: ReferenceDistribution
    coeffs: np.ndarray

    @property
    def degree(self) -> int:
        return self.coeffs.shape[0] - 1

    def __call__(self, x, K: int | None = None) -> np.ndarray:
        """Values of ``Q_0..Q_K`` at ``x``; shape ``(K + 1,) + x.shape``."""
        K = self.degree if K is None else K
        if not 0 <= K <= self.degree:
            raise ValidationError(f"degree {K} outside 0..{self.degree}")
        x = np.asarray(x, dtype=float)
        ref = self.reference
        if isinstance(ref, Normal):
            return _hermite_values((x - ref.mu) / ref.sigma, K)
        if isinstance(ref, Gamma):
            return _laguerre_values(x / ref.m, ref.r, K)
        return np.stack([horner(self.coeffs[k, : k + 1], x) for k in range(K + 1)])


def _check_degree(K: int, limit: int = K_MAX):
    if K < 0:
        raise ValidationError("degree must be non-negative")
    if K > limit:
        raise DegreeTooLarge(f"degree {K} exceeds the supported maximum {limit}")


def _frozen(a):
    a = np.asarray(a, dtype=float)
    a.setflags(write=False)
    return a


def horner(row, x):
    """Evaluate ``sum_i row[i] * x**i``."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for c in row[::-1]:
        out = out * x + c
    return out


def _hermite_values(t, K):
    vals = np.empty((K + 1,) + np.shape(t))
    vals[0] = 1.0
    if K >= 1:
        vals[1] = t
    for k in range(1, K):
        vals[k + 1] = (t * vals[k] - math.sqrt(k) * vals[k - 1]) / math.sqrt(k + 1)
    return vals


def _laguerre_values(t, r, K):
    vals = np.empty((K + 1,) + np.shape(t))
    vals[0] = 1.0
    if K >= 1:
        vals[1] = (t - r) / math.sqrt(r)
    for k in range(1, K):
        vals[k + 1] = ((t - (2 * k + r)) * vals[k]
                       - math.sqrt(k * (k + r - 1)) * vals[k - 1]) / math.sqrt((k + 1) * (k + r))
    return vals


def _coeffs_from_recurrence(a, b, c, K):
    """Monomial rows of p_{k+1} = ((a_k x + b_k) p_k - c_k p_{k-1})."""
    rows = np.zeros((K + 1, K + 1))
    rows[0, 0] = 1.0
    for k in range(K):
        nxt = np.zeros(K + 1)
        nxt[1:] += a[k] * rows[k, :-1]
        nxt += b[k] * rows[k]
        if k > 0:
            nxt -= c[k] * rows[k - 1]
        rows[k + 1] = nxt
    return rows


def hermite_basis(mu: float, sigma2: float, K: int) -> OrthonormalBasis:
    """Orthonormal Hermite polynomials for N(mu, sigma2), degrees 0..K."""
    _check_degree(K)
    ref = Normal(float(mu), float(sigma2))
    s = ref.sigma
    k = np.arange(max(K, 1))
    norm = np.sqrt(k + 1.0)
    a = 1.0 / (s * norm)
    b = -ref.mu / (s * norm)
    c = np.sqrt(k) / norm
    return OrthonormalBasis(ref, _frozen(_coeffs_from_recurrence(a, b, c, K)))


def laguerre_basis(r: float, m: float, K: int) -> OrthonormalBasis:
    """Orthonormal (sign-flipped generalised) Laguerre polynomials for Gamma(r, m)."""
    _check_degree(K)
    ref = Gamma(float(r), float(m))
    k = np.arange(max(K, 1), dtype=float)
    norm = np.sqrt((k + 1) * (k + ref.r))
    a = 1.0 / (ref.m * norm)
    b = -(2 * k + ref.r) / norm
    c = np.sqrt(k * (k + ref.r - 1)) / norm
    return OrthonormalBasis(ref, _frozen(_coeffs_from_recurrence(a, b, c, K)))


def _log_elementary_symmetric(log_vals: np.ndarray) -> np.ndarray:
    """log e_j(v_1..v_k), j = 0..k, for positive v, by expanding prod (1 + v_i t)."""
    log_e = np.full(log_vals.size + 1, -np.inf)
    log_e[0] = 0.0
    for i, lv in enumerate(log_vals):
        # e_j <- e_j + v * e_{j-1}, highest j first
        log_e[1: i + 2] = np.logaddexp(log_e[1: i + 2], lv + log_e[: i + 1])
    return log_e


def lognormal_basis(mu: float, sigma2: float, K: int) -> OrthonormalBasis:
    """Closed-form orthonormal polynomials for LN(mu, sigma2).

    Row ``k`` is built in log-magnitude form from the elementary symmetric
    polynomials of ``1, e^{s2}, ..., e^{(k-1) s2}`` and the q-Pochhammer
    normaliser ``prod_{j=1..k} (1 - e^{-j s2})``.
    """
    _check_degree(K, K_MAX_LOGNORMAL)
    ref = Lognormal(float(mu), float(sigma2))
    s2 = ref.sigma2
    rows = np.zeros((K + 1, K + 1))
    for k in range(K + 1):
        log_poch = float(np.sum(np.log(-np.expm1(-s2 * np.arange(1, k + 1)))))
        log_e = _log_elementary_symmetric(s2 * np.arange(k))
        i = np.arange(k + 1)
        log_mag = (-0.5 * k * k * s2 - 0.5 * log_poch - i * ref.mu
                   - 0.5 * i * i * s2 + log_e[k - i])
        if np.max(np.abs(log_mag)) > _LOG_RANGE:
            raise BasisOverflow(
                f"lognormal polynomial of degree {k} leaves double-precision range")
        rows[k, : k + 1] = (-1.0) ** (k + i) * np.exp(log_mag)
    return OrthonormalBasis(ref, _frozen(rows))


def gram_schmidt_from_moments(moments, K: int, reference=None,
                              pivot_tol: float = 1e-14) -> OrthonormalBasis:
    """Orthonormal polynomials of a moment sequence ``s_0..s_{2K}``.

    Equivalent to the Hankel-determinant formula but computed through a
    Cholesky factorisation of the diagonally scaled Hankel matrix:
    if ``D H D = L L^T`` then the rows of ``L^{-1} D`` are the coefficients.
    """
    s = np.asarray(moments, dtype=float)
    if s.size < 2 * K + 1:
        raise ValidationError(f"need {2 * K + 1} moments for degree {K}")
    if K < 0:
        raise ValidationError("degree must be non-negative")
    idx = np.arange(K + 1)
    hankel = s[idx[:, None] + idx[None, :]]
    diag = np.diag(hankel)
    if np.any(diag <= 0):
        raise MomentMatrixSingular("non-positive even moment")
    d = 1.0 / np.sqrt(diag)
    scaled = hankel * d[:, None] * d[None, :]
    low = np.zeros_like(scaled)
    # explicit Cholesky so that tiny pivots are caught rather than rounded through
    for j in range(K + 1):
        piv = scaled[j, j] - low[j, :j] @ low[j, :j]
        if piv <= pivot_tol:
            raise MomentMatrixSingular(f"Hankel pivot {piv:.3e} at degree {j}")
        low[j, j] = math.sqrt(piv)
        low[j + 1:, j] = (scaled[j + 1:, j] - low[j + 1:, :j] @ low[j, :j]) / low[j, j]
    inv = linalg.solve_triangular(low, np.eye(K + 1), lower=True)
    coeffs = inv * d[None, :]
    return OrthonormalBasis(reference, _frozen(np.tril(coeffs)))


@dataclass(frozen=True, eq=False)
class QuadRule:
    """Gauss-Hermite rule for the weight ``exp(-z**2)``."""

    nodes: np.ndarray
    weights: np.ndarray

    @property
    def order(self) -> int:
        return self.nodes.size


def _orthonormal_hermite_tail(x, H):
    """Physicists' orthonormal Hermite values h_{H-1}, h_H and sum_{k<H} h_k^2."""
    p_prev = np.zeros_like(x)
    p = np.full_like(x, np.pi ** -0.25)
    total = p * p
    for k in range(H):
        p_next = x * math.sqrt(2.0 / (k + 1)) * p - math.sqrt(k / (k + 1)) * p_prev
        p_prev, p = p, p_next
        if k + 1 < H:
            total += p * p
    return p_prev, p, total


def gauss_hermite_rule(H: int) -> QuadRule:
    """Golub-Welsch nodes refined by Newton steps; weights from Christoffel sums."""
    if not 1 <= H <= GH_MAX_ORDER:
        raise ValidationError(f"Gauss-Hermite order must be in 1..{GH_MAX_ORDER}")
    off = np.sqrt(np.arange(1, H) / 2.0)
    x = linalg.eigh_tridiagonal(np.zeros(H), off, eigvals_only=True)
    for _ in range(3):
        h_lo, h_hi, _ = _orthonormal_hermite_tail(x, H)
        x = x - h_hi / (math.sqrt(2.0 * H) * h_lo)
    _, _, total = _orthonormal_hermite_tail(x, H)
    w = 1.0 / total
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    return QuadRule(_frozen(x), _frozen(w))


def eval_basis(basis: OrthonormalBasis, k: int, x):
    """Value of ``Q_k`` at ``x``."""
    return basis(x, k)[k]


def eval_monomial(basis: OrthonormalBasis, k: int, x):
    """Value of ``Q_k`` at ``x`` by Horner on the stored coefficients."""
    if not 0 <= k <= basis.degree:
        raise ValidationError(f"degree {k} outside 0..{basis.degree}")
    return horner(basis.coeffs[k, : k + 1], x)
