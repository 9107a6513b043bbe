"""Sums of lognormals S = e^{X_1} + ... + e^{X_n}.

Moments, tail constants, samplers (Gaussian or Clayton dependence) and the
ground-truth density used to score every estimator.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
import time
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy import integrate, linalg, optimize, signal, special

from . import mvn
from .errors import (GridNotPositive, UnsupportedCopula, UnsupportedOrder,
                     ValidationError)
from .mvn import MvnSpec, RngStream

FACE_ENUM_MAX_N = 12
R_ORACLE = 10**6


@dataclass(frozen=True)
class Gaussian:
    pass


@dataclass(frozen=True)
class Clayton:
    theta: float

    def __post_init__(self):
        if not self.theta > 0:
            raise ValidationError("Clayton theta must be positive")

    @property
    def kendall_tau(self) -> float:
        return self.theta / (self.theta + 2.0)


Copula = Union[Gaussian, Clayton]


@dataclass(frozen=True)
class SlnSpec:
    mvn: MvnSpec
    copula: Copula = field(default_factory=Gaussian)

    @property
    def n(self) -> int:
        return self.mvn.n

    @property
    def mu(self) -> np.ndarray:
        return self.mvn.mu

    @property
    def sigma(self) -> np.ndarray:
        return self.mvn.sigma

    @property
    def is_gaussian(self) -> bool:
        return isinstance(self.copula, Gaussian)

    @classmethod
    def from_diag_rho(cls, mu, diag, rho: float = 0.0, copula: Copula | None = None):
        """Equicorrelated covariance ``Sigma_ij = rho * sqrt(Sigma_ii Sigma_jj)``."""
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        diag = np.atleast_1d(np.asarray(diag, dtype=float))
        if diag.size == 1 and mu.size > 1:
            diag = np.full(mu.size, diag[0])
        if mu.size == 1 and diag.size > 1:
            mu = np.full(diag.size, mu[0])
        n = mu.size
        if diag.size != n:
            raise ValidationError("mu and diag(Sigma) lengths differ")
        if np.any(diag <= 0):
            raise ValidationError("variances must be positive")
        lower = -1.0 / (n - 1) if n > 1 else -1.0
        if n > 1 and not lower < rho < 1:
            raise ValidationError(f"rho={rho} outside ({lower:.6g}, 1) for n={n}")
        sd = np.sqrt(diag)
        sigma = rho * np.outer(sd, sd)
        np.fill_diagonal(sigma, diag)
        return cls(MvnSpec(mu, sigma), copula or Gaussian())


@dataclass(frozen=True)
class TailConstants:
    c1: float
    c2: float


@dataclass(eq=False)
class DensityGrid:
    xs: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.xs.shape != self.values.shape or self.xs.ndim != 1:
            raise ValidationError("xs and values must be 1-D of equal length")
        if np.any(np.diff(self.xs) <= 0):
            raise ValidationError("xs must be strictly increasing")

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("x,value\n")
        for x, v in zip(self.xs, self.values):
            buf.write(f"{x:.17g},{v:.17g}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, meta: dict | None = None) -> "DensityGrid":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != ["x", "value"]:
            raise ValidationError("density CSV must start with header 'x,value'")
        data = np.array([[float(a), float(b)] for a, b in rows[1:]]).reshape(-1, 2)
        return cls(data[:, 0], data[:, 1], dict(meta or {}))


def _require_gaussian(spec: SlnSpec, what: str):
    if not spec.is_gaussian:
        raise UnsupportedCopula(f"{what} requires the Gaussian copula")


def sln_moment(spec: SlnSpec, order: int) -> float:
    """E[S] (order 1) or E[S^2] (order 2) in closed form."""
    _require_gaussian(spec, "sln_moment")
    mu, sig = spec.mu, spec.sigma
    d = np.diag(sig)
    if order == 1:
        return float(np.sum(np.exp(mu + 0.5 * d)))
    if order == 2:
        expo = mu[:, None] + mu[None, :] + 0.5 * (d[:, None] + d[None, :]) + sig
        return float(np.sum(np.exp(expo)))
    raise UnsupportedOrder(f"moment order {order} not in {{1, 2}}")


def mean(spec: SlnSpec) -> float:
    """E[S]; marginal means are copula-free so any copula is accepted."""
    return float(np.sum(np.exp(spec.mu + 0.5 * np.diag(spec.sigma))))


def simplex_quadratic_min(precision: np.ndarray) -> tuple[float, np.ndarray]:
    """Minimise w^T P w over the probability simplex by face enumeration.

    Returns the minimum and a minimiser.
    """
    n = precision.shape[0]
    if n > FACE_ENUM_MAX_N:
        raise ValidationError(f"face enumeration limited to n <= {FACE_ENUM_MAX_N}")
    best, best_w = math.inf, None
    for size in range(1, n + 1):
        for face in itertools.combinations(range(n), size):
            idx = list(face)
            sub = precision[np.ix_(idx, idx)]
            try:
                y = linalg.solve(sub, np.ones(size), assume_a="pos")
            except linalg.LinAlgError:
                continue
            total = y.sum()
            if total <= 0:
                continue
            w_face = y / total
            if np.any(w_face < -1e-12):
                continue
            value = 1.0 / total
            if value < best:
                best = value
                best_w = np.zeros(n)
                best_w[idx] = np.clip(w_face, 0.0, None)
    return best, best_w


def tail_constants(spec: SlnSpec) -> TailConstants:
    """Left/right tail constants c1, c2 of f(x) = O(exp(-c ln(x)^2)).

    The left constant is min_{y >= 1} y^T Sigma^{-1} y / 2, and by convex
    duality that minimum equals 1 / min_{w in simplex} w^T Sigma w.
    """
    _require_gaussian(spec, "tail_constants")
    value, _ = simplex_quadratic_min(spec.sigma)
    c2 = 1.0 / (2.0 * float(np.max(np.diag(spec.sigma))))
    return TailConstants(c1=1.0 / (2.0 * value), c2=c2)


# -- sampling ---------------------------------------------------------------

def sample_log_components(spec: SlnSpec, count: int, stream: RngStream) -> np.ndarray:
    """Draw the matrix of log-summands X (count x n)."""
    if count < 1:
        raise ValidationError("count must be positive")
    if spec.is_gaussian:
        return mvn.sample(spec.mvn, count, stream)
    theta = spec.copula.theta
    gen = stream.generator()
    v = gen.gamma(1.0 / theta, 1.0, size=(count, 1))
    e = gen.standard_exponential((count, spec.n))
    # log U_i = -log1p(E_i / V) / theta, kept in logs for the upper tail
    log_u = -np.log1p(e / v) / theta
    sd = np.sqrt(np.diag(spec.sigma))
    return spec.mu + sd * special.ndtri_exp(log_u)


def sample_sln(spec: SlnSpec, count: int, stream: RngStream) -> np.ndarray:
    """Draw S_1..S_count."""
    return np.exp(sample_log_components(spec, count, stream)).sum(axis=1)


# -- joint log-density of X, used by the deterministic oracle -----------------

def log_component_logpdf(spec: SlnSpec, x: np.ndarray) -> np.ndarray:
    """Joint log-density of X at the rows of ``x`` (last axis length n)."""
    if spec.is_gaussian:
        return spec.mvn.logpdf(x)
    theta = spec.copula.theta
    n = spec.n
    sd = np.sqrt(np.diag(spec.sigma))
    zs = (np.asarray(x, float) - spec.mu) / sd
    marg = np.sum(-0.5 * zs * zs - 0.5 * math.log(2 * math.pi) - np.log(sd), axis=-1)
    log_u = special.log_ndtr(zs)
    lse = special.logsumexp(-theta * log_u, axis=-1)
    # log(1 - n + sum u^-theta) with the sum >= n
    log_base = lse + np.log1p(-(n - 1) * np.exp(-lse))
    log_c = (np.sum(np.log1p(theta * np.arange(1, n)))
             - (theta + 1.0) * np.sum(log_u, axis=-1)
             - (n + 1.0 / theta) * log_base)
    return log_c + marg


# -- oracle -----------------------------------------------------------------

def _softmax_logs(y):
    """log w for w = softmax(0, y_1, ..., y_{n-1}); y has trailing axis n-1."""
    full = np.concatenate([np.zeros(y.shape[:-1] + (1,)), y], axis=-1)
    return full - special.logsumexp(full, axis=-1, keepdims=True)


def _lognormal_pdf(xs, mu, s2):
    xs = np.asarray(xs, dtype=float)
    out = np.zeros_like(xs)
    pos = xs > 0
    lx = np.log(xs[pos])
    out[pos] = np.exp(-0.5 * (lx - mu) ** 2 / s2) / (xs[pos] * math.sqrt(2 * math.pi * s2))
    return out


def _oracle_adaptive(spec: SlnSpec, xs: np.ndarray) -> np.ndarray:
    """Nested adaptive quadrature in softmax coordinates (n = 2 or 3).

    With ``x = s * softmax(0, y)`` the slice integral becomes
    ``f(s) = (1/s) * int p_X(ln s + ln w(y)) dy`` over R^{n-1}.
    """
    logs = np.log(xs)[:, None]
    opts = dict(epsabs=1e-14, epsrel=1e-11, norm="max", limit=2000)

    def integrand(y):
        lw = _softmax_logs(np.asarray(y, float)[None, :])
        return np.exp(log_component_logpdf(spec, logs + lw))

    if spec.n == 2:
        val, _ = integrate.quad_vec(lambda y: integrand([y]), -np.inf, np.inf, **opts)
    else:
        def inner(y1):
            v, _ = integrate.quad_vec(lambda y2: integrand([y1, y2]), -np.inf, np.inf, **opts)
            return v
        val, _ = integrate.quad_vec(inner, -np.inf, np.inf, **opts)
    return val / xs


def _integrand_logs(spec, log_s, y):
    return log_component_logpdf(spec, log_s + _softmax_logs(y))


def _find_mode(spec, log_s, y0):
    def fun(y):
        return -_integrand_logs(spec, log_s, y[None, :])[0]

    res = optimize.minimize(fun, y0, method="BFGS", options={"gtol": 1e-9})
    return res.x


def _hessian_fd(spec, log_s, y, step=1e-3):
    d = y.size
    pts = [y]
    for i in range(d):
        for j in range(i, d):
            for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                p = y.copy()
                p[i] += si * step
                p[j] += sj * step
                pts.append(p)
    vals = _integrand_logs(spec, log_s, np.array(pts))
    hess = np.empty((d, d))
    k = 1
    for i in range(d):
        for j in range(i, d):
            pp, pm, mp, mm = vals[k: k + 4]
            k += 4
            if i == j:
                # (f(y+2h) - 2f(y) + f(y-2h)) / (4h^2)
                hess[i, i] = (pp - 2 * vals[0] + mm) / (4 * step * step)
            else:
                hess[i, j] = hess[j, i] = (pp - pm - mp + mm) / (4 * step * step)
    return -hess


def _oracle_cubature(spec: SlnSpec, xs: np.ndarray, half_width: float = 10.0,
                     step: float = 0.5) -> np.ndarray:
    """Mode-centred trapezoid cubature of the softmax-coordinate integral.

    For each s the log-integrand is maximised, the grid is rotated and scaled
    by the inverse Hessian at the mode, and a tensor trapezoid rule is applied;
    for smooth integrands with Gaussian-type decay this converges geometrically.
    """
    d = spec.n - 1
    ticks = np.arange(-half_width, half_width + step / 2, step)
    grid = np.stack(np.meshgrid(*([ticks] * d), indexing="ij"), axis=-1).reshape(-1, d)
    out = np.empty(xs.size)
    y0 = np.zeros(d)
    for k in np.argsort(xs)[::-1]:
        log_s = math.log(xs[k])
        y0 = _find_mode(spec, log_s, y0)
        hess = _hessian_fd(spec, log_s, y0)
        try:
            low = linalg.cholesky(hess, lower=True)
            scale = linalg.solve_triangular(low, np.eye(d), lower=True).T
        except linalg.LinAlgError:
            scale = np.eye(d)
        pts = y0 + grid @ scale.T
        logv = _integrand_logs(spec, log_s, pts)
        peak = np.max(logv)
        out[k] = math.exp(peak) * np.sum(np.exp(logv - peak)) * step**d * abs(np.linalg.det(scale))
    return out / xs


def kde_density(samples: np.ndarray, xs: np.ndarray, bandwidth: float | None = None,
                bins: int = 2**14) -> tuple[np.ndarray, float]:
    """Gaussian KDE by linear binning and FFT convolution.

    The default bandwidth is Silverman's rule
    ``0.9 * min(sd, IQR / 1.34) * R^(-1/5)``.
    """
    samples = np.asarray(samples, dtype=float)
    r = samples.size
    if bandwidth is None:
        sd = samples.std(ddof=1)
        q75, q25 = np.percentile(samples, [75, 25])
        bandwidth = 0.9 * min(sd, (q75 - q25) / 1.34) * r ** (-0.2)
    lo = min(samples.min(), xs.min()) - 6 * bandwidth
    hi = max(samples.max(), xs.max()) + 6 * bandwidth
    # limit the FFT span to where both data and query points matter
    hi = min(hi, max(xs.max(), np.quantile(samples, 0.999)) + 8 * bandwidth)
    kept = samples[samples <= hi]
    delta = (hi - lo) / (bins - 1)
    pos = (kept - lo) / delta
    left = np.floor(pos).astype(int)
    frac = pos - left
    counts = np.bincount(left, weights=1 - frac, minlength=bins + 1)
    counts += np.bincount(left + 1, weights=frac, minlength=bins + 1)
    counts = counts[:bins]
    kern_x = np.arange(-bins + 1, bins) * delta
    kern = np.exp(-0.5 * (kern_x / bandwidth) ** 2) / (bandwidth * math.sqrt(2 * math.pi))
    dens = signal.fftconvolve(counts, kern, mode="same") / r
    grid = lo + delta * np.arange(bins)
    return np.interp(xs, grid, dens), float(bandwidth)


def log_kde_density(samples: np.ndarray, xs: np.ndarray, bandwidth: float | None = None,
                    bins: int = 2**14) -> tuple[np.ndarray, float]:
    """KDE of ln S mapped back through the Jacobian 1/x.

    The Silverman rule is far better matched to ln S than to the skewed S
    itself; the bandwidth returned is on the log scale.
    """
    xs = np.asarray(xs, dtype=float)
    dens, bw = kde_density(np.log(samples), np.log(xs), bandwidth, bins)
    return dens / xs, bw


def default_oracle_method(spec: SlnSpec) -> str:
    if spec.n == 1:
        return "exact"
    if spec.is_gaussian and spec.n <= 3:
        return "adaptive"
    if spec.n <= 4:
        return "cubature"
    return "kde"


def oracle_density(spec: SlnSpec, xs, method: str | None = None,
                   stream: RngStream | None = None, samples: int = R_ORACLE) -> DensityGrid:
    """Reference density of S on the grid ``xs``.

    Methods: ``exact`` (n = 1), ``adaptive`` (nested adaptive quadrature,
    Gaussian copula, n <= 3), ``cubature`` (mode-centred trapezoid, any copula,
    n <= 4), ``kde`` (Gaussian KDE on the log scale of ``samples`` draws, any spec).
    """
    xs = np.asarray(xs, dtype=float)
    if np.any(xs <= 0):
        raise GridNotPositive("oracle grid must be strictly positive")
    method = method or default_oracle_method(spec)
    t0 = time.perf_counter()
    meta = {"estimator": "oracle", "method": method, "stochastic": method == "kde"}
    if method == "exact":
        if spec.n != 1:
            raise ValidationError("exact oracle only for n = 1")
        vals = _lognormal_pdf(xs, spec.mu[0], spec.sigma[0, 0])
    elif method == "adaptive":
        _require_gaussian(spec, "adaptive oracle")
        if spec.n not in (2, 3):
            raise ValidationError("adaptive oracle supports n = 2 or 3")
        vals = _oracle_adaptive(spec, xs)
    elif method == "cubature":
        if not 2 <= spec.n <= 4:
            raise ValidationError("cubature oracle supports 2 <= n <= 4")
        vals = _oracle_cubature(spec, xs)
    elif method == "kde":
        stream = stream or RngStream(0, 2**32)
        draws = sample_sln(spec, samples, stream)
        vals, bw = log_kde_density(draws, xs)
        meta.update(seed=stream.seed, stream_index=stream.stream_index,
                    samples=samples, bandwidth=bw, scale="log")
    else:
        raise ValidationError(f"unknown oracle method {method!r}")
    meta["runtime_ms"] = 1e3 * (time.perf_counter() - t0)
    return DensityGrid(xs, vals, meta)
