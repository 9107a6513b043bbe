"""Exponential tilting of S and the Laplace-method machinery for L_i(theta).

``L_i(theta) = E[S^i exp(-theta S)]`` is written as a Laplace approximation
around the minimiser of

    h(x) = -i ln(1' e^{mu + x}) + theta 1' e^{mu + x} + x' Sigma^{-1} x / 2

times a correction integral that is evaluated with tensor Gauss-Hermite
quadrature (or Monte Carlo once the tensor grid gets too large).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, special

from . import mvn
from .errors import (HessianNotPD, NoConvergence, TensorTooLarge,
                     UnsupportedCopula, ValidationError)
from .mvn import RngStream
from .orthopoly import GH_MAX_ORDER, gauss_hermite_rule
from .sln import SlnSpec

MAX_TENSOR_NODES = 10**7
MC_FALLBACK_SAMPLES = 10**5
NEWTON_MAX_ITER = 200
NEWTON_GTOL = 1e-10


@dataclass(frozen=True)
class TiltedModel:
    spec: SlnSpec
    theta: float

    def __post_init__(self):
        if not self.spec.is_gaussian:
            raise UnsupportedCopula("tilting machinery requires the Gaussian copula")
        if not self.theta >= 0:
            raise ValidationError("theta must be non-negative")

    @property
    def n(self) -> int:
        return self.spec.n


@dataclass(frozen=True, eq=False)
class LaplacePoint:
    i: int
    x_star: np.ndarray
    h_value: float
    hessian: np.ndarray


def _require_positive_theta(model: TiltedModel):
    if not model.theta > 0:
        raise ValidationError("theta must be positive")


def _terms(model: TiltedModel, x):
    u = np.exp(model.spec.mu + x)
    s = np.sum(u, axis=-1)
    return u, s


def h_theta_i(model: TiltedModel, i: int, x) -> float:
    _require_positive_theta(model)
    x = np.asarray(x, dtype=float)
    u, s = _terms(model, x)
    quad = x @ model.spec.mvn.precision @ x
    return float(-i * math.log(s) + model.theta * s + 0.5 * quad)


def grad_h(model: TiltedModel, i: int, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    u, s = _terms(model, x)
    return -i * u / s + model.theta * u + model.spec.mvn.precision @ x


def hess_h(model: TiltedModel, i: int, x) -> np.ndarray:
    """Exact Hessian of h at any x."""
    x = np.asarray(x, dtype=float)
    u, s = _terms(model, x)
    return (i * (np.outer(u, u) / s**2 - np.diag(u) / s)
            + model.theta * np.diag(u) + model.spec.mvn.precision)


def stationary_hessian(model: TiltedModel, i: int, x_star) -> np.ndarray:
    """Hessian reduced with the first-order condition (valid only at x*)."""
    x_star = np.asarray(x_star, dtype=float)
    u, s = _terms(model, x_star)
    prec = model.spec.mvn.precision
    return i * np.outer(u, u) / s**2 + prec - np.diag(prec @ x_star)


def _newton(model: TiltedModel, i: int, x: np.ndarray):
    """Eigenvalue-modified Newton with Armijo backtracking (factor 0.5)."""
    val = h_theta_i(model, i, x)
    for _ in range(NEWTON_MAX_ITER):
        g = grad_h(model, i, x)
        if np.max(np.abs(g)) <= NEWTON_GTOL:
            return x, val, True
        lam, vec = np.linalg.eigh(hess_h(model, i, x))
        floor = 1e-8 * max(np.max(np.abs(lam)), 1.0)
        lam = np.maximum(np.abs(lam), floor)
        step = -vec @ ((vec.T @ g) / lam)
        slope = g @ step
        # near x* the predicted decrease drops below the rounding error of h
        slack = 16 * np.finfo(float).eps * max(abs(val), 1.0)
        t = 1.0
        while True:
            cand = x + t * step
            cval = h_theta_i(model, i, cand)
            if cval <= val + 1e-4 * t * slope + slack:
                break
            t *= 0.5
            if t < 1e-14:
                return x, val, np.max(np.abs(g)) <= 1e3 * NEWTON_GTOL
        x, val = cand, cval
    g = grad_h(model, i, x)
    return x, val, np.max(np.abs(g)) <= NEWTON_GTOL


def minimize_h(model: TiltedModel, i: int) -> LaplacePoint:
    """Global minimiser of h_{theta,i}.

    h is not convex once i > 0 (the -i ln(sum) term is concave), and it can
    have one basin per dominant summand. Newton is therefore started from 0
    and from each point where a single summand carries the mode of S^i e^{-theta S}.
    """
    _require_positive_theta(model)
    n = model.n
    starts = [np.zeros(n)]
    if i > 0:
        for j in range(n):
            x0 = np.zeros(n)
            x0[j] = math.log(i / model.theta) - model.spec.mu[j]
            starts.append(x0)
    best = None
    for x0 in starts:
        x, val, ok = _newton(model, i, x0)
        if ok and (best is None or val < best[1] - 1e-12):
            best = (x, val)
    if best is None:
        raise NoConvergence(f"Newton did not converge for i={i}, theta={model.theta}")
    x, val = best
    hess = stationary_hessian(model, i, x)
    try:
        linalg.cholesky(hess, lower=True)
    except linalg.LinAlgError:
        raise HessianNotPD(f"Hessian at the minimiser is not PD (i={i})") from None
    return LaplacePoint(i=i, x_star=x, h_value=val, hessian=hess)


def _log_laplace_tilde(model: TiltedModel, point: LaplacePoint) -> float:
    sign, logdet = np.linalg.slogdet(model.spec.sigma @ point.hessian)
    if sign <= 0:
        raise HessianNotPD("|Sigma H| is not positive")
    return -point.h_value - 0.5 * logdet


def laplace_tilde(model: TiltedModel, i: int) -> float:
    """Second-order Laplace approximation of L_i(theta)."""
    return math.exp(_log_laplace_tilde(model, minimize_h(model, i)))


def _log_v(model: TiltedModel, i: int, x_star, z):
    """log v(z) for rows of z."""
    prec = model.spec.mvn.precision
    u = np.exp(model.spec.mu + x_star + z)
    s = np.sum(u, axis=-1)
    logs = np.log(s) if i else 0.0
    return i * logs - model.theta * s - z @ (prec @ x_star)


@dataclass(frozen=True)
class LaplaceResult:
    i: int
    l_hat: float
    l_tilde: float
    correction: float
    method: str


def _correction_nodes(model: TiltedModel, H: int):
    n = model.n
    if float(H) ** n > MAX_TENSOR_NODES:
        raise TensorTooLarge(f"{H}^{n} Gauss-Hermite nodes exceed {MAX_TENSOR_NODES}")
    rule = gauss_hermite_rule(H)
    grids = np.meshgrid(*([rule.nodes] * n), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    wgrids = np.meshgrid(*([rule.weights] * n), indexing="ij")
    log_w = np.sum([np.log(w.ravel()) for w in wgrids], axis=0)
    # weight exp(-z^2) -> standard normal: z_std = sqrt(2) z, mass pi^{n/2}
    return math.sqrt(2.0) * nodes, log_w - 0.5 * n * math.log(math.pi)


def laplace_estimate(model: TiltedModel, i: int, H: int | None = None,
                     stream: RngStream | None = None,
                     mc_samples: int = MC_FALLBACK_SAMPLES) -> LaplaceResult:
    """L_hat_i, L_tilde_i and the correction I_i = L_hat_i / L_tilde_i.

    The correction ``E[v(Sigma^{1/2} Z)] / v(0)`` uses a tensor Gauss-Hermite
    rule of order ``H`` (``Sigma^{1/2}`` is the lower Cholesky factor); when
    ``H^n`` exceeds the node budget, or ``H`` is None, it falls back to Monte
    Carlo with ``mc_samples`` draws from ``stream``.
    """
    point = minimize_h(model, i)
    log_tilde = _log_laplace_tilde(model, point)
    chol = model.spec.mvn.chol
    method = "gauss-hermite"
    if H is not None and float(H) ** model.n <= MAX_TENSOR_NODES:
        z_std, log_w = _correction_nodes(model, H)
    else:
        if H is not None and stream is None:
            raise TensorTooLarge(f"{H}^{model.n} nodes exceed the budget and no stream given")
        stream = stream or RngStream(0, 0)
        z_std = stream.generator().standard_normal((mc_samples, model.n))
        log_w = np.full(mc_samples, -math.log(mc_samples))
        method = "monte-carlo"
    zero = np.zeros(model.n)
    log_v0 = float(_log_v(model, i, point.x_star, zero[None, :])[0])
    log_terms = _log_v(model, i, point.x_star, z_std @ chol.T) - log_v0 + log_w
    log_expect = float(special.logsumexp(log_terms))
    # log L_hat = -h* - log v(0) + log E[v]; the sqrt|Sigma H| factors cancel
    log_hat = -point.h_value + log_expect
    return LaplaceResult(i=i, l_hat=math.exp(log_hat), l_tilde=math.exp(log_tilde),
                         correction=math.exp(log_hat - log_tilde), method=method)


@dataclass(frozen=True, eq=False)
class TiltedQuadrature:
    """Nodes s_j and normalised weights w_j with sum_j w_j g(s_j) ~ E[g(S_theta)]."""
    s: np.ndarray
    weights: np.ndarray
    laplace0: float

    def expect(self, values) -> np.ndarray:
        return np.asarray(values) @ self.weights


def tilted_quadrature(model: TiltedModel, H: int) -> TiltedQuadrature:
    """Tensor Gauss-Hermite rule for the tilted law of S.

    The grid is centred at the i = 0 Laplace point and scaled by the Cholesky
    factor, so ``laplace0`` equals ``laplace_hat(model, 0, H)``. Integrating
    a polynomial in S against this rule avoids the cancellation that the
    monomial expansion suffers at high degree.
    """
    point = minimize_h(model, 0)
    z_std, log_w = _correction_nodes(model, H)
    shift = z_std @ model.spec.mvn.chol.T
    prec_x = model.spec.mvn.precision @ point.x_star
    log_ratio = -0.5 * point.x_star @ prec_x - shift @ prec_x
    s = np.exp(model.spec.mu + point.x_star + shift).sum(axis=1)
    log_terms = log_w + log_ratio - model.theta * s
    log_l0 = float(special.logsumexp(log_terms))
    weights = np.exp(log_terms - log_l0)
    # nodes whose weight underflows carry polynomial values that may overflow
    keep = weights > 0
    return TiltedQuadrature(s=s[keep], weights=weights[keep], laplace0=math.exp(log_l0))


def direct_order(n: int, H: int | None = None) -> int:
    """Gauss-Hermite order for direct integration: three times the default, within budget."""
    base = H or default_order(n) or 8
    cap = int(math.floor(MAX_TENSOR_NODES ** (1.0 / n) + 1e-9))
    return max(1, min(3 * base, GH_MAX_ORDER, cap))


def laplace_hat(model: TiltedModel, i: int, H: int | None = None,
                stream: RngStream | None = None) -> float:
    return laplace_estimate(model, i, H, stream).l_hat


def tilted_moments(model: TiltedModel, i: int, H: int | None = None,
                   stream: RngStream | None = None) -> float:
    """E[S_theta^i] = L_i(theta) / L_0(theta)."""
    if i == 0:
        return 1.0
    return laplace_hat(model, i, H, stream) / laplace_hat(model, 0, H, stream)


def default_order(n: int) -> int | None:
    """Gauss-Hermite order by dimension; None means Monte Carlo."""
    return {1: 64, 2: 64, 3: 32, 4: 16}.get(n)


def laplace_transform_mc(spec: SlnSpec, theta: float, i: int, count: int,
                         stream: RngStream) -> tuple[float, float]:
    """Plain Monte Carlo estimate of L_i(theta) and its standard error."""
    s = np.exp(mvn.sample(spec.mvn, count, stream)).sum(axis=1)
    vals = s**i * np.exp(-theta * s)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(count))
