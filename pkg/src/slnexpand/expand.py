"""Orthogonal-polynomial density estimators for lognormal sums.

``fhat_normal`` expands the density of ln S against a normal reference and
maps back; ``fhat_gamma`` expands the exponentially tilted density against a
gamma reference and undoes the tilt; ``fhat_lognormal_demo`` expands a single
lognormal against a lognormal reference to exhibit convergence to the wrong
limit.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.integrate import simpson

from . import sln, tilt
from .errors import (DomainError, IntegrabilityViolated, NumericalBlowup,
                     ParameterConflict, UnsupportedCopula, ValidationError)
from .mvn import RngStream
from .orthopoly import (Gamma, Lognormal, Normal, OrthonormalBasis,
                        hermite_basis, laguerre_basis, lognormal_basis)
from .sln import SlnSpec
from .tilt import TiltedModel

log = logging.getLogger(__name__)

DEFAULT_K = 16
DEFAULT_R = 10**5
DEFAULT_THETA = 1.0
BLOWUP_LIMIT = 1e6
# sum_j |q_kj| E[S_theta^j] beyond which the monomial route loses all digits
CANCELLATION_LIMIT = 1e8
SIGMA_INFLATION = 1.05


@dataclass(frozen=True)
class LogTransform:
    mu: float
    sigma: float


@dataclass(frozen=True)
class Tilted:
    theta: float
    laplace0: float


@dataclass(frozen=True)
class Direct:
    pass


Transform = Union[LogTransform, Tilted, Direct]


@dataclass(eq=False)
class ExpansionEstimate:
    """Reference basis plus coefficients, callable as a density on (0, inf)."""

    basis: OrthonormalBasis
    coeffs: np.ndarray
    transform: Transform
    meta: dict = field(default_factory=dict)
    clip_negative: bool = False

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.size - 1 > self.basis.degree:
            raise ValidationError("more coefficients than basis degrees")

    @property
    def K(self) -> int:
        return self.coeffs.size - 1

    def series(self, t) -> np.ndarray:
        """sum_k a_k Q_k(t) in the basis' own variable."""
        return self.coeffs @ self.basis(t, self.K)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        tr = self.transform
        if isinstance(tr, LogTransform):
            if np.any(x <= 0):
                raise DomainError("the log-transformed estimator is defined for x > 0 only")
            w = (np.log(x) - tr.mu) / tr.sigma
            phi = np.exp(-0.5 * w * w) / math.sqrt(2 * math.pi)
            out = phi * self.series(w) / (tr.sigma * x)
        elif isinstance(tr, Tilted):
            ref = self.basis.reference
            out = np.zeros_like(x)
            pos = x > 0
            xp = x[pos]
            # e^{theta x} L(theta) f_nu(x), combined in logs
            log_front = tr.theta * xp + math.log(tr.laplace0) + ref.logpdf(xp)
            out[pos] = np.exp(log_front) * self.series(xp)
        else:
            out = self.basis.reference.pdf(x) * self.series(x)
        if self.clip_negative:
            out = np.maximum(out, 0.0)
        return out


@dataclass(frozen=True)
class IntegrabilityReport:
    satisfied: bool
    lhs: float
    rhs: float
    rule: str
    advisory: bool = False


def check_integrability(reference, spec: SlnSpec | None = None,
                        theta: float | None = None) -> IntegrabilityReport:
    """Square-integrability of target/reference against the reference.

    Normal reference (log scale): ``2 sigma^2 > max_i Sigma_ii``.
    Gamma reference (tilted target): ``m > 1 / (2 theta)``.
    Non-Gaussian copulas are judged with the marginal variances and the
    report is flagged ``advisory``.
    """
    if isinstance(reference, Normal):
        if spec is None:
            raise ValidationError("normal-reference check needs the SLN spec")
        lhs, rhs = 2.0 * reference.sigma2, float(np.max(np.diag(spec.sigma)))
        return IntegrabilityReport(lhs > rhs, lhs, rhs, "NormalRef", advisory=not spec.is_gaussian)
    if isinstance(reference, Gamma):
        if theta is None or not theta > 0:
            raise ValidationError("gamma-reference check needs theta > 0")
        lhs, rhs = reference.m, 1.0 / (2.0 * theta)
        return IntegrabilityReport(lhs > rhs, lhs, rhs, "GammaRef")
    raise ValidationError(f"no integrability rule for {type(reference).__name__}")


# -- normal reference -------------------------------------------------------

def select_normal_reference(spec: SlnSpec, log_samples=None, *, oracle: bool = False,
                            repair: bool = True) -> Normal:
    """Match N(mu, sigma^2) to the mean and variance of Z = ln S.

    Moments come from ``log_samples`` (values of ln S) or, with
    ``oracle=True``, from quadrature of the reference density. If the match
    fails the integrability rule, sigma^2 is inflated to
    ``1.05 * max_i Sigma_ii / 2`` with a warning.
    """
    if oracle:
        mz, vz = log_moments_by_quadrature(spec)
    else:
        if log_samples is None:
            raise ValidationError("pass log_samples or oracle=True")
        z = np.asarray(log_samples, dtype=float)
        mz, vz = float(z.mean()), float(z.var(ddof=1))
    ref = Normal(mz, vz)
    report = check_integrability(ref, spec)
    if repair and not report.satisfied:
        new = SIGMA_INFLATION * report.rhs / 2.0
        log.warning("normal reference sigma^2=%.4g fails 2 sigma^2 > %.4g; inflating to %.4g",
                    vz, report.rhs, new)
        ref = Normal(mz, new)
    return ref


def log_moments_by_quadrature(spec: SlnSpec) -> tuple[float, float]:
    """E[ln S] and Var[ln S] by quadrature of the oracle density over ln s."""
    sd = math.sqrt(float(np.max(np.diag(spec.sigma))))
    center = math.log(sln.mean(spec))
    z = np.linspace(center - 12 * sd - 2, center + 10 * sd, 4001)
    dens = sln.oracle_density(spec, np.exp(z)).values * np.exp(z)
    mass = simpson(dens, x=z)
    mz = simpson(z * dens, x=z) / mass
    vz = simpson((z - mz) ** 2 * dens, x=z) / mass
    return float(mz), float(vz)


def estimate_coeffs_cmc(basis: OrthonormalBasis, samples, K: int) -> np.ndarray:
    """a_k = mean_r Q_k(t_r), all k from one shared sample vector."""
    if K > basis.degree:
        raise ValidationError(f"K={K} exceeds basis degree {basis.degree}")
    t = np.asarray(samples, dtype=float)
    if not np.all(np.isfinite(t)):
        raise ValidationError("samples must be finite")
    return basis(t, K).mean(axis=1)


def fhat_normal(spec: SlnSpec, K: int = DEFAULT_K, R: int = DEFAULT_R,
                stream: RngStream | None = None, *, samples=None,
                reference: Normal | None = None, clip_negative: bool = False) -> ExpansionEstimate:
    """Normal-reference expansion of ln S, mapped back to S.

    ``samples`` (values of S) override drawing ``R`` fresh ones from ``stream``.
    """
    if samples is None:
        if stream is None:
            raise ValidationError("pass samples or an RngStream")
        samples = sln.sample_sln(spec, R, stream)
    z = np.log(np.asarray(samples, dtype=float))
    ref = reference or select_normal_reference(spec, z)
    basis = hermite_basis(0.0, 1.0, K)
    w = (z - ref.mu) / ref.sigma
    coeffs = estimate_coeffs_cmc(basis, w, K)
    meta = {"estimator": "normal", "method": "cmc", "R": int(z.size), "K": K,
            "reference": (ref.mu, ref.sigma2),
            "integrability": check_integrability(ref, spec)}
    if stream is not None:
        meta["seed"] = stream.seed
    return ExpansionEstimate(basis, coeffs, LogTransform(ref.mu, ref.sigma), meta, clip_negative)


# -- gamma reference on the tilted density ----------------------------------

def select_gamma_reference(model: TiltedModel, H: int | None = None,
                           stream: RngStream | None = None, repair: bool = True) -> Gamma:
    """Gamma(r, m) matched to the mean and variance of the tilted law.

    ``m`` must lie in ``(1/(2 theta), 1/theta)``; otherwise it is replaced by
    the geometric mean of the bounds and ``r`` rescaled to keep the mean.
    """
    theta = model.theta
    lap = [tilt.laplace_hat(model, i, H, stream) for i in range(3)]
    mean = lap[1] / lap[0]
    var = lap[2] / lap[0] - mean * mean
    if not var > 0:
        raise ParameterConflict("non-positive tilted variance")
    m, r = var / mean, mean * mean / var
    lo, hi = 1.0 / (2 * theta), 1.0 / theta
    if not lo < m < hi:
        if not repair:
            raise ParameterConflict(f"matched scale m={m:.4g} outside ({lo:.4g}, {hi:.4g})")
        new_m = math.sqrt(lo * hi)
        log.warning("gamma scale m=%.4g outside (%.4g, %.4g); using m=%.4g", m, lo, hi, new_m)
        m, r = new_m, mean / new_m
    return Gamma(r, m)


def estimate_coeffs_tilted(basis: OrthonormalBasis, model: TiltedModel, K: int,
                           method: str = "laplace_moments", H: int | None = None,
                           samples=None, stream: RngStream | None = None,
                           laplace0: float | None = None) -> np.ndarray:
    """Coefficients of the tilted density against a gamma basis.

    ``sample_weighted``: untilted draws of S reweighted by e^{-theta S};
    ``laplace_moments``: tilted moments L_j / L_0 from the Laplace stack;
    ``direct_quadrature``: E[Q_k(S_theta)] on a tensor Gauss-Hermite grid
    of order ``H`` with Q_k evaluated by recurrence.
    """
    if not isinstance(basis.reference, Gamma):
        raise ValidationError("tilted coefficients need a gamma basis")
    if K > basis.degree:
        raise ValidationError(f"K={K} exceeds basis degree {basis.degree}")
    report = check_integrability(basis.reference, theta=model.theta)
    if not report.satisfied:
        raise IntegrabilityViolated(
            f"gamma scale m={report.lhs:.4g} must exceed 1/(2 theta)={report.rhs:.4g}")
    q0 = basis.coeffs[: K + 1, 0]
    if laplace0 is None:
        laplace0 = tilt.laplace_hat(model, 0, H, stream)
    if method == "sample_weighted":
        if samples is None:
            raise ValidationError("sample_weighted needs samples of S")
        s = np.asarray(samples, dtype=float)
        weights = np.exp(-model.theta * s)
        # sum_{j>=1} q_kj s^j is Q_k(s) - q_k0, evaluated by recurrence
        poly = basis(s, K) - q0[:, None]
        coeffs = q0 + (poly @ weights) / (s.size * laplace0)
    elif method == "laplace_moments":
        moments = np.array([tilt.laplace_hat(model, j, H, stream) for j in range(1, K + 1)])
        coeffs = q0.copy()
        if K:
            coeffs += basis.coeffs[: K + 1, 1: K + 1] @ moments / laplace0
    elif method == "direct_quadrature":
        if H is None:
            raise ValidationError("direct_quadrature needs a Gauss-Hermite order")
        rule = tilt.tilted_quadrature(model, H)
        coeffs = rule.expect(basis(rule.s, K))
    else:
        raise ValidationError(f"unknown coefficient method {method!r}")
    if not np.all(np.abs(coeffs) <= BLOWUP_LIMIT):
        raise NumericalBlowup(f"coefficient magnitude {np.max(np.abs(coeffs)):.3g} exceeds guard")
    return coeffs


def cancellation_factor(basis: OrthonormalBasis, model: TiltedModel, K: int,
                        H: int | None, stream: RngStream | None = None) -> float:
    """max_k sum_j |q_kj| E[S_theta^j]: error amplification of the monomial route."""
    lap = np.array([tilt.laplace_hat(model, j, H, stream) for j in range(K + 1)])
    return float(np.max(np.abs(basis.coeffs[: K + 1, : K + 1]) @ (lap / lap[0])))


def fhat_gamma(spec: SlnSpec, K: int = DEFAULT_K, theta: float = DEFAULT_THETA,
               reference: Gamma | None = None, H: int | None = None,
               stream: RngStream | None = None, *, method: str | None = None,
               samples=None, clip_negative: bool = False) -> ExpansionEstimate:
    """Gamma-reference expansion of the tilted density, tilted back.

    ``H`` defaults to 64/32/16 for n = 2/3/4; beyond that the Laplace stack
    runs on Monte Carlo and coefficients use the sample-weighted method. With
    ``method=None`` the monomial route is used unless its cancellation factor
    exceeds ``CANCELLATION_LIMIT``, in which case the coefficients come from
    direct quadrature on a finer grid.
    """
    if not spec.is_gaussian:
        if samples is None:
            raise UnsupportedCopula("non-Gaussian copulas need samples (sample_weighted method)")
        return _fhat_gamma_from_samples(spec, K, theta, reference, samples, clip_negative)
    model = TiltedModel(spec, theta)
    if H is None:
        H = tilt.default_order(spec.n)
    if H is None and stream is None:
        stream = RngStream(0, 0)
    ref = reference or select_gamma_reference(model, H, stream)
    if not theta * ref.m < 1:
        raise ParameterConflict(f"theta*m = {theta * ref.m:.4g} must be < 1")
    basis = laguerre_basis(ref.r, ref.m, K)
    if method is None:
        method = "laplace_moments" if H is not None else "sample_weighted"
        if H is not None and cancellation_factor(basis, model, K, H, stream) > CANCELLATION_LIMIT:
            method, H = "direct_quadrature", tilt.direct_order(spec.n, H)
            log.info("monomial route ill-conditioned at K=%d; direct quadrature with H=%d", K, H)
    if method == "sample_weighted" and samples is None:
        if stream is None:
            raise ValidationError("sample_weighted needs samples or a stream")
        samples = sln.sample_sln(spec, DEFAULT_R, stream.child(1))
    laplace0 = tilt.laplace_hat(model, 0, H, stream)
    coeffs = estimate_coeffs_tilted(basis, model, K, method, H, samples, stream, laplace0)
    meta = {"estimator": "gamma", "method": method, "K": K, "theta": theta, "H": H,
            "reference": (ref.r, ref.m),
            "integrability": check_integrability(ref, theta=theta)}
    if stream is not None:
        meta["seed"] = stream.seed
    return ExpansionEstimate(basis, coeffs, Tilted(theta, laplace0), meta, clip_negative)


def _fhat_gamma_from_samples(spec, K, theta, reference, samples, clip_negative):
    """Copula targets: every tilted quantity estimated by reweighting samples."""
    s = np.asarray(samples, dtype=float)
    weights = np.exp(-theta * s)
    lap = [float(np.mean(s**i * weights)) for i in range(3)]
    if reference is None:
        mean = lap[1] / lap[0]
        var = lap[2] / lap[0] - mean * mean
        m, r = var / mean, mean * mean / var
        lo, hi = 1.0 / (2 * theta), 1.0 / theta
        if not lo < m < hi:
            new_m = math.sqrt(lo * hi)
            log.warning("gamma scale m=%.4g outside (%.4g, %.4g); using m=%.4g", m, lo, hi, new_m)
            m, r = new_m, mean / new_m
        reference = Gamma(r, m)
    basis = laguerre_basis(reference.r, reference.m, K)
    report = check_integrability(reference, theta=theta)
    if not report.satisfied:
        raise IntegrabilityViolated(
            f"gamma scale m={report.lhs:.4g} must exceed 1/(2 theta)={report.rhs:.4g}")
    q0 = basis.coeffs[: K + 1, 0]
    coeffs = q0 + ((basis(s, K) - q0[:, None]) @ weights) / (s.size * lap[0])
    if not np.all(np.abs(coeffs) <= BLOWUP_LIMIT):
        raise NumericalBlowup(f"coefficient magnitude {np.max(np.abs(coeffs)):.3g} exceeds guard")
    meta = {"estimator": "gamma", "method": "sample_weighted", "K": K, "theta": theta,
            "H": None, "R": int(s.size), "reference": (reference.r, reference.m),
            "integrability": report}
    return ExpansionEstimate(basis, coeffs, Tilted(theta, lap[0]), meta, clip_negative)


# -- lognormal reference demonstration --------------------------------------

def fhat_lognormal_demo(target: Lognormal, reference: Lognormal, K: int) -> ExpansionEstimate:
    """Expand a lognormal target against a lognormal basis with exact coefficients.

    Requires ``2 * reference.sigma2 > target.sigma2``, the lognormal analogue of
    the square-integrability condition.
    """
    if not 2.0 * reference.sigma2 > target.sigma2:
        raise IntegrabilityViolated(
            f"need 2*{reference.sigma2:.4g} > {target.sigma2:.4g} for f/f_nu in L2")
    basis = lognormal_basis(reference.mu, reference.sigma2, K)
    moments = target.moments(K + 1)
    coeffs = basis.coeffs @ moments
    meta = {"estimator": "lognormal", "method": "exact-moments", "K": K,
            "reference": (reference.mu, reference.sigma2), "target": (target.mu, target.sigma2)}
    return ExpansionEstimate(basis, coeffs, Direct(), meta)
