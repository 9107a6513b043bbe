"""Comparison estimators: Fenton-Wilkinson and conditional Monte Carlo."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import mvn, sln
from .errors import UnsupportedCopula, ValidationError
from .mvn import RngStream
from .sln import SlnSpec, _lognormal_pdf

EVAL_CHUNK = 2**22


@dataclass(frozen=True)
class FwFit:
    mu_hat: float
    sigma2_hat: float

    def __call__(self, x):
        return _lognormal_pdf(x, self.mu_hat, self.sigma2_hat)

    def moments(self) -> tuple[float, float]:
        m1 = math.exp(self.mu_hat + 0.5 * self.sigma2_hat)
        var = math.exp(2 * self.mu_hat + self.sigma2_hat) * math.expm1(self.sigma2_hat)
        return m1, var


def fenton_wilkinson(spec: SlnSpec) -> FwFit:
    """Single lognormal with the first two moments of S."""
    m1 = sln.sln_moment(spec, 1)
    m2 = sln.sln_moment(spec, 2)
    s2 = math.log(m2 / (m1 * m1))
    return FwFit(mu_hat=math.log(m1) - 0.5 * s2, sigma2_hat=s2)


class ConditionalMcDensity:
    """f(x) ~ mean_r f_{e^{X_i} | X_-i = x_-i,r}(x - T_r), T_r = sum_{j != i} e^{x_j,r}.

    Every term is a shifted lognormal density, so the estimator is a proper
    density for any sample table.
    """

    def __init__(self, spec: SlnSpec, log_components: np.ndarray, index: int):
        if not spec.is_gaussian:
            raise UnsupportedCopula("conditional Monte Carlo requires the Gaussian copula")
        x = np.asarray(log_components, dtype=float)
        if x.ndim != 2 or x.shape[1] != spec.n:
            raise ValidationError("log_components must be an R x n matrix")
        beta, var = mvn.conditional_params(spec.mvn, index)
        rest = [j for j in range(spec.n) if j != index]
        self.index = index
        self.cond_var = var
        self.shift = np.exp(x[:, rest]).sum(axis=1)
        self.cond_mean = spec.mu[index] + (x[:, rest] - spec.mu[rest]) @ beta
        order = np.argsort(self.shift, kind="stable")
        self.shift = self.shift[order]
        self.cond_mean = self.cond_mean[order]
        self.R = x.shape[0]

    def __call__(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        flat = xs.ravel()
        out = np.zeros(flat.size)
        norm = 1.0 / math.sqrt(2 * math.pi * self.cond_var)
        step = max(1, EVAL_CHUNK // max(self.R, 1))
        for start in range(0, flat.size, step):
            block = flat[start: start + step]
            # shifts are sorted: only the first `stop` samples satisfy T_r < x
            stop = np.searchsorted(self.shift, block, side="left")
            top = int(stop.max(initial=0))
            if top == 0:
                continue
            diff = block[:, None] - self.shift[None, :top]
            valid = diff > 0
            safe = np.where(valid, diff, 1.0)
            z = np.log(safe) - self.cond_mean[None, :top]
            dens = np.where(valid, norm * np.exp(-0.5 * z * z / self.cond_var) / safe, 0.0)
            out[start: start + step] = dens.sum(axis=1) / self.R
        return out.reshape(xs.shape)


def default_condition_index(spec: SlnSpec) -> int:
    return int(np.argmax(np.diag(spec.sigma)))


def conditional_mc(spec: SlnSpec, index: int | None = None, R: int = 10**5,
                   stream: RngStream | None = None, *, log_components=None) -> ConditionalMcDensity:
    """Conditional Monte Carlo density estimator.

    Conditions on every component except ``index`` (default: the one with the
    largest variance). ``log_components`` reuses an existing sample table.
    """
    if spec.n < 2:
        raise ValidationError("conditional Monte Carlo needs n >= 2")
    if index is None:
        index = default_condition_index(spec)
    if log_components is None:
        if stream is None:
            raise ValidationError("pass log_components or an RngStream")
        log_components = sln.sample_log_components(spec, R, stream)
    return ConditionalMcDensity(spec, log_components, index)
