"""Multivariate normal model: Cholesky factor, reproducible sampling, conditionals."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import linalg

from .errors import NotPositiveDefinite, ValidationError

SYMMETRY_TOL = 1e-12


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MvnSpec:
    """Mean vector and covariance matrix of N(mu, sigma).

    The covariance is symmetrized as ``(sigma + sigma.T) / 2`` when the
    asymmetry is below ``1e-12`` (relative) and rejected otherwise.
    """

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        if mu.ndim != 1 or mu.size < 1:
            raise ValidationError("mu must be a non-empty vector")
        n = mu.size
        if sigma.shape != (n, n):
            raise ValidationError(f"sigma must be {n}x{n}, got {sigma.shape}")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
            raise ValidationError("mu and sigma must be finite")
        scale = max(np.max(np.abs(sigma)), np.finfo(float).tiny)
        if np.max(np.abs(sigma - sigma.T)) > SYMMETRY_TOL * scale:
            raise ValidationError("sigma is not symmetric")
        sigma = 0.5 * (sigma + sigma.T)
        object.__setattr__(self, "mu", _frozen(mu))
        object.__setattr__(self, "sigma", _frozen(sigma))
        # fail fast on non-PD input
        self.chol  # noqa: B018

    @property
    def n(self) -> int:
        return self.mu.size

    @cached_property
    def chol(self) -> np.ndarray:
        return _frozen(cholesky(self))

    @cached_property
    def precision(self) -> np.ndarray:
        eye = np.eye(self.n)
        p = linalg.cho_solve((self.chol, True), eye)
        return _frozen(0.5 * (p + p.T))

    @cached_property
    def logdet(self) -> float:
        return float(2.0 * np.sum(np.log(np.diag(self.chol))))

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        """Log density at the rows of ``x`` (last axis has length n)."""
        d = np.asarray(x, dtype=float) - self.mu
        sol = linalg.solve_triangular(self.chol, np.moveaxis(d, -1, 0), lower=True)
        quad = np.sum(sol * sol, axis=0)
        return -0.5 * (quad + self.logdet + self.n * np.log(2 * np.pi))

    def __eq__(self, other):
        if not isinstance(other, MvnSpec):
            return NotImplemented
        return np.array_equal(self.mu, other.mu) and np.array_equal(self.sigma, other.sigma)

    def __hash__(self):
        return hash((self.mu.tobytes(), self.sigma.tobytes()))

    def __repr__(self):
        return f"MvnSpec(mu={self.mu.tolist()}, sigma={self.sigma.tolist()})"


@dataclass(frozen=True)
class RngStream:
    """Reproducible random substream keyed by ``(seed, stream_index)``.

    Backed by the counter-based Philox generator, so the draws depend only on
    the key and never on thread scheduling.
    """

    seed: int
    stream_index: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_index"):
            v = getattr(self, name)
            if not 0 <= int(v) < 2**64:
                raise ValidationError(f"{name} must fit in an unsigned 64-bit integer")

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed, self.stream_index], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, offset: int) -> "RngStream":
        return RngStream(self.seed, self.stream_index + offset)


def worker_count() -> int:
    """Worker cap from ``SLNX_THREADS`` (default: CPU count)."""
    env = os.environ.get("SLNX_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValidationError(f"SLNX_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def cholesky(spec: MvnSpec | np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of the covariance; raises ``NotPositiveDefinite``."""
    sigma = spec.sigma if isinstance(spec, MvnSpec) else np.atleast_2d(np.asarray(spec, float))
    try:
        low = linalg.cholesky(sigma, lower=True)
    except linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"covariance is not positive definite: {exc}") from None
    if np.any(np.diag(low) <= 0):
        raise NotPositiveDefinite("covariance has a non-positive pivot")
    return low


def sample(spec: MvnSpec, count: int, stream: RngStream) -> np.ndarray:
    """Draw ``count`` rows from N(mu, sigma) using the given substream."""
    if count < 1:
        raise ValidationError("count must be positive")
    z = stream.generator().standard_normal((int(count), spec.n))
    return spec.mu + z @ spec.chol.T


def sample_chunked(spec: MvnSpec, count: int, stream: RngStream, chunks: int,
                   workers: int | None = None) -> np.ndarray:
    """Sample in ``chunks`` pieces; chunk ``c`` uses ``stream_index + c``.

    The result depends on the chunk layout only, never on ``workers``.
    """
    sizes = np.full(chunks, count // chunks)
    sizes[: count % chunks] += 1
    jobs = [(int(s), stream.child(c)) for c, s in enumerate(sizes) if s > 0]
    workers = workers or worker_count()
    if workers == 1 or len(jobs) == 1:
        parts = [sample(spec, s, st) for s, st in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda job: sample(spec, *job), jobs))
    return np.concatenate(parts, axis=0)


def conditional_params(spec: MvnSpec, keep: int):
    """Regression form of X_keep | X_rest.

    Returns ``(beta, var)`` such that the conditional mean is
    ``mu[keep] + beta @ (x_rest - mu_rest)`` and the variance is ``var``.
    """
    n = spec.n
    if n < 2:
        raise ValidationError("conditioning needs n >= 2")
    if not 0 <= keep < n:
        raise ValidationError(f"index {keep} out of range for n={n}")
    rest = [j for j in range(n) if j != keep]
    s_rr = spec.sigma[np.ix_(rest, rest)]
    s_kr = spec.sigma[keep, rest]
    low = cholesky(s_rr)
    beta = linalg.cho_solve((low, True), s_kr)
    var = float(spec.sigma[keep, keep] - s_kr @ beta)
    if var <= 0:
        raise NotPositiveDefinite("conditional variance is not positive")
    return beta, var


def conditional(spec: MvnSpec, keep: int, given) -> tuple[float, float]:
    """Mean and variance of X_keep given the other coordinates.

    ``given`` holds the n-1 values of the remaining coordinates, in order.
    """
    beta, var = conditional_params(spec, keep)
    given = np.asarray(given, dtype=float)
    if given.shape != (spec.n - 1,):
        raise ValidationError(f"expected {spec.n - 1} conditioning values")
    rest = [j for j in range(spec.n) if j != keep]
    mean = float(spec.mu[keep] + beta @ (given - spec.mu[rest]))
    return mean, var
