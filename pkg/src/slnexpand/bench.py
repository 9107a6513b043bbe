"""Test-case registry, the L2 error metric and benchmark tables."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

import numpy as np
from scipy import integrate

from . import baselines, expand, sln, tilt
from .config import ESTIMATORS, RunConfig, parse_config
from .errors import UnsupportedCopula, ValidationError
from .mvn import RngStream
from .orthopoly import Gamma, Lognormal, Normal
from .sln import DensityGrid, SlnSpec

log = logging.getLogger(__name__)

GRID_POINTS = 2001
GRID_START_FRACTION = 1.0 / 4000
TEST_NAMES = tuple(f"test{i}" for i in range(1, 7))
ORACLE_STREAM_OFFSET = 1000
LAPLACE_STREAM_OFFSET = 2000
CSV_HEADER = ("test", "estimator", "l2_error", "runtime_ms", "seed")


# -- registry ----------------------------------------------------------------

@dataclass(frozen=True)
class TestCase:
    name: str
    index: int
    spec: SlnSpec
    K: dict = field(default_factory=dict)
    normal_reference: Normal | None = None
    gamma_reference: Gamma | None = None
    paper_l2: dict = field(default_factory=dict)
    estimators: tuple[str, ...] = ESTIMATORS
    oracle: str | None = None
    theta: float = expand.DEFAULT_THETA
    R: int = expand.DEFAULT_R
    H: int | None = None

    __test__ = False  # not a pytest class

    @classmethod
    def from_config(cls, config: RunConfig, index: int = 0) -> "TestCase":
        return cls(name=config.name, index=index, spec=config.spec, K=dict(config.K),
                   normal_reference=config.normal_reference,
                   gamma_reference=config.gamma_reference, paper_l2=dict(config.paper_l2),
                   estimators=config.estimators, oracle=config.oracle, theta=config.theta,
                   R=config.R, H=config.H)

    def k_for(self, estimator: str) -> int:
        return self.K.get(estimator, self.K.get("default", expand.DEFAULT_K))

    @property
    def upper(self) -> float:
        return upper_limit(self.spec)


def case_text(name: str) -> str:
    cases = resources.files("slnexpand").joinpath("cases")
    return cases.joinpath(f"{name}.cfg").read_text("utf-8")


@lru_cache(maxsize=None)
def get_case(name: str | int) -> TestCase:
    """Registry lookup by ``'test3'``, ``'3'`` or ``3``."""
    key = str(name)
    if not key.startswith("test"):
        key = f"test{key}"
    if key not in TEST_NAMES:
        raise ValidationError(f"unknown test case {name!r}; choose from {TEST_NAMES}")
    return TestCase.from_config(parse_config(case_text(key)), index=TEST_NAMES.index(key) + 1)


def registry() -> dict[str, TestCase]:
    return {name: get_case(name) for name in TEST_NAMES}


# -- metric ------------------------------------------------------------------

def upper_limit(spec: SlnSpec) -> float:
    """E[S]; under a copula the marginal means still add up."""
    return float(np.sum(np.exp(spec.mu + 0.5 * np.diag(spec.sigma))))


def metric_grid(upper: float) -> np.ndarray:
    if not upper > 0:
        raise ValidationError("upper limit must be positive")
    return np.linspace(upper * GRID_START_FRACTION, upper, GRID_POINTS)


def l2_error(estimate, oracle, upper: float) -> float:
    """sqrt(int_0^upper (estimate - oracle)^2) by Simpson on the metric grid.

    ``oracle`` is a DensityGrid laid out on ``metric_grid(upper)`` or a
    callable density.
    """
    xs = metric_grid(upper)
    if isinstance(oracle, DensityGrid):
        if oracle.xs.shape != xs.shape or not np.allclose(oracle.xs, xs, rtol=1e-14, atol=0):
            raise ValidationError("oracle grid does not match the metric grid")
        ref = oracle.values
    else:
        ref = np.asarray(oracle(xs), dtype=float)
    vals = estimate.values if isinstance(estimate, DensityGrid) else estimate(xs)
    diff = np.asarray(vals, dtype=float) - ref
    return float(math.sqrt(max(integrate.simpson(diff * diff, x=xs), 0.0)))


@lru_cache(maxsize=16)
def _oracle_cached(spec: SlnSpec, method: str | None, seed: int, stream_index: int,
                   upper: float) -> DensityGrid:
    stream = RngStream(seed, stream_index) if method == "kde" else None
    return sln.oracle_density(spec, metric_grid(upper), method=method, stream=stream)


def case_oracle(case: TestCase, seed: int = 0) -> DensityGrid:
    """Oracle on the metric grid; the KDE oracle draws from its own substream."""
    method = case.oracle or sln.default_oracle_method(case.spec)
    if method != "kde":
        seed = 0
    return _oracle_cached(case.spec, method, seed, ORACLE_STREAM_OFFSET + case.index, case.upper)


# -- runs --------------------------------------------------------------------

@dataclass(frozen=True)
class BenchRow:
    test: str
    estimator: str
    l2_error: float
    runtime_ms: float | None
    seed: int

    def __post_init__(self):
        if not self.l2_error >= 0:
            raise ValidationError("l2_error must be non-negative")

    def to_csv_fields(self) -> list[str]:
        runtime = "" if self.runtime_ms is None else repr(float(self.runtime_ms))
        return [self.test, self.estimator, repr(float(self.l2_error)), runtime, str(self.seed)]


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow(row.to_csv_fields())
    return buf.getvalue()


def rows_from_csv(text: str) -> list[BenchRow]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != CSV_HEADER:
        raise ValidationError(f"unexpected header {header}")
    return [BenchRow(t, e, float(l2), float(rt) if rt else None, int(sd))
            for t, e, l2, rt, sd in reader]


def shared_samples(case: TestCase, seed: int) -> np.ndarray:
    """The common R x n table of log components every MC estimator shares."""
    return sln.sample_log_components(case.spec, case.R, RngStream(seed, case.index))


def build_estimator(case: TestCase, estimator: str, seed: int, log_components=None,
                    clip_negative: bool = False):
    """Density evaluator for ``estimator`` on ``case``, fed by the shared table."""
    spec = case.spec
    if log_components is None and estimator in ("cond", "normal", "gamma"):
        log_components = shared_samples(case, seed)
    if estimator == "fw":
        if not spec.is_gaussian:
            raise UnsupportedCopula("Fenton-Wilkinson needs the Gaussian copula")
        return baselines.fenton_wilkinson(spec)
    if estimator == "cond":
        return baselines.conditional_mc(spec, log_components=log_components)
    sums = np.exp(log_components).sum(axis=1)
    if estimator == "normal":
        return expand.fhat_normal(spec, case.k_for("normal"), samples=sums,
                                  reference=case.normal_reference, clip_negative=clip_negative)
    if estimator == "gamma":
        stream = RngStream(seed, LAPLACE_STREAM_OFFSET + case.index)
        H = case.H
        if H is None and spec.is_gaussian:
            H = tilt.default_order(spec.n)
        return expand.fhat_gamma(spec, case.k_for("gamma"), case.theta, case.gamma_reference,
                                 H, stream, samples=sums, clip_negative=clip_negative)
    raise ValidationError(f"unknown estimator {estimator!r}")


def run_test(case: TestCase, estimators=None, seed: int = 0, *, timing: bool = False,
             oracle: DensityGrid | None = None) -> list[BenchRow]:
    """One row per estimator, all fed by one sample table (common random numbers).

    Rows depend only on (case, estimator, seed), so reordering estimators
    changes nothing. ``runtime_ms`` is filled only when ``timing`` is set,
    keeping the default output byte-stable.
    """
    estimators = tuple(estimators or case.estimators)
    for est in estimators:
        if est not in ESTIMATORS:
            raise ValidationError(f"unknown estimator {est!r}")
        if est in ("fw", "cond") and not case.spec.is_gaussian:
            raise UnsupportedCopula(f"{est} needs the Gaussian copula")
    oracle = oracle or case_oracle(case, seed)
    table = shared_samples(case, seed) if set(estimators) - {"fw"} else None
    rows = []
    for est in estimators:
        t0 = time.perf_counter()
        density = build_estimator(case, est, seed, table)
        err = l2_error(density, oracle, case.upper)
        runtime = 1e3 * (time.perf_counter() - t0) if timing else None
        rows.append(BenchRow(case.name, est, err, runtime, seed))
    return rows


def convergence_study(spec: SlnSpec, estimator: str, Ks, seed: int = 0, *,
                      R: int = expand.DEFAULT_R, oracle: DensityGrid | None = None,
                      theta: float = expand.DEFAULT_THETA) -> list[tuple[int, float]]:
    """L2 error against K for ``normal`` or ``gamma``, one sample table for every K."""
    Ks = list(Ks)
    if any(b <= a for a, b in zip(Ks, Ks[1:])):
        raise ValidationError("K list must be strictly ascending")
    case = TestCase(name="study", index=0, spec=spec, R=R, theta=theta)
    oracle = oracle or case_oracle(case, seed)
    table = shared_samples(case, seed)
    out = []
    for K in Ks:
        kcase = TestCase(name="study", index=0, spec=spec, K={estimator: K}, R=R, theta=theta)
        density = build_estimator(kcase, estimator, seed, table)
        out.append((K, l2_error(density, oracle, case.upper)))
    return out


def lognormal_demo_study(target: Lognormal, reference: Lognormal, Ks,
                         lo: float = 0.1, hi: float = 5.0, points: int = 2001):
    """For each K: L2 to the target density and to the previous K's expansion on (lo, hi)."""
    xs = np.linspace(lo, hi, points)
    truth = sln._lognormal_pdf(xs, target.mu, target.sigma2)
    out, prev = [], None
    for K in Ks:
        vals = expand.fhat_lognormal_demo(target, reference, K)(xs)
        to_target = math.sqrt(integrate.simpson((vals - truth) ** 2, x=xs))
        step = None if prev is None else math.sqrt(integrate.simpson((vals - prev) ** 2, x=xs))
        out.append((K, to_target, step, float(np.max(np.abs(vals - truth)))))
        prev = vals
    return out
