"""Flat ``key = value`` run configuration shared by the CLI and the test registry.

Example::

    # Test 1
    mu = 0, 0
    sigma_diag = 0.5, 1
    rho = -0.2
    K_normal = 32
    K_gamma = 16

``sigma`` may instead give full matrix rows separated by ``;``. A single
value in ``mu`` or ``sigma_diag`` is broadcast to ``n`` (or to the length of
the other vector). Reference pairs are
``mean, standard deviation`` for the normal and ``shape, scale`` for the
gamma. Blank lines and ``#`` comments are ignored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, ValidationError
from .mvn import MvnSpec
from .orthopoly import K_MAX, Gamma, Normal
from .sln import Clayton, Gaussian, SlnSpec

ESTIMATORS = ("fw", "cond", "normal", "gamma")
DEFAULT_K = 16
DEFAULT_R = 10**5
DEFAULT_THETA = 1.0

_KNOWN = {
    "name", "n", "mu", "sigma", "sigma_diag", "rho", "copula", "copula_theta",
    "estimators", "k", "k_normal", "k_gamma", "r", "theta", "h", "seed", "output",
    "clip_negative", "normal_reference", "gamma_reference", "caption_normal",
    "caption_gamma", "oracle", "paper_fw", "paper_cond", "paper_normal", "paper_gamma",
}


@dataclass(frozen=True)
class RunConfig:
    spec: SlnSpec
    name: str = "custom"
    estimators: tuple[str, ...] = ESTIMATORS
    K: dict = field(default_factory=dict)
    R: int = DEFAULT_R
    theta: float = DEFAULT_THETA
    H: int | None = None
    seed: int | None = None
    output: str | None = None
    clip_negative: bool = False
    normal_reference: Normal | None = None
    gamma_reference: Gamma | None = None
    caption_normal: Normal | None = None
    caption_gamma: Gamma | None = None
    oracle: str | None = None
    paper_l2: dict = field(default_factory=dict)

    def k_for(self, estimator: str) -> int:
        return self.K.get(estimator, self.K.get("default", DEFAULT_K))


def _floats(value: str, line: int, key: str) -> list[float]:
    try:
        return [float(tok) for tok in value.replace(",", " ").split()]
    except ValueError:
        raise ParseError(f"{key}: expected numbers, got {value!r}", line) from None


def _scalar(value: str, line: int, key: str, kind=float):
    try:
        return kind(value)
    except ValueError:
        raise ParseError(f"{key}: expected {kind.__name__}, got {value!r}", line) from None


def _bool(value: str, line: int, key: str) -> bool:
    low = value.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ParseError(f"{key}: expected a boolean, got {value!r}", line)


def _pair(value: str, line: int, key: str) -> tuple[float, float]:
    vals = _floats(value, line, key)
    if len(vals) != 2:
        raise ParseError(f"{key}: expected two numbers", line)
    return vals[0], vals[1]


def _tokenize(text: str) -> dict[str, tuple[str, int]]:
    entries: dict[str, tuple[str, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ParseError(f"expected 'key = value', got {body!r}", lineno)
        key, value = (part.strip() for part in body.split("=", 1))
        key = key.lower()
        if key not in _KNOWN:
            raise ParseError(f"unknown key {key!r}", lineno)
        if key in entries:
            raise ParseError(f"duplicate key {key!r}", lineno)
        if not value:
            raise ParseError(f"empty value for {key!r}", lineno)
        entries[key] = (value, lineno)
    return entries


def _broadcast(vals: list[float], n: int | None, key: str, line: int) -> list[float]:
    if n is not None and len(vals) == 1:
        return vals * n
    if n is not None and len(vals) != n:
        raise ValidationError(f"{key} has {len(vals)} entries but n = {n} (line {line})")
    return vals


def _build_spec(e: dict) -> SlnSpec:
    n = _scalar(*e["n"], "n", int) if "n" in e else None
    if n is not None and n < 1:
        raise ValidationError(f"n must be >= 1 (line {e['n'][1]})")
    if "mu" not in e:
        raise ValidationError("missing required key 'mu'")
    raw_mu = _floats(*e["mu"], "mu")
    if n is None:
        n = len(raw_mu)
        if "sigma_diag" in e:
            n = max(n, len(_floats(*e["sigma_diag"], "sigma_diag")))
    mu = _broadcast(raw_mu, n, "mu", e["mu"][1])

    copula = Gaussian()
    if "copula" in e:
        kind = e["copula"][0].lower()
        if kind == "clayton":
            if "copula_theta" not in e:
                raise ValidationError("clayton copula needs copula_theta")
            copula = Clayton(_scalar(*e["copula_theta"], "copula_theta"))
        elif kind != "gaussian":
            raise ValidationError(f"unsupported copula {kind!r} (line {e['copula'][1]})")

    if "sigma" in e:
        if "sigma_diag" in e or "rho" in e:
            raise ValidationError("give either sigma or sigma_diag/rho, not both")
        value, line = e["sigma"]
        rows = [_floats(row, line, "sigma") for row in value.split(";")]
        if len(rows) != n or any(len(row) != n for row in rows):
            raise ValidationError(f"sigma must be {n}x{n} (line {line})")
        return SlnSpec(MvnSpec(np.array(mu), np.array(rows)), copula)
    if "sigma_diag" not in e:
        raise ValidationError("missing sigma or sigma_diag")
    diag = _broadcast(_floats(*e["sigma_diag"], "sigma_diag"), n, "sigma_diag", e["sigma_diag"][1])
    if len(diag) != n:
        raise ValidationError(f"sigma_diag has {len(diag)} entries but mu has {n}")
    rho = _scalar(*e["rho"], "rho") if "rho" in e else 0.0
    return SlnSpec.from_diag_rho(mu, diag, rho, copula)


def parse_config(text: str) -> RunConfig:
    """Parse the flat config format; explicit values win over defaults.

    Raises ParseError (with the line number) for malformed text and
    ValidationError for well-formed input that violates a model invariant.
    """
    e = _tokenize(text)
    spec = _build_spec(e)
    kw: dict = {"spec": spec}
    if "name" in e:
        kw["name"] = e["name"][0]
    if "estimators" in e:
        names = tuple(tok.strip().lower() for tok in e["estimators"][0].split(",") if tok.strip())
        bad = [x for x in names if x not in ESTIMATORS]
        if bad:
            raise ValidationError(f"unknown estimators {bad} (line {e['estimators'][1]})")
        kw["estimators"] = names
    K = {}
    for key, est in (("k", "default"), ("k_normal", "normal"), ("k_gamma", "gamma")):
        if key in e:
            value = _scalar(*e[key], key, int)
            if not 0 <= value <= K_MAX:
                raise ValidationError(f"{key} must lie in [0, {K_MAX}] (line {e[key][1]})")
            K[est] = value
    kw["K"] = K
    if "r" in e:
        kw["R"] = _scalar(*e["r"], "R", int)
        if kw["R"] < 1:
            raise ValidationError("R must be positive")
    if "theta" in e:
        kw["theta"] = _scalar(*e["theta"], "theta")
        if not kw["theta"] > 0:
            raise ValidationError("theta must be positive")
    if "h" in e:
        kw["H"] = _scalar(*e["h"], "H", int)
    if "seed" in e:
        kw["seed"] = _scalar(*e["seed"], "seed", int)
    if "output" in e:
        kw["output"] = e["output"][0]
    if "clip_negative" in e:
        kw["clip_negative"] = _bool(*e["clip_negative"], "clip_negative")
    if "oracle" in e:
        kw["oracle"] = e["oracle"][0].lower()
    for key in ("normal_reference", "caption_normal"):
        if key in e:
            m, sd = _pair(*e[key], key)
            kw[key] = Normal(m, sd * sd)
    for key in ("gamma_reference", "caption_gamma"):
        if key in e:
            kw[key] = Gamma(*_pair(*e[key], key))
    paper = {}
    for est in ESTIMATORS:
        key = f"paper_{est}"
        if key in e:
            paper[est] = _scalar(*e[key], key)
    kw["paper_l2"] = paper
    if not all(math.isfinite(v) for v in spec.mu):
        raise ValidationError("mu must be finite")
    return RunConfig(**kw)


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
