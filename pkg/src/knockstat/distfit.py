"""Lognormal and two-component mixed-lognormal models.

All fitting happens on ``ln(KI)``: a mixed lognormal in KI space is a
two-component Gaussian mixture in log space, and the KI-space
log-likelihood differs only by the Jacobian term ``-sum(ln x)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from scipy.special import ndtr

from knockstat import _backend
from knockstat.errors import DegeneracyError, DomainError, InsufficientDataError, KnockError

SQRT_2PI = math.sqrt(2.0 * math.pi)
LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
# Weights this close to 1 are sampled as a single component.
SINGLE_COMPONENT_EPS = 1e-12


@dataclass(frozen=True)
class LognormalParams:
    """Lognormal model: ``ln X ~ Normal(mu, sigma**2)``."""

    mu: float
    sigma: float

    def __post_init__(self):
        if not (math.isfinite(self.mu) and math.isfinite(self.sigma)) or self.sigma <= 0:
            raise KnockError(f"invalid lognormal parameters mu={self.mu}, sigma={self.sigma}")

    def pdf(self, x):
        return lognormal_pdf(x, self)

    def cdf(self, x):
        return lognormal_cdf(x, self)

    def cdf_of_log(self, y: np.ndarray) -> np.ndarray:
        """CDF evaluated at ``x = exp(y)``, without leaving log space."""
        return ndtr((y - self.mu) / self.sigma)

    def to_dict(self) -> dict:
        return {"family": "lognormal", "mu1": self.mu, "sigma1": self.sigma}


@dataclass(frozen=True)
class MixtureParams:
    """Two-component mixed lognormal with weight ``a`` on ``comp1``.

    Canonical order is ``comp1.mu <= comp2.mu``; use :meth:`canonical`.
    """

    a: float
    comp1: LognormalParams
    comp2: LognormalParams

    def __post_init__(self):
        if not (0.0 < self.a < 1.0):
            raise KnockError(f"mixture weight must lie in (0, 1), got {self.a}")

    @classmethod
    def from_values(cls, a, mu1, sigma1, mu2, sigma2) -> "MixtureParams":
        return cls(float(a), LognormalParams(float(mu1), float(sigma1)),
                   LognormalParams(float(mu2), float(sigma2)))

    def canonical(self) -> "MixtureParams":
        if self.comp1.mu <= self.comp2.mu:
            return self
        return MixtureParams(1.0 - self.a, self.comp2, self.comp1)

    def values(self) -> tuple[float, float, float, float, float]:
        return (self.a, self.comp1.mu, self.comp1.sigma, self.comp2.mu, self.comp2.sigma)

    def pdf(self, x):
        return mixture_pdf(x, self)

    def cdf(self, x):
        return mixture_cdf(x, self)

    def cdf_of_log(self, y: np.ndarray) -> np.ndarray:
        return (self.a * ndtr((y - self.comp1.mu) / self.comp1.sigma)
                + (1.0 - self.a) * ndtr((y - self.comp2.mu) / self.comp2.sigma))

    def log_mean(self) -> float:
        """Mean of ``ln X``."""
        return self.a * self.comp1.mu + (1.0 - self.a) * self.comp2.mu

    def to_dict(self) -> dict:
        return {"family": "mixture", "a": self.a, "mu1": self.comp1.mu, "sigma1": self.comp1.sigma,
                "mu2": self.comp2.mu, "sigma2": self.comp2.sigma}


Model = Union[LognormalParams, MixtureParams]


@dataclass(frozen=True)
class EMConfig:
    max_iters: int = 500
    rel_tol: float = 1e-8
    restarts: int = 5
    variance_floor: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1 or self.rel_tol <= 0 or self.restarts < 1 or self.variance_floor <= 0:
            raise KnockError(f"invalid EM configuration {self}")


@dataclass
class EMResult:
    params: MixtureParams
    loglik: float
    iterations: int
    # per-iteration KI-space log-likelihood of the winning restart
    history: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)
    collapsed_restarts: int = 0


def _as_positive(x, what="x") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.size and not np.all(arr > 0):
        raise DomainError(f"{what} must be > 0")
    return arr


def _scalar_or_array(out: np.ndarray, x):
    return float(out) if np.ndim(x) == 0 else out


def _log_normal_density(y, mu, sigma):
    z = (y - mu) / sigma
    return -0.5 * z * z - math.log(sigma) - LOG_SQRT_2PI


def lognormal_pdf(x, p: LognormalParams):
    xs = _as_positive(x)
    ly = np.log(xs)
    z = (ly - p.mu) / p.sigma
    out = np.exp(-0.5 * z * z) / (xs * p.sigma * SQRT_2PI)
    return _scalar_or_array(out, x)


def lognormal_cdf(x, p: LognormalParams):
    xs = _as_positive(x)
    return _scalar_or_array(ndtr((np.log(xs) - p.mu) / p.sigma), x)


def mixture_pdf(x, p: MixtureParams):
    out = p.a * np.asarray(lognormal_pdf(x, p.comp1)) + (1.0 - p.a) * np.asarray(lognormal_pdf(x, p.comp2))
    return _scalar_or_array(out, x)


def mixture_cdf(x, p: MixtureParams):
    out = p.a * np.asarray(lognormal_cdf(x, p.comp1)) + (1.0 - p.a) * np.asarray(lognormal_cdf(x, p.comp2))
    return _scalar_or_array(out, x)


def log_pdf(x, model: Model) -> np.ndarray:
    """Elementwise ln f(x) computed in log space."""
    xs = _as_positive(x)
    ly = np.log(xs)
    if isinstance(model, LognormalParams):
        return _log_normal_density(ly, model.mu, model.sigma) - ly
    l1 = math.log(model.a) + _log_normal_density(ly, model.comp1.mu, model.comp1.sigma)
    l2 = math.log1p(-model.a) + _log_normal_density(ly, model.comp2.mu, model.comp2.sigma)
    return np.logaddexp(l1, l2) - ly


def log_likelihood(data, model: Model) -> float:
    """Sum of ln f(x_i) under ``model``."""
    return float(np.sum(log_pdf(_values(data), model)))


def _values(data) -> np.ndarray:
    # KIDataset or any array-like of KI values
    ki = getattr(data, "ki", data)
    return np.asarray(ki, dtype=np.float64).ravel()


def lognormal_mle(data) -> LognormalParams:
    x = _values(data)
    if x.size < 2:
        raise InsufficientDataError("lognormal MLE needs at least 2 samples")
    y = np.log(_as_positive(x, "KI"))
    mu = float(np.mean(y))
    var = float(np.mean((y - mu) ** 2))
    if not var > 0.0:
        raise DegeneracyError("all samples identical; lognormal sigma would be 0")
    return LognormalParams(mu, math.sqrt(var))


def _initial_points(y: np.ndarray, cfg: EMConfig) -> list[tuple[float, ...]]:
    ys = np.sort(y)
    half = ys.size // 2
    lo, hi = ys[:half], ys[half:]
    floor = cfg.variance_floor
    base = (0.5, float(lo.mean()), max(float(lo.var()), floor),
            float(hi.mean()), max(float(hi.var()), floor))
    starts = [base]
    spread = float(ys.std())
    for r in range(1, cfg.restarts):
        rng = np.random.default_rng([cfg.seed, r])
        dmu = rng.normal(0.0, 0.5 * spread, 2)
        dls = rng.normal(0.0, 0.25, 2)
        starts.append((0.5, base[1] + dmu[0], max(base[2] * math.exp(2 * dls[0]), floor),
                       base[3] + dmu[1], max(base[4] * math.exp(2 * dls[1]), floor)))
    return starts


def _collapsed(a: float) -> bool:
    return a <= 1e-6 or a >= 1.0 - 1e-6


def em_log_space(y: np.ndarray, cfg: EMConfig, record: bool = False):
    """EM for a 2-component Gaussian mixture on ``y``.

    Returns ``(a, m1, v1, m2, v2, loglik, iters, history, n_collapsed)`` for
    the best non-collapsed restart, log-likelihood in ``y`` space.
    """
    y = np.ascontiguousarray(y, dtype=np.float64)
    best = None
    collapsed = 0
    for start in _initial_points(y, cfg):
        res = _backend.em_run(y, *start, cfg.max_iters, cfg.rel_tol, cfg.variance_floor, record)
        if _collapsed(res[0]) or not math.isfinite(res[5]):
            collapsed += 1
            continue
        if best is None or res[5] > best[5]:
            best = res
    if best is None:
        raise DegeneracyError("every EM restart collapsed to a single component")
    return (*best, collapsed)


def mixture_em(data, cfg: EMConfig | None = None) -> EMResult:
    cfg = cfg or EMConfig()
    x = _values(data)
    if x.size < 10:
        raise InsufficientDataError(f"mixture EM needs at least 10 samples, got {x.size}")
    y = np.log(_as_positive(x, "KI"))
    if not np.ptp(y) > 0:
        raise DegeneracyError("all samples identical; nothing to separate")
    a, m1, v1, m2, v2, ll, iters, hist, collapsed = em_log_space(y, cfg, record=True)
    jac = float(np.sum(y))
    params = MixtureParams.from_values(a, m1, math.sqrt(v1), m2, math.sqrt(v2)).canonical()
    return EMResult(params, ll - jac, int(iters), hist - jac, collapsed)


def _draw(values: Sequence[float], n: int, rng: np.random.Generator) -> np.ndarray:
    a, m1, s1, m2, s2 = values
    u = rng.random(n)
    z = rng.standard_normal(n)
    if a >= 1.0 - SINGLE_COMPONENT_EPS:
        y = m1 + s1 * z
    else:
        y = np.where(u < a, m1 + s1 * z, m2 + s2 * z)
    return y


def sample_log_mixture(p: Model, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``ln KI`` values; shared by the KI-space samplers."""
    if n < 1:
        raise KnockError("sample size must be >= 1")
    if isinstance(p, LognormalParams):
        return _draw((1.0, p.mu, p.sigma, p.mu, p.sigma), n, rng)
    return _draw(p.values(), n, rng)


def sample_mixture(p: MixtureParams, n: int, seed, label: str = "synthetic"):
    """``n`` KI draws: a uniform picks the component, then exp(normal)."""
    from knockstat.trace import KIDataset

    rng = np.random.default_rng(seed)
    return KIDataset(label, np.exp(sample_log_mixture(p, n, rng)))


def sample_lognormal(p: LognormalParams, n: int, seed, label: str = "synthetic"):
    from knockstat.trace import KIDataset

    rng = np.random.default_rng(seed)
    return KIDataset(label, np.exp(sample_log_mixture(p, n, rng)))


def fit(data, family: str, cfg: EMConfig | None = None) -> Model:
    if family == "lognormal":
        return lognormal_mle(data)
    if family == "mixture":
        return mixture_em(data, cfg).params
    raise KnockError(f"unknown family {family!r}")


def model_from_dict(d: dict) -> Model:
    try:
        family = d["family"]
        if family == "lognormal":
            return LognormalParams(float(d["mu1"]), float(d["sigma1"]))
        if family == "mixture":
            return MixtureParams.from_values(d["a"], d["mu1"], d["sigma1"], d["mu2"], d["sigma2"])
    except (KeyError, TypeError, ValueError) as exc:
        raise KnockError(f"malformed model record: {exc}") from exc
    raise KnockError(f"unknown family {family!r}")


def save_model(model: Model, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2) + "\n")


def load_model(path) -> Model:
    return model_from_dict(json.loads(Path(path).read_text()))
