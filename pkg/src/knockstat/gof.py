"""Goodness of fit: ECDF, ACF, R^2 / KS scores and Monte Carlo thresholds."""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Union

import numpy as np
from scipy.special import ndtri

from knockstat import _backend
from knockstat.distfit import (EMConfig, LognormalParams, MixtureParams, Model, em_log_space, fit,
                               sample_log_mixture, _values)
from knockstat.errors import DegeneracyError, KnockError

# Truth parameters used when no dataset-specific ones are supplied.  The
# lognormal scores are invariant to (mu, sigma); the mixture scores are not.
CANONICAL_LOGNORMAL = LognormalParams(0.0, 1.0)
CANONICAL_MIXTURE = MixtureParams.from_values(0.5, 0.0, 1.0, 3.0, 1.0)

THREADS_ENV = "KNOCKSTAT_THREADS"
MAX_REDRAWS = 20


@dataclass(frozen=True)
class EmpiricalCDF:
    points: np.ndarray
    steps: np.ndarray

    def __len__(self):
        return self.points.size


@dataclass(frozen=True)
class FitScores:
    r2: float
    ks: float


@dataclass(frozen=True)
class Thresholds:
    family: str
    n: int
    reps: int
    r2_5th: float
    ks_95th: float
    seed: int
    redraws: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Thresholds":
        try:
            return cls(str(d["family"]), int(d["n"]), int(d["reps"]), float(d["r2_5th"]),
                       float(d["ks_95th"]), int(d["seed"]), int(d.get("redraws", 0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise KnockError(f"malformed thresholds record: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "Thresholds":
        return cls.from_dict(json.loads(Path(path).read_text()))


CDFLike = Union[Model, Callable[[np.ndarray], np.ndarray]]


def empirical_cdf(data) -> EmpiricalCDF:
    x = np.sort(_values(data))
    n = x.size
    if n == 0:
        raise KnockError("empirical CDF of an empty sample")
    # tied values all take the step of their last occurrence
    last = np.searchsorted(x, x, side="right")
    return EmpiricalCDF(x, last / n)


def _model_cdf(model_cdf: CDFLike, x: np.ndarray) -> np.ndarray:
    if isinstance(model_cdf, (LognormalParams, MixtureParams)):
        return np.asarray(model_cdf.cdf(x), dtype=np.float64)
    return np.asarray(model_cdf(x), dtype=np.float64)


def r_squared(ecdf: EmpiricalCDF, model_cdf: CDFLike) -> float:
    y = ecdf.steps
    yhat = _model_cdf(model_cdf, ecdf.points)
    sst = float(np.sum((y - y.mean()) ** 2))
    sse = float(np.sum((y - yhat) ** 2))
    if sst == 0.0:
        # single distinct value: every step is 1
        return 1.0 if sse == 0.0 else -math.inf
    return (sst - sse) / sst


def ks_distance(ecdf: EmpiricalCDF, model_cdf: CDFLike) -> float:
    """Exact sup of |ECDF - F| over the ECDF step function."""
    f = _model_cdf(model_cdf, ecdf.points)
    n = f.size
    ranks = np.arange(n + 1) / n
    return float(max(np.max(np.abs(ranks[1:] - f)), np.max(np.abs(ranks[:-1] - f))))


def scores(data, model: CDFLike) -> FitScores:
    e = empirical_cdf(data)
    return FitScores(r_squared(e, model), ks_distance(e, model))


def acf(data, max_lag: int) -> np.ndarray:
    """Sample autocorrelation r_0..r_max_lag about the full-sample mean."""
    x = np.ascontiguousarray(_values(data))
    if max_lag < 0 or x.size < max_lag + 2:
        raise KnockError(f"need at least max_lag + 2 = {max_lag + 2} samples, got {x.size}")
    if not np.ptp(x) > 0:
        raise DegeneracyError("ACF of a constant series is undefined")
    return np.asarray(_backend.acf(x, int(max_lag)))


def acf_bounds(n: int, alpha: float = 0.05) -> float:
    if n < 2:
        raise KnockError("ACF bounds need n >= 2")
    if not 0 < alpha < 1:
        raise KnockError("alpha must lie in (0, 1)")
    return float(ndtri(1.0 - alpha / 2.0) / math.sqrt(n))


def nearest_rank(values, pct: float) -> float:
    """Nearest-rank percentile: the ceil(pct/100 * N)-th smallest value."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    k = max(1, math.ceil(pct / 100.0 * v.size))
    return float(v[k - 1])


def _fit_log(y: np.ndarray, family: str, cfg: EMConfig) -> Model:
    if family == "lognormal":
        mu = float(np.mean(y))
        return LognormalParams(mu, math.sqrt(float(np.mean((y - mu) ** 2))))
    a, m1, v1, m2, v2 = em_log_space(y, cfg)[:5]
    return MixtureParams.from_values(a, m1, math.sqrt(v1), m2, math.sqrt(v2))


def replicate_scores(family: str, truth: Model, n: int, seed: int, index: int,
                     cfg: EMConfig) -> tuple[float, float, int]:
    """Sample, refit and score one Monte Carlo replicate.

    Returns ``(r2, ks, redraws)``.  A replicate whose EM collapses is redrawn
    from the stream ``(seed, index, attempt)``.
    """
    steps = np.arange(1, n + 1) / n
    for attempt in range(MAX_REDRAWS + 1):
        key = [seed, index] if attempt == 0 else [seed, index, attempt]
        rng = np.random.default_rng(key)
        y = np.sort(sample_log_mixture(truth, n, rng))
        try:
            model = _fit_log(y, family, cfg)
        except DegeneracyError:
            continue
        r2, ks = _backend.gof_scores(steps, np.ascontiguousarray(model.cdf_of_log(y)))
        return float(r2), float(ks), attempt
    raise DegeneracyError(f"replicate {index} collapsed {MAX_REDRAWS + 1} times")


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def mc_scores(family: str, truth: Model, n: int, reps: int, seed: int,
              cfg: EMConfig | None = None, threads: int | None = None) -> tuple[np.ndarray, np.ndarray, int]:
    if family not in ("lognormal", "mixture"):
        raise KnockError(f"unknown family {family!r}")
    if reps < 1 or n < 10:
        raise KnockError("need reps >= 1 and n >= 10")
    cfg = cfg or EMConfig()
    threads = threads or thread_count()

    def one(i):
        return replicate_scores(family, truth, n, seed, i, cfg)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            out = list(pool.map(one, range(reps)))
    else:
        out = [one(i) for i in range(reps)]
    arr = np.array(out, dtype=np.float64)
    return arr[:, 0], arr[:, 1], int(arr[:, 2].sum())


def mc_thresholds(family: str, true_params: Model | None = None, n: int = 1116, reps: int = 10000,
                  seed: int = 0, cfg: EMConfig | None = None, threads: int | None = None) -> Thresholds:
    """95% acceptance cutoffs for fits of ``family`` on samples of size ``n``.

    Each replicate samples ``n`` points from ``true_params``, refits the same
    family and scores the fit; the 5th-percentile R^2 and 95th-percentile KS
    across replicates are returned.
    """
    if true_params is None:
        true_params = CANONICAL_LOGNORMAL if family == "lognormal" else CANONICAL_MIXTURE
    r2, ks, redraws = mc_scores(family, true_params, n, reps, seed, cfg, threads)
    return Thresholds(family, n, reps, nearest_rank(r2, 5), nearest_rank(ks, 95), seed, redraws)


@dataclass
class FitReport:
    label: str
    family: str
    model: Model
    scores: FitScores
    r2_ok: bool
    ks_ok: bool
    thresholds: Thresholds

    @property
    def accepted(self) -> bool:
        return self.r2_ok and self.ks_ok

    def to_dict(self) -> dict:
        return {"label": self.label, "family": self.family, "model": self.model.to_dict(),
                "r2": self.scores.r2, "ks": self.scores.ks,
                "r2_threshold": self.thresholds.r2_5th, "ks_threshold": self.thresholds.ks_95th,
                "r2_ok": self.r2_ok, "ks_ok": self.ks_ok, "verdict": "accept" if self.accepted else "reject",
                "thresholds": self.thresholds.to_dict()}


def fit_report(data, family: str, thresholds: Thresholds, cfg: EMConfig | None = None) -> FitReport:
    if thresholds.family != family:
        raise KnockError(f"thresholds were calibrated for {thresholds.family}, not {family}")
    model = fit(data, family, cfg)
    sc = scores(data, model)
    label = getattr(data, "label", "data")
    return FitReport(label, family, model, sc, sc.r2 >= thresholds.r2_5th, sc.ks <= thresholds.ks_95th,
                     thresholds)


def bootstrap_thresholds(data, family: str, n: int | None = None, reps: int = 1000, seed: int = 0,
                         cfg: EMConfig | None = None) -> Thresholds:
    """Thresholds calibrated at the parameters fitted to ``data`` itself."""
    x = _values(data)
    return mc_thresholds(family, fit(x, family, cfg), n or x.size, reps, seed, cfg)
