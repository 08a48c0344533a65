"""Bayesian knock-state estimation and the spark-advance law.

A bank of mixed-lognormal models, one per knock state (very low ...
very high), turns a window of recent KI measurements into a posterior over
states; the spark command moves by the posterior-weighted sum of per-state
deltas.
"""
from __future__ import annotations

import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from knockstat.distfit import MixtureParams, log_pdf
from knockstat.errors import DomainError, KnockError

log = logging.getLogger(__name__)



@dataclass(frozen=True)
class KnockState:
    label: str
    model: MixtureParams
    spark_anchor: float  # deg BTDC


@dataclass(frozen=True)
class StateBank:
    """Knock states ordered from least to most severe."""

    states: tuple[KnockState, ...]
    action_weights: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "action_weights", tuple(float(w) for w in self.action_weights))
        if len(self.states) < 2:
            raise KnockError("a state bank needs at least 2 states")
        if len(self.action_weights) != len(self.states):
            raise KnockError("one action weight per state is required")
        labels = [s.label for s in self.states]
        if len(set(labels)) != len(labels):
            raise KnockError("state labels must be unique")
        # sorted by severity, so earlier spark (larger BTDC) comes last
        anchors = [s.spark_anchor for s in self.states]
        if any(b <= a for a, b in zip(anchors, anchors[1:])):
            raise KnockError("spark anchors must increase with knock severity")

    def __len__(self):
        return len(self.states)

    @classmethod
    def from_records(cls, records: Sequence[dict]) -> "StateBank":
        try:
            states = [KnockState(str(r["label"]),
                                 MixtureParams.from_values(r["a"], r["mu1"], r["sigma1"], r["mu2"], r["sigma2"]),
                                 float(r["spark_anchor_btdc"]))
                      for r in records]
            weights = [float(r["weight_deg"]) for r in records]
        except (KeyError, TypeError, ValueError) as exc:
            raise KnockError(f"malformed state-bank record: {exc}") from exc
        return cls(tuple(states), tuple(weights))

    def to_records(self) -> list[dict]:
        out = []
        for s, w in zip(self.states, self.action_weights):
            a, m1, s1, m2, s2 = s.model.values()
            out.append({"label": s.label, "a": a, "mu1": m1, "sigma1": s1, "mu2": m2, "sigma2": s2,
                        "spark_anchor_btdc": s.spark_anchor, "weight_deg": w})
        return out

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_records(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "StateBank":
        return cls.from_records(json.loads(Path(path).read_text()))


def default_weights(n_states: int) -> tuple[float, ...]:
    """+2 deg for the mildest state to -2 deg for the most severe, linear between."""
    return tuple(float(w) for w in np.linspace(2.0, -2.0, n_states))


@dataclass(frozen=True)
class Posterior:
    probs: np.ndarray
    # set when every state likelihood underflowed and the prior was returned
    fallback: bool = False

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", p)
        if p.ndim != 1 or np.any(p < 0) or np.any(p > 1) or abs(p.sum() - 1.0) > 1e-9:
            raise KnockError(f"probabilities are not on the simplex: {p}")

    @classmethod
    def uniform(cls, n: int) -> "Posterior":
        return cls(np.full(n, 1.0 / n))


def state_likelihoods(bank: StateBank, window) -> np.ndarray:
    """ln P(window | state) for every state, cycles treated as independent."""
    x = np.asarray(window, dtype=np.float64).ravel()
    if x.size == 0:
        raise KnockError("empty KI window")
    if not np.all(x > 0):
        raise DomainError("KI values must be > 0")
    return np.array([float(np.sum(log_pdf(x, s.model))) for s in bank.states])


def posterior_from_loglik(loglik: np.ndarray, prior: Posterior) -> Posterior:
    """Bayes update in log space with a max shift."""
    with np.errstate(divide="ignore"):
        logp = np.log(prior.probs) + np.asarray(loglik, dtype=np.float64)
    if not np.any(np.isfinite(logp)):
        log.warning("all posterior mass underflowed; keeping the prior")
        return Posterior(prior.probs.copy(), fallback=True)
    z = logsumexp(logp)
    p = np.exp(logp - z)
    p /= p.sum()
    return Posterior(p)


def posterior_update(bank: StateBank, prior: Posterior, window) -> Posterior:
    if len(prior.probs) != len(bank):
        raise KnockError("prior length does not match the number of states")
    return posterior_from_loglik(state_likelihoods(bank, window), prior)


def spark_delta(posterior: Posterior, bank: StateBank) -> float:
    return float(np.dot(posterior.probs, bank.action_weights))


@dataclass
class ControllerState:
    spark: float
    prior: Posterior
    window: deque = field(default_factory=lambda: deque(maxlen=1))
    limits: tuple[float, float] = (0.0, 40.0)
    forgetting: float = 0.9

    def __post_init__(self):
        lo, hi = self.limits
        if not lo <= self.spark <= hi:
            raise KnockError(f"spark {self.spark} outside limits {self.limits}")
        if self.window.maxlen is None or self.window.maxlen < 1:
            raise KnockError("KI window must have a capacity >= 1")
        if not 0.0 <= self.forgetting <= 1.0:
            raise KnockError("forgetting factor must lie in [0, 1]")

    @classmethod
    def initial(cls, n_states: int, spark: float, window: int = 1,
                limits: tuple[float, float] = (0.0, 40.0), forgetting: float = 0.9) -> "ControllerState":
        return cls(spark, Posterior.uniform(n_states), deque(maxlen=window), limits, forgetting)


@dataclass(frozen=True)
class StepResult:
    state: ControllerState
    applied_delta: float
    posterior: Posterior


def controller_step(state: ControllerState, bank: StateBank, new_ki: float) -> StepResult:
    """One control cycle; ``state`` is updated in place and also returned."""
    if not (new_ki > 0 and math.isfinite(new_ki)):
        raise DomainError(f"KI must be > 0, got {new_ki}")
    state.window.append(float(new_ki))
    post = posterior_update(bank, state.prior, state.window)
    lo, hi = state.limits
    target = min(max(state.spark + spark_delta(post, bank), lo), hi)
    applied = target - state.spark
    state.spark = target
    n = len(bank)
    lam = state.forgetting
    blended = lam * post.probs + (1.0 - lam) / n
    state.prior = Posterior(blended / blended.sum())
    return StepResult(state, applied, post)
