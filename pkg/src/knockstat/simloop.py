"""Synthetic spark-indexed engine and the closed-loop harness.

The engine is not a combustion model: KI at a given spark timing is a draw
from a mixed lognormal whose parameters are interpolated between anchor
spark timings.  The shipped demo anchors are illustrative values only.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from knockstat.distfit import MixtureParams, sample_log_mixture
from knockstat.errors import KnockError
from knockstat.knockctl import (ControllerState, KnockState, Posterior, StateBank, controller_step,
                                default_weights)

DEMO_ANCHORS = (
    # spark deg BTDC, (a, mu1, sigma1, mu2, sigma2) in ln(bar)
    (12.0, (0.95, -2.3, 0.30, -1.2, 0.50)),
    (15.0, (0.85, -2.2, 0.30, -0.9, 0.50)),
    (17.0, (0.70, -2.1, 0.30, -0.6, 0.55)),
    (19.0, (0.50, -2.0, 0.32, -0.3, 0.60)),
    (21.0, (0.30, -1.9, 0.35, 0.0, 0.60)),
)
DEMO_LABELS = ("very low", "mildly low", "borderline", "mildly high", "very high")


@dataclass(frozen=True)
class EngineModel:
    anchors: tuple[tuple[float, MixtureParams], ...]
    seed: int = 0

    def __post_init__(self):
        anchors = tuple((float(s), p) for s, p in self.anchors)
        object.__setattr__(self, "anchors", anchors)
        if len(anchors) < 2:
            raise KnockError("engine model needs at least 2 anchors")
        sparks = [s for s, _ in anchors]
        if any(b <= a for a, b in zip(sparks, sparks[1:])):
            raise KnockError("anchor spark timings must be strictly increasing")
        means = [p.log_mean() for _, p in anchors]
        if any(b < a for a, b in zip(means, means[1:])):
            raise KnockError("log-space KI mean must not decrease as spark advances")

    @property
    def sparks(self) -> np.ndarray:
        return np.array([s for s, _ in self.anchors])

    def to_dict(self) -> dict:
        return {"seed": self.seed,
                "anchors": [{"spark_btdc": s, **{k: v for k, v in p.to_dict().items() if k != "family"}}
                            for s, p in self.anchors]}

    @classmethod
    def from_dict(cls, d: dict) -> "EngineModel":
        try:
            anchors = [(float(r["spark_btdc"]),
                        MixtureParams.from_values(r["a"], r["mu1"], r["sigma1"], r["mu2"], r["sigma2"]))
                       for r in d["anchors"]]
            return cls(tuple(anchors), int(d.get("seed", 0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise KnockError(f"malformed engine model: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "EngineModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def demo_engine(seed: int = 0) -> EngineModel:
    return EngineModel(tuple((s, MixtureParams.from_values(*v)) for s, v in DEMO_ANCHORS), seed)


def bank_from_engine(model: EngineModel, labels: Sequence[str] | None = None,
                     weights: Sequence[float] | None = None) -> StateBank:
    """A state bank whose state models are exactly the engine anchors."""
    n = len(model.anchors)
    if labels is None:
        labels = DEMO_LABELS if n == len(DEMO_LABELS) else [f"M{i + 1}" for i in range(n)]
    weights = default_weights(n) if weights is None else weights
    states = tuple(KnockState(lab, p, s) for lab, (s, p) in zip(labels, model.anchors))
    return StateBank(states, tuple(weights))


def engine_response(model: EngineModel, spark: float) -> MixtureParams:
    """Componentwise linear interpolation between bracketing anchors."""
    sparks = model.sparks
    if spark <= sparks[0]:
        return model.anchors[0][1]
    if spark >= sparks[-1]:
        return model.anchors[-1][1]
    j = int(np.searchsorted(sparks, spark, side="right"))
    s0, p0 = model.anchors[j - 1]
    s1, p1 = model.anchors[j]
    if spark == s0:
        return p0
    t = (spark - s0) / (s1 - s0)
    vals = [(1.0 - t) * u + t * v for u, v in zip(p0.values(), p1.values())]
    return MixtureParams.from_values(*vals)


def cycle_rng(seed: int, cycle: int) -> np.random.Generator:
    return np.random.default_rng([seed, cycle])


def simulate_cycle(model: EngineModel, spark: float, rng: np.random.Generator) -> float:
    return float(np.exp(sample_log_mixture(engine_response(model, spark), 1, rng)[0]))


@dataclass
class CycleRecord:
    cycle: int
    spark: float  # timing the cycle fired at
    ki: float
    posterior: np.ndarray
    delta: float


@dataclass
class Trajectory:
    records: list[CycleRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def write_csv(self, path) -> None:
        k = len(self.records[0].posterior) if self.records else 0
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cycle", "ki_bar", "spark_btdc", "delta_deg"] + [f"p{i + 1}" for i in range(k)])
            for r in self.records:
                w.writerow([r.cycle, repr(r.ki), repr(r.spark), repr(r.delta)]
                           + [repr(float(p)) for p in r.posterior])


def run_closed_loop(model: EngineModel, bank: StateBank, ctrl0: ControllerState, cycles: int) -> Trajectory:
    """Fire ``cycles`` cycles, feeding each KI back into the controller.

    ``ctrl0`` is not modified.
    """
    if cycles < 0:
        raise KnockError("cycles must be >= 0")
    ctrl = ControllerState(ctrl0.spark, Posterior(ctrl0.prior.probs.copy()),
                           type(ctrl0.window)(ctrl0.window, maxlen=ctrl0.window.maxlen),
                           ctrl0.limits, ctrl0.forgetting)
    traj = Trajectory()
    for i in range(cycles):
        spark = ctrl.spark
        ki = simulate_cycle(model, spark, cycle_rng(model.seed, i))
        step = controller_step(ctrl, bank, ki)
        traj.records.append(CycleRecord(i, spark, ki, step.posterior.probs, step.applied_delta))
    return traj


@dataclass(frozen=True)
class TrajectorySummary:
    mean_spark: float
    spark_std: float
    severe_fraction: float
    mean_ki: float


def trajectory_summary(t: Trajectory, severe_state_index: int = -1,
                       severe_prob_cut: float = 0.5) -> TrajectorySummary:
    if len(t) == 0:
        raise KnockError("empty trajectory")
    spark = t.column("spark")
    post = np.vstack([r.posterior for r in t.records])
    return TrajectorySummary(float(spark.mean()), float(spark.std()),
                             float(np.mean(post[:, severe_state_index] > severe_prob_cut)),
                             float(t.column("ki").mean()))


def tail(t: Trajectory, n: int) -> Trajectory:
    return Trajectory(t.records[-n:])
