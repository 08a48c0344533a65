import numpy as np
import pytest

from knockstat import gof
from knockstat.trace import PressureTrace

RPM = 1500.0
RES = 0.1  # deg -> 90 kHz at 1500 rpm


def compression_curve(angle):
    return 1.0 + 39.0 * np.exp(-(angle / 40.0) ** 2)


def burst(angle, centre, amplitude, freq=10_000.0, width=40.0, rpm=RPM, phase=0.0):
    """Hann-enveloped tone centred at ``centre`` deg; peak equals ``amplitude``."""
    t = (angle - centre) / (rpm / 60.0 * 360.0)
    env = np.where(np.abs(angle - centre) < width / 2,
                   0.5 * (1 + np.cos(2 * np.pi * (angle - centre) / width)), 0.0)
    return amplitude * env * np.cos(2 * np.pi * freq * t + phase)


def make_trace(pressure_fn=compression_curve, spark=20.0, rpm=RPM, res=RES, lo=-180.0, hi=180.0, cycle=0):
    n = int(round((hi - lo) / res)) + 1
    angle = lo + res * np.arange(n)
    return PressureTrace(cycle, angle, pressure_fn(angle), rpm, spark)


@pytest.fixture(scope="session")
def lognormal_thresholds():
    return gof.mc_thresholds("lognormal", None, n=1116, reps=10000, seed=2024)


@pytest.fixture(scope="session")
def mixture_thresholds():
    return gof.mc_thresholds("mixture", None, n=1116, reps=10000, seed=2024)


# (criterion, passed, detail) rows filled in by test_acceptance
ACCEPTANCE: list = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in sorted(ACCEPTANCE, key=lambda r: (int(r[0].split()[0].rstrip("ab")), r[0])):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {name}: {detail}")
