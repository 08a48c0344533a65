"""Cylinder-pressure traces and the per-cycle knock-intensity metric.

KI for one cycle: take the crank-angle window ``[spark + 20, spark + 110]``
degrees after the spark event, band-pass the pressure (3-25 kHz by default)
and report the largest absolute filtered value inside the window.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import signal

from knockstat.errors import FormatError, KnockError, PreconditionError

KI_FLOOR = 1e-6  # bar
ANGLE_TOL = 1e-9  # deg
TREND_MOMENTS = (0, 2, 4, 6)


@dataclass
class PressureTrace:
    """One combustion cycle.

    ``crank_angle`` is in degrees relative to firing TDC (negative before
    TDC); ``spark_timing`` is in degrees BTDC, so the spark event sits at
    crank angle ``-spark_timing``.
    """

    cycle_id: int
    crank_angle: np.ndarray
    pressure: np.ndarray
    rpm: float
    spark_timing: float

    def __post_init__(self):
        self.crank_angle = np.asarray(self.crank_angle, dtype=np.float64)
        self.pressure = np.asarray(self.pressure, dtype=np.float64)
        if self.crank_angle.shape != self.pressure.shape or self.crank_angle.size < 2:
            raise FormatError(f"cycle {self.cycle_id}: need >= 2 angle/pressure pairs of equal length")
        if not self.rpm > 0:
            raise FormatError(f"cycle {self.cycle_id}: rpm must be > 0")
        steps = np.diff(self.crank_angle)
        if np.any(steps <= 0):
            raise FormatError(f"cycle {self.cycle_id}: crank angles must be strictly increasing")
        if np.max(np.abs(steps - steps[0])) > ANGLE_TOL:
            raise FormatError(f"cycle {self.cycle_id}: crank-angle spacing is not uniform")

    @property
    def resolution(self) -> float:
        return float((self.crank_angle[-1] - self.crank_angle[0]) / (self.crank_angle.size - 1))


@dataclass
class KIDataset:
    """Per-cycle KI values of one operating point, in acquisition order."""

    label: str
    ki: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.ki = np.asarray(self.ki, dtype=np.float64).ravel()
        if self.ki.size and not np.all(self.ki > 0):
            raise KnockError(f"{self.label}: KI values must be > 0")

    def __len__(self) -> int:
        return self.ki.size


@dataclass(frozen=True)
class FilterSpec:
    low_cut: float = 3000.0
    high_cut: float = 25000.0
    attenuation_floor: float = 40.0
    transition_fraction: float = 0.15

    def __post_init__(self):
        if not (0 < self.low_cut < self.high_cut):
            raise KnockError(f"band must satisfy 0 < low < high, got {self.low_cut}:{self.high_cut}")
        if not self.attenuation_floor > 0:
            raise KnockError("attenuation floor must be > 0 dB")
        if not (0 < self.transition_fraction < 1):
            raise KnockError("transition fraction must lie in (0, 1)")


# ---------------------------------------------------------------- file I/O

def _parse_header(line: str, meta: dict) -> None:
    body = line.lstrip("#").strip()
    if "=" not in body:
        return
    key, _, val = body.partition("=")
    try:
        meta[key.strip()] = float(val)
    except ValueError as exc:
        raise FormatError(f"bad header value {line.strip()!r}") from exc


def parse_traces(text: str) -> list[PressureTrace]:
    meta: dict = {}
    blocks: dict[int, tuple[list, list]] = {}
    order: list[int] = []
    for lineno, raw in enumerate(io.StringIO(text), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            _parse_header(line, meta)
            continue
        parts = line.split(",")
        if parts[0].strip() == "cycle_id":
            continue
        if len(parts) != 3:
            raise FormatError(f"line {lineno}: expected cycle_id,crank_angle_deg,pressure_bar")
        try:
            cyc, ang, p = int(parts[0]), float(parts[1]), float(parts[2])
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}") from exc
        if cyc not in blocks:
            blocks[cyc] = ([], [])
            order.append(cyc)
        blocks[cyc][0].append(ang)
        blocks[cyc][1].append(p)
    for key in ("rpm", "spark_btdc"):
        if key not in meta:
            raise FormatError(f"missing '# {key}=' header")
    traces = [PressureTrace(c, blocks[c][0], blocks[c][1], meta["rpm"], meta["spark_btdc"])
              for c in order]
    res = meta.get("resolution_deg")
    for t in traces:
        if res is not None and abs(t.resolution - res) > 1e-6:
            raise FormatError(f"cycle {t.cycle_id}: spacing {t.resolution} != resolution_deg {res}")
    return traces


def load_traces(path, format: str = "csv") -> list[PressureTrace]:
    if format != "csv":
        raise FormatError(f"unsupported trace format {format!r}")
    try:
        text = Path(path).read_text()
    except FileNotFoundError as exc:
        raise FormatError(f"no such file: {path}") from exc
    return parse_traces(text)


def write_traces(traces: Sequence[PressureTrace], path) -> None:
    first = traces[0]
    with open(path, "w", newline="") as fh:
        fh.write(f"# rpm={float(first.rpm)!r}\n# spark_btdc={float(first.spark_timing)!r}\n")
        fh.write(f"# resolution_deg={first.resolution!r}\n")
        fh.write("cycle_id,crank_angle_deg,pressure_bar\n")
        for t in traces:
            for a, p in zip(t.crank_angle, t.pressure):
                fh.write(f"{t.cycle_id},{float(a)!r},{float(p)!r}\n")


def write_ki_csv(data: KIDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cycle", "ki_bar"])
        for i, v in enumerate(data.ki):
            w.writerow([i, repr(float(v))])


def read_ki_csv(path, label: str | None = None) -> KIDataset:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError as exc:
        raise FormatError(f"no such file: {path}") from exc
    if not rows or [c.strip() for c in rows[0]] != ["cycle", "ki_bar"]:
        raise FormatError(f"{path}: expected header 'cycle,ki_bar'")
    try:
        ki = [float(r[1]) for r in rows[1:] if r]
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return KIDataset(label or Path(path).stem, np.array(ki))


# ---------------------------------------------------------------- signal path

def resample_to_time(trace: PressureTrace) -> tuple[np.ndarray, float]:
    """Relabel crank-angle samples as time samples at constant speed."""
    deg_per_s = trace.rpm / 60.0 * 360.0
    return trace.pressure.copy(), deg_per_s / trace.resolution


@lru_cache(maxsize=64)
def design_bandpass(sample_rate: float, spec: FilterSpec) -> np.ndarray:
    """Symmetric (linear-phase) Kaiser-window band-pass taps.

    The transition width is set by the narrower of the two edges.  After
    the window design the taps are projected so that ``sum(h * k**m) = 0``
    for even ``m <= 6`` about the centre tap; with symmetry this makes the
    filter annihilate polynomial trends up to degree 7, so the slow
    compression curve leaves no residue in the knock band.
    """
    nyq = sample_rate / 2.0
    if not nyq > spec.high_cut:
        raise PreconditionError(
            f"Nyquist {nyq:.1f} Hz must exceed the high cut {spec.high_cut:.1f} Hz")
    width = 2.0 * spec.transition_fraction * min(spec.low_cut, spec.high_cut)
    # margin for the moment projection, which lifts the stop-band slightly
    atten = spec.attenuation_floor + 10.0
    numtaps, beta = signal.kaiserord(atten, width / nyq)
    numtaps |= 1
    h = signal.firwin(numtaps, [spec.low_cut, spec.high_cut], window=("kaiser", beta),
                      pass_zero=False, fs=sample_rate)
    k = np.arange(numtaps) - numtaps // 2
    basis = np.vstack([k.astype(np.float64) ** m for m in TREND_MOMENTS]).T
    win = signal.get_window(("kaiser", beta), numtaps, fftbins=False)
    wb = basis * win[:, None]
    coef = np.linalg.solve(basis.T @ wb, basis.T @ h)
    h = h - wb @ coef
    h.flags.writeable = False
    return h


def bandpass_filter(samples, sample_rate: float, spec: FilterSpec = FilterSpec()) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    h = design_bandpass(float(sample_rate), spec)
    pad = min(h.size, x.size - 1)
    xp = np.pad(x, pad, mode="reflect") if pad > 0 else x
    y = np.convolve(xp, h, mode="same")
    return y[pad: pad + x.size]


def knock_window(trace: PressureTrace, start_offset: float = 20.0, end_offset: float = 110.0):
    """Crank-angle bounds (deg ATDC) of the knock window."""
    spark_angle = -trace.spark_timing
    return spark_angle + start_offset, spark_angle + end_offset


def extract_ki(trace: PressureTrace, spec: FilterSpec = FilterSpec(),
               window_start_offset: float = 20.0, window_end_offset: float = 110.0) -> float:
    lo, hi = knock_window(trace, window_start_offset, window_end_offset)
    ca = trace.crank_angle
    if lo < ca[0] - ANGLE_TOL or hi > ca[-1] + ANGLE_TOL or lo >= hi:
        raise PreconditionError(
            f"cycle {trace.cycle_id}: window [{lo}, {hi}] deg is outside the trace [{ca[0]}, {ca[-1]}]")
    samples, fs = resample_to_time(trace)
    filtered = bandpass_filter(samples, fs, spec)
    mask = (ca >= lo - ANGLE_TOL) & (ca <= hi + ANGLE_TOL)
    return max(float(np.max(np.abs(filtered[mask]))), KI_FLOOR)


def extract_dataset(traces: Iterable[PressureTrace], spec: FilterSpec = FilterSpec(),
                    window_start_offset: float = 20.0, window_end_offset: float = 110.0,
                    label: str = "traces") -> KIDataset:
    traces = list(traces)
    ki = [extract_ki(t, spec, window_start_offset, window_end_offset) for t in traces]
    meta = {}
    if traces:
        meta = {"rpm": traces[0].rpm, "spark_btdc": traces[0].spark_timing}
    return KIDataset(label, np.array(ki), meta)


def frequency_response(h: np.ndarray, freqs, sample_rate: float) -> np.ndarray:
    """Magnitude of the zero-phase response at ``freqs`` (Hz)."""
    _, resp = signal.freqz(h, worN=np.asarray(freqs, dtype=np.float64), fs=sample_rate)
    return np.abs(resp)
