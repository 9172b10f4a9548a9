from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd


@dataclass
class RunLengthResult:
    """Mean run length over uncensored traces; censored traces are counted, never dropped."""
    mean: float
    uncensored: int
    censored: int
    stderr: float = float("nan")

    @property
    def defined(self) -> bool:
        return self.uncensored > 0


@dataclass
class RunSummary:
    arl0: Optional[RunLengthResult] = None
    arl1: Optional[RunLengthResult] = None
    energy: float = 0.0
    degradation: float = 0.0
    inter_alarm: List[int] = field(default_factory=list)
    detection_times: List[Optional[int]] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return asdict(self)


def detection_time(alarms: Sequence[int], tau: int, start: int = 0) -> Optional[int]:
    """First time index t >= tau with an alarm; alarms[i] is the flag at time start + i."""
    alarms = np.asarray(alarms)
    first = max(tau - start, 0)
    hits = np.flatnonzero(alarms[first:])
    if hits.size == 0:
        return None
    return int(start + first + hits[0])


def _stderr(values: np.ndarray) -> float:
    if values.size < 2:
        return float("nan")
    return float(np.std(values, ddof=1) / np.sqrt(values.size))


def arl1(alarm_traces: Sequence[Sequence[int]], tau: int, start: int = 0) -> RunLengthResult:
    """Average detection delay T_d - tau; an alarm at the onset scores 0, one sample later scores 1."""
    return summarize_delays([detection_time(trace, tau, start) for trace in alarm_traces], tau)


def summarize_delays(detection_times: Sequence[Optional[int]], tau: int) -> RunLengthResult:
    """Delays T_d - tau of the runs that detected; None marks a censored run."""
    delays = [t_d - tau for t_d in detection_times if t_d is not None]
    censored = sum(1 for t_d in detection_times if t_d is None)
    delays = np.asarray(delays, dtype=float)
    mean = float(np.mean(delays)) if delays.size else float("nan")
    return RunLengthResult(mean=mean, uncensored=int(delays.size), censored=censored, stderr=_stderr(delays))


def arl0(nominal_traces: Sequence[Sequence[int]]) -> RunLengthResult:
    """
    In-control average run length with right-censoring: total observed steps up to the first false alarm
    (or the end of the trace) divided by the number of traces that alarmed.
    """
    observed = 0
    lengths = []
    censored = 0
    for trace in nominal_traces:
        hits = np.flatnonzero(np.asarray(trace))
        if hits.size == 0:
            censored += 1
            observed += len(trace)
        else:
            lengths.append(hits[0] + 1)
            observed += hits[0] + 1
    if not lengths:
        return RunLengthResult(mean=float("nan"), uncensored=0, censored=censored)
    lengths = np.asarray(lengths, dtype=float)
    return RunLengthResult(mean=observed / lengths.size, uncensored=int(lengths.size), censored=censored,
                           stderr=_stderr(lengths))


def energy(phis: Sequence) -> float:
    phis = np.asarray(phis, dtype=float)
    if phis.size == 0:
        return 0.0
    return float(np.sum(np.abs(phis)))


def degradation(y_wom: Sequence, y: Sequence) -> float:
    """Mean per-step Euclidean distance between the un-watermarked shadow and the real output."""
    y_wom = np.asarray(y_wom, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        return 0.0
    diff = (y_wom - y).reshape(len(y), -1)
    return float(np.mean(np.linalg.norm(diff, axis=1)))


def inter_alarm_intervals(alarms: Sequence[int], tau: int, start: int = 0, times: Optional[Sequence[int]] = None) -> List[int]:
    """Gaps between consecutive alarms at or after tau; times gives the time index of each flag when not contiguous."""
    flags = np.flatnonzero(np.asarray(alarms))
    times = flags + start if times is None else np.asarray(times)[flags]
    times = times[times >= tau]
    return [int(gap) for gap in np.diff(times)]


def sweep(variances: Sequence[float], episodes: int, evaluate: Callable[[float, int], Dict[str, float]]) -> pd.DataFrame:
    """
    Trade-off table: one row per constant variance with Monte-Carlo means and standard errors.

    evaluate(U, episode) returns {'detection_belief': ..., 'degradation': ...} for one replication.
    """
    rows = []
    for U in sorted(float(v) for v in variances):
        results = [evaluate(U, episode) for episode in range(episodes)]
        beliefs = np.asarray([r["detection_belief"] for r in results], dtype=float)
        degradations = np.asarray([r["degradation"] for r in results], dtype=float)
        rows.append({
            "U": U,
            "detection_belief_mean": float(np.mean(beliefs)),
            "detection_belief_se": _stderr(beliefs),
            "degradation_mean": float(np.mean(degradations)),
            "degradation_se": _stderr(degradations),
            "episodes": episodes,
        })
    return pd.DataFrame(rows, columns=["U", "detection_belief_mean", "detection_belief_se",
                                       "degradation_mean", "degradation_se", "episodes"])
