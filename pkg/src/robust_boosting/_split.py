"""Reduction of per-coordinate split summaries into one split."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import RobustBoostingError


class NoValidThreshold(RobustBoostingError):
    """No candidate threshold of a coordinate yields a usable split."""


@dataclass(frozen=True)
class CandidateSplit:
    coord: int
    threshold: float
    w_l: float
    w_r: float
    loss: float


RUN_RTOL = 1e-12

# summary row layout produced by the kernels
BEST, PREV, FIRST, LAST, NEXT, MID, MID_WL, MID_WR = range(8)


def choose_split(summary: np.ndarray,
                 evaluate: Callable[[int, np.ndarray], np.ndarray]) -> Optional[CandidateSplit]:
    """Pick the best coordinate (ties: lowest index) and refine its threshold.

    Within the first run of equal-loss candidates the half-way points to the
    neighbouring candidates are tried as well, and the middle of the equal
    loss span is returned when it keeps the loss; otherwise the middle
    candidate of the run is used.  ``evaluate(j, thresholds)`` returns rows
    (loss, w_l, w_r).
    """
    best = summary[:, BEST]
    if not np.isfinite(best).any():
        return None
    j = int(np.argmin(best))
    row = summary[j]
    loss = row[BEST]
    tol = loss + RUN_RTOL * abs(loss)
    lo, hi = row[FIRST], row[LAST]
    probes = []
    if not np.isnan(row[PREV]):
        probes.append(0.5 * (row[PREV] + lo))
    if not np.isnan(row[NEXT]):
        probes.append(0.5 * (hi + row[NEXT]))
    if probes:
        res = evaluate(j, np.array(probes))
        k = 0
        if not np.isnan(row[PREV]):
            if res[k, 0] <= tol:
                lo = probes[k]
            k += 1
        if not np.isnan(row[NEXT]) and res[k, 0] <= tol:
            hi = probes[k]
    mid = 0.5 * (lo + hi)
    res = evaluate(j, np.array([mid]))
    if res[0, 0] <= tol:
        return CandidateSplit(j, float(mid), float(res[0, 1]), float(res[0, 2]), float(res[0, 0]))
    return CandidateSplit(j, float(row[MID]), float(row[MID_WL]), float(row[MID_WR]), float(loss))


def summarise_coordinate(cand: np.ndarray, losses: np.ndarray, wls: np.ndarray,
                         wrs: np.ndarray) -> np.ndarray:
    from ._kernels_numpy import _summarise

    return _summarise(cand, losses, wls, wrs)
